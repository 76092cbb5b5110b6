//! Compressed-sensing MRI: partially-sampled Fourier measurements.
//!
//! Forward model y = M . (F x + noise) with F the unitary 2-D DFT and M a
//! binary k-space mask. The data-fidelity proximal step is closed-form and
//! diagonal in the Fourier domain.

use crate::error::{Error, Result};
use crate::fft::{dft2, idft2};
use crate::rng::Rng;
use crate::tensor::Tensor;
use num_complex::Complex64;

#[derive(Clone, Debug)]
pub struct CsMriModel {
    /// Binary sampling pattern, DC at [0,0].
    pub mask: Tensor,
    pub noise_sigma: f64,
    /// Measured k-space, zero off-mask.
    pub y: Tensor,
}

impl CsMriModel {
    pub fn dims(&self) -> (usize, usize) {
        (self.mask.dims()[0], self.mask.dims()[1])
    }

    pub fn mask_count(&self) -> usize {
        self.mask.real().iter().filter(|&&v| v != 0.0).count()
    }
}

fn apply_mask(spec: &Tensor, mask: &Tensor) -> Tensor {
    let m = mask.real();
    let data = spec
        .complex()
        .iter()
        .zip(m)
        .map(|(v, &mv)| if mv != 0.0 { *v } else { Complex64::new(0.0, 0.0) })
        .collect();
    Tensor::from_complex(spec.dims(), data).unwrap()
}

/// Simulate a measurement: y = mask o (dft2(x) + complex Gaussian noise of
/// std `sigma` per component).
pub fn csmri_forward(x: &Tensor, mask: &Tensor, sigma: f64, rng: &mut Rng) -> Result<CsMriModel> {
    if mask.real().iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("empty sampling mask"));
    }
    if x.dims() != mask.dims() {
        return Err(Error::dims(format!(
            "image {:?} vs mask {:?}",
            x.dims(),
            mask.dims()
        )));
    }
    if sigma < 0.0 {
        return Err(Error::invalid("negative noise sigma"));
    }
    let mut spec = dft2(&x.promote())?;
    if sigma > 0.0 {
        let data = spec.complex_mut();
        for v in data.iter_mut() {
            *v += Complex64::new(sigma * rng.normal(), sigma * rng.normal());
        }
    }
    let y = apply_mask(&spec, mask);
    Ok(CsMriModel {
        mask: mask.clone(),
        noise_sigma: sigma,
        y,
    })
}

/// Zero-filled reconstruction: real part of the inverse transform of y,
/// clipped to [0, 1].
pub fn csmri_init(m: &CsMriModel) -> Result<Tensor> {
    Ok(idft2(&m.y)?.real_part().clip(0.0, 1.0))
}

/// Exact minimizer of 0.5*||y - M F x||^2 + (mu/2)*||x - v||^2 over complex x:
/// diagonal solve in the Fourier domain.
pub fn csmri_prox(v: &Tensor, m: &CsMriModel, mu: f64) -> Result<Tensor> {
    if mu <= 0.0 {
        return Err(Error::invalid(format!("penalty mu {mu} must be positive")));
    }
    let vc = v.promote();
    let mut spec = dft2(&vc)?;
    {
        let s = spec.complex_mut();
        let yv = m.y.complex();
        let mk = m.mask.real();
        for i in 0..s.len() {
            s[i] = (yv[i] + s[i] * mu) / (mk[i] + mu);
        }
    }
    idft2(&spec)
}

/// Gradient of D(x) = 0.5*||y - M F x||^2: F^H M (F x - y).
pub fn csmri_grad(x: &Tensor, m: &CsMriModel) -> Result<Tensor> {
    let spec = dft2(&x.promote())?;
    let masked = apply_mask(&spec, &m.mask);
    let resid = masked.sub(&m.y);
    idft2(&resid)
}

/// Data-fidelity value at x.
pub fn csmri_objective(x: &Tensor, m: &CsMriModel) -> Result<f64> {
    let spec = dft2(&x.promote())?;
    let masked = apply_mask(&spec, &m.mask);
    Ok(0.5 * masked.sub(&m.y).norm2().powi(2))
}

/// Forward operator for the AMP path: A x = mask o dft2(x).
pub fn csmri_apply(x: &Tensor, m: &CsMriModel) -> Result<Tensor> {
    Ok(apply_mask(&dft2(&x.promote())?, &m.mask))
}

/// Adjoint A^H z = idft2(mask o z).
pub fn csmri_adjoint(z: &Tensor, m: &CsMriModel) -> Result<Tensor> {
    idft2(&apply_mask(z, &m.mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_abs_diff;

    fn full_mask(n: usize) -> Tensor {
        Tensor::filled(&[n, n], 1.0)
    }

    fn random_image(rng: &mut Rng, n: usize) -> Tensor {
        Tensor::from_real(&[n, n], (0..n * n).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn full_mask_noise_free_measures_spectrum() {
        let mut rng = Rng::new(1);
        let x = random_image(&mut rng, 8);
        let m = csmri_forward(&x, &full_mask(8), 0.0, &mut rng).unwrap();
        let expected = dft2(&x.promote()).unwrap();
        assert!(max_abs_diff(&m.y, &expected) < 1e-12);
    }

    #[test]
    fn zero_image_zero_measurement() {
        let mut rng = Rng::new(2);
        let x = Tensor::zeros_real(&[8, 8]);
        let m = csmri_forward(&x, &full_mask(8), 0.0, &mut rng).unwrap();
        assert_eq!(m.y.max_abs(), 0.0);
        assert_eq!(csmri_init(&m).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn off_mask_entries_are_zero() {
        let mut rng = Rng::new(3);
        let x = random_image(&mut rng, 32);
        let mut mask_rng = Rng::new(7);
        let mask =
            super::super::masks::sampling_mask(super::super::masks::MaskKind::Radial, 32, 32, 0.25, &mut mask_rng)
                .unwrap();
        let m = csmri_forward(&x, &mask, 15.0 / 255.0, &mut rng).unwrap();
        for (yv, &mv) in m.y.complex().iter().zip(mask.real()) {
            if mv == 0.0 {
                assert_eq!(yv.norm(), 0.0);
            }
        }
    }

    #[test]
    fn empty_mask_rejected() {
        let mut rng = Rng::new(4);
        let x = Tensor::zeros_real(&[4, 4]);
        let mask = Tensor::zeros_real(&[4, 4]);
        assert!(csmri_forward(&x, &mask, 0.0, &mut rng).is_err());
    }

    #[test]
    fn init_recovers_image_under_full_mask() {
        let mut rng = Rng::new(5);
        let x = random_image(&mut rng, 16);
        let m = csmri_forward(&x, &full_mask(16), 0.0, &mut rng).unwrap();
        let x0 = csmri_init(&m).unwrap();
        assert!(max_abs_diff(&x0, &x) < 1e-10);
    }

    #[test]
    fn half_plane_mask_on_constant_halves_it() {
        // Half-plane row mask on a constant image keeps the DC coefficient;
        // the direct-DFT argument gives a constant of roughly c * coverage.
        // With rows [0, h/2) kept the zero-filled image has mean c/2.
        let c = 0.6;
        let x = Tensor::filled(&[8, 8], c);
        let mut mask = Tensor::zeros_real(&[8, 8]);
        for r in 0..4 {
            for col in 0..8 {
                mask.real_mut()[r * 8 + col] = 1.0;
            }
        }
        let mut rng = Rng::new(6);
        let m = csmri_forward(&x, &mask, 0.0, &mut rng).unwrap();
        // pre-clip zero-filled reconstruction
        let x0 = idft2(&m.y).unwrap().real_part();
        // constant image concentrates on DC (kept), so the reconstruction is
        // exactly the original: the "half" shows up only for images with
        // energy in the removed rows. Verify via the direct oracle instead.
        let spec = dft2(&x.promote()).unwrap();
        let kept = super::apply_mask(&spec, &mask);
        let oracle = idft2(&kept).unwrap().real_part();
        assert!(max_abs_diff(&x0, &oracle) < 1e-12);
        assert!((x0.mean() - c).abs() < 1e-12); // DC retained
    }

    #[test]
    fn prox_with_zero_coverage_mask_returns_v() {
        // a mask of zeros is rejected by forward; build the model directly
        let mask = Tensor::zeros_real(&[8, 8]);
        let m = CsMriModel {
            mask: mask.clone(),
            noise_sigma: 0.0,
            y: Tensor::zeros_complex(&[8, 8]),
        };
        let mut rng = Rng::new(7);
        let v = random_image(&mut rng, 8).promote();
        let out = csmri_prox(&v, &m, 0.5).unwrap();
        assert!(max_abs_diff(&out, &v) < 1e-12);
    }

    #[test]
    fn prox_full_mask_noise_free_averages() {
        // full mask, mu = 1, noise-free y from x*: output = (x* + v)/2
        let mut rng = Rng::new(8);
        let xstar = random_image(&mut rng, 8);
        let m = csmri_forward(&xstar, &full_mask(8), 0.0, &mut rng).unwrap();
        let v = random_image(&mut rng, 8);
        let out = csmri_prox(&v.promote(), &m, 1.0).unwrap();
        let expected = xstar.add(&v).scale(0.5).promote();
        assert!(max_abs_diff(&out, &expected) < 1e-10);
    }

    #[test]
    fn prox_rejects_nonpositive_mu() {
        let mask = full_mask(4);
        let m = CsMriModel {
            mask,
            noise_sigma: 0.0,
            y: Tensor::zeros_complex(&[4, 4]),
        };
        assert!(csmri_prox(&Tensor::zeros_complex(&[4, 4]), &m, 0.0).is_err());
    }

    #[test]
    fn grad_vanishes_at_consistent_point() {
        let mut rng = Rng::new(9);
        let x = random_image(&mut rng, 16);
        let m = csmri_forward(&x, &full_mask(16), 0.0, &mut rng).unwrap();
        let g = csmri_grad(&x.promote(), &m).unwrap();
        assert!(g.max_abs() < 1e-12);
    }
}
