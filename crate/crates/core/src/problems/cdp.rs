//! Phase retrieval from coded diffraction patterns.
//!
//! Four amplitude measurements y_i = |F(d_i o x)| through random unit-modulus
//! modulation masks d_i, with optional signal-dependent Gaussian noise on the
//! intensities. The data fidelity is the amplitude least-squares loss
//! D(x) = 0.5 * sum_i || |A_i x| - y_i ||^2.

use crate::error::{Error, Result};
use crate::fft::{dft2, idft2};
use crate::rng::Rng;
use crate::tensor::Tensor;
use num_complex::Complex64;

pub const CDP_MASKS: usize = 4;

#[derive(Clone, Debug)]
pub struct CdpModel {
    /// Unit-modulus modulation masks.
    pub masks: Vec<Tensor>,
    /// Non-negative measured amplitudes, one per mask.
    pub y: Vec<Tensor>,
    /// Noise ratio: intensities are perturbed by N(0, (alpha * |Ax|^2)^2).
    pub alpha: f64,
}

impl CdpModel {
    pub fn dims(&self) -> (usize, usize) {
        (self.masks[0].dims()[0], self.masks[0].dims()[1])
    }
}

fn mask_times(x: &Tensor, mask: &Tensor) -> Tensor {
    mask.hadamard(&x.promote())
}

/// A_i x = F (d_i o x).
pub fn cdp_apply(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    dft2(&mask_times(x, mask))
}

/// A_i^H u = conj(d_i) o F^H u.
pub fn cdp_adjoint(u: &Tensor, mask: &Tensor) -> Result<Tensor> {
    Ok(mask.conj().hadamard(&idft2(u)?))
}

/// Draw four fresh unit-modulus masks and simulate the amplitude
/// measurements y_i = sqrt(max(0, |A_i x|^2 + noise)).
pub fn cdp_forward(x: &Tensor, rng: &mut Rng, alpha: f64) -> Result<CdpModel> {
    if alpha < 0.0 {
        return Err(Error::invalid("negative noise ratio alpha"));
    }
    let dims = x.dims().to_vec();
    let mut masks = Vec::with_capacity(CDP_MASKS);
    let mut ys = Vec::with_capacity(CDP_MASKS);
    for _ in 0..CDP_MASKS {
        let phases: Vec<Complex64> = (0..x.len())
            .map(|_| {
                let theta = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        let mask = Tensor::from_complex(&dims, phases)?;
        let spec = cdp_apply(x, &mask)?;
        let amp: Vec<f64> = spec
            .complex()
            .iter()
            .map(|c| {
                let intensity = c.norm_sqr();
                let noisy = if alpha > 0.0 {
                    intensity + alpha * intensity * rng.normal()
                } else {
                    intensity
                };
                noisy.max(0.0).sqrt()
            })
            .collect();
        masks.push(mask);
        ys.push(Tensor::from_real(&dims, amp)?);
    }
    Ok(CdpModel { masks, y: ys, alpha })
}

fn phase_of(c: Complex64) -> Complex64 {
    let n = c.norm();
    if n == 0.0 {
        Complex64::new(0.0, 0.0) // phase(0) := 0 convention
    } else {
        c / n
    }
}

/// Gradient of the amplitude loss: Re sum_i A_i^H((|A_i x| - y_i) o phase(A_i x)).
pub fn cdp_fidelity_grad(x: &Tensor, m: &CdpModel) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let mut grad = Tensor::zeros_real(&dims);
    for (mask, y) in m.masks.iter().zip(&m.y) {
        let spec = cdp_apply(x, mask)?;
        let resid: Vec<Complex64> = spec
            .complex()
            .iter()
            .zip(y.real())
            .map(|(&c, &yv)| (c.norm() - yv) * phase_of(c))
            .collect();
        let resid = Tensor::from_complex(&dims, resid)?;
        grad = grad.add(&cdp_adjoint(&resid, mask)?.real_part());
    }
    Ok(grad)
}

/// Amplitude-loss value at x.
pub fn cdp_objective(x: &Tensor, m: &CdpModel) -> Result<f64> {
    let mut acc = 0.0;
    for (mask, y) in m.masks.iter().zip(&m.y) {
        let amp = cdp_apply(x, mask)?.abs();
        acc += 0.5 * amp.sub(y).norm2().powi(2);
    }
    Ok(acc)
}

/// Approximate prox of D/mu by a single gradient step from w with step 1/mu
/// (the fallback used when no fast proximal solution exists).
pub fn cdp_prox_step(w: &Tensor, m: &CdpModel, mu: f64) -> Result<Tensor> {
    if mu <= 0.0 {
        return Err(Error::invalid(format!("penalty mu {mu} must be positive")));
    }
    Ok(w.sub(&cdp_fidelity_grad(w, m)?.scale(1.0 / mu)))
}

/// Initializer: the averaged adjoint magnitude, refined by `iters`
/// error-reduction sweeps (replace measured amplitudes, average the
/// adjoints, clip to [0, 1]).
pub fn cdp_init(m: &CdpModel, iters: usize) -> Result<Tensor> {
    let dims = vec![m.dims().0, m.dims().1];
    let mut acc = Tensor::zeros_real(&dims);
    for (mask, y) in m.masks.iter().zip(&m.y) {
        let adj = cdp_adjoint(&y.promote(), mask)?;
        acc = acc.add(&adj.abs());
    }
    let mut x = acc.scale(1.0 / CDP_MASKS as f64).clip(0.0, 1.0);
    for _ in 0..iters {
        let mut next = Tensor::zeros_real(&dims);
        for (mask, y) in m.masks.iter().zip(&m.y) {
            let spec = cdp_apply(&x, mask)?;
            let projected: Vec<Complex64> = spec
                .complex()
                .iter()
                .zip(y.real())
                .map(|(&c, &yv)| yv * phase_of(c))
                .collect();
            let projected = Tensor::from_complex(&dims, projected)?;
            next = next.add(&cdp_adjoint(&projected, mask)?.real_part());
        }
        x = next.scale(1.0 / CDP_MASKS as f64).clip(0.0, 1.0);
    }
    Ok(x)
}
