//! Image quality metrics on the [0, 1] pixel convention.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error between two real tensors of identical dims.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims(format!(
            "mse: dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (ar, br) = (a.try_real()?, b.try_real()?);
    let n = ar.len() as f64;
    Ok(ar
        .iter()
        .zip(br)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB for images in [0, 1].
/// Capped at 100 dB when the MSE drops below 1e-10 so rewards stay finite.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let e = mse(a, b)?;
    if e < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (1.0 / e).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identical_images_hit_cap() {
        let a = Tensor::filled(&[4, 4], 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn constant_offset_gives_twenty_db() {
        // constant 0.5 vs constant 0.6 -> MSE = 0.01 -> 20.0 dB
        let a = Tensor::filled(&[8, 8], 0.5);
        let b = Tensor::filled(&[8, 8], 0.6);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "got {p}");
    }

    #[test]
    fn matches_direct_summation_oracle() {
        // random pair matches an independent summation loop to 1e-9 dB
        let mut rng = Rng::new(17);
        let n = 12 * 12;
        let av: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let bv: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let a = Tensor::from_real(&[12, 12], av.clone()).unwrap();
        let b = Tensor::from_real(&[12, 12], bv.clone()).unwrap();

        let mut acc = 0.0;
        for i in 0..n {
            let d = av[i] - bv[i];
            acc += d * d;
        }
        let oracle = 10.0 * (1.0 / (acc / n as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn symmetry_and_shift_invariance() {
        // psnr(a,b) = psnr(b,a); psnr(a+c, b+c) = psnr(a,b) exactly for
        // shifts that keep values finite. Pixels are drawn on a 1/256
        // lattice so the shifted sums and their differences are exact.
        let mut rng = Rng::new(4);
        let n = 64;
        let av: Vec<f64> = (0..n).map(|_| rng.index(128) as f64 / 256.0).collect();
        let bv: Vec<f64> = (0..n).map(|_| rng.index(128) as f64 / 256.0).collect();
        let a = Tensor::from_real(&[8, 8], av).unwrap();
        let b = Tensor::from_real(&[8, 8], bv).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());

        let c = 0.125;
        let a2 = a.shift(c);
        let b2 = b.shift(c);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&a2, &b2).unwrap());
    }

    #[test]
    fn dims_mismatch_is_an_error() {
        let a = Tensor::zeros_real(&[4, 4]);
        let b = Tensor::zeros_real(&[4, 5]);
        assert!(psnr(&a, &b).is_err());
    }
}
