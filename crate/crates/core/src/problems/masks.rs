//! Procedural k-space sampling masks, stored with DC at index [0,0] so they
//! apply directly to unshifted spectra.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Pseudo-radial: jittered spokes through the k-space center plus a small
    /// dense core.
    Radial,
    /// Uniform-random Cartesian phase-encode rows plus a center band.
    Cartesian,
}

/// Translate centered coordinates to the unshifted FFT grid.
fn unshift(r: i64, c: i64, h: usize, w: usize) -> usize {
    let rr = r.rem_euclid(h as i64) as usize;
    let cc = c.rem_euclid(w as i64) as usize;
    rr * w + cc
}

/// Generate a binary sampling mask with roughly `ratio` coverage.
pub fn sampling_mask(kind: MaskKind, h: usize, w: usize, ratio: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(Error::invalid(format!("sampling ratio {ratio} outside (0, 1]")));
    }
    let target = ((h * w) as f64 * ratio).round().max(1.0) as usize;
    let mut mask = vec![0.0f64; h * w];
    let mut count = 0usize;
    let set = |mask: &mut Vec<f64>, idx: usize, count: &mut usize| {
        if mask[idx] == 0.0 {
            mask[idx] = 1.0;
            *count += 1;
        }
    };

    match kind {
        MaskKind::Radial => {
            // dense low-frequency core
            let core = ((h.min(w)) as f64 * 0.06).ceil() as i64;
            for r in -core..=core {
                for c in -core..=core {
                    set(&mut mask, unshift(r, c, h, w), &mut count);
                }
            }
            let half = (h.max(w)) as f64 / 2.0;
            while count < target {
                let theta = rng.uniform_in(0.0, std::f64::consts::PI);
                let (dx, dy) = (theta.cos(), theta.sin());
                let mut t = 0.0;
                while t <= half {
                    let r = (t * dy).round() as i64;
                    let c = (t * dx).round() as i64;
                    set(&mut mask, unshift(r, c, h, w), &mut count);
                    set(&mut mask, unshift(-r, -c, h, w), &mut count);
                    t += 0.5;
                }
            }
        }
        MaskKind::Cartesian => {
            // center band of rows around DC
            let band = ((h as f64 * ratio * 0.2).ceil() as i64).max(1);
            for r in -band / 2..=band / 2 {
                for c in 0..w as i64 {
                    set(&mut mask, unshift(r, c, h, w), &mut count);
                }
            }
            while count < target {
                let r = rng.index(h);
                for c in 0..w {
                    set(&mut mask, r * w + c, &mut count);
                }
            }
        }
    }
    Tensor::from_real(&[h, w], mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_are_respected_roughly() {
        let mut rng = Rng::new(0);
        for kind in [MaskKind::Radial, MaskKind::Cartesian] {
            for ratio in [0.5, 0.25, 0.125] {
                let m = sampling_mask(kind, 32, 32, ratio, &mut rng).unwrap();
                let cov = m.sum() / 1024.0;
                assert!(
                    (cov - ratio).abs() < 0.12,
                    "{kind:?} at {ratio}: coverage {cov}"
                );
            }
        }
    }

    #[test]
    fn mask_contains_dc() {
        let mut rng = Rng::new(1);
        let m = sampling_mask(MaskKind::Radial, 16, 16, 0.25, &mut rng).unwrap();
        assert_eq!(m.real()[0], 1.0);
    }

    #[test]
    fn invalid_ratio_rejected() {
        let mut rng = Rng::new(2);
        assert!(sampling_mask(MaskKind::Radial, 8, 8, 0.0, &mut rng).is_err());
        assert!(sampling_mask(MaskKind::Radial, 8, 8, 1.5, &mut rng).is_err());
    }
}
