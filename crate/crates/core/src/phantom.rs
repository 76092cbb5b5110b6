//! Procedural test images: random ellipses and rectangles over a flat
//! background, with a gentle intensity ramp when the scene has any shapes.
//! All pixels land in [0, 1] and generation is deterministic under the seed.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub size: usize,
    pub ellipses: usize,
    pub rects: usize,
    /// Absolute intensity delta range for each shape.
    pub intensity_lo: f64,
    pub intensity_hi: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: 32,
            ellipses: 3,
            rects: 2,
            intensity_lo: 0.15,
            intensity_hi: 0.6,
            seed: 0,
        }
    }
}

pub fn generate_phantoms(spec: &PhantomSpec, count: usize) -> Result<Vec<Tensor>> {
    if count == 0 {
        return Err(Error::invalid("phantom count must be >= 1"));
    }
    if spec.size == 0 {
        return Err(Error::invalid("phantom size must be >= 1"));
    }
    let mut rng = Rng::new(spec.seed).derive(0x9 + spec.size as u64);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(render(spec, &mut rng));
    }
    Ok(out)
}

fn render(spec: &PhantomSpec, rng: &mut Rng) -> Tensor {
    let n = spec.size;
    let nf = n as f64;
    let background = rng.uniform_in(0.1, 0.5);
    let mut img = vec![background; n * n];

    let shapes = spec.ellipses + spec.rects;
    if shapes > 0 {
        // gentle ramp so scenes are not piecewise constant everywhere
        let gx = rng.uniform_in(-0.15, 0.15) / nf;
        let gy = rng.uniform_in(-0.15, 0.15) / nf;
        for r in 0..n {
            for c in 0..n {
                img[r * n + c] += gx * (c as f64 - nf / 2.0) + gy * (r as f64 - nf / 2.0);
            }
        }
    }

    for _ in 0..spec.ellipses {
        let cx = rng.uniform_in(0.2, 0.8) * nf;
        let cy = rng.uniform_in(0.2, 0.8) * nf;
        let ax = rng.uniform_in(0.08, 0.3) * nf;
        let ay = rng.uniform_in(0.08, 0.3) * nf;
        let theta = rng.uniform_in(0.0, std::f64::consts::PI);
        let delta = rng.uniform_in(spec.intensity_lo, spec.intensity_hi) * rng.rademacher();
        let (ct, st) = (theta.cos(), theta.sin());
        for r in 0..n {
            for c in 0..n {
                let dx = c as f64 - cx;
                let dy = r as f64 - cy;
                let u = (ct * dx + st * dy) / ax;
                let v = (-st * dx + ct * dy) / ay;
                if u * u + v * v <= 1.0 {
                    img[r * n + c] += delta;
                }
            }
        }
    }

    for _ in 0..spec.rects {
        let x0 = rng.uniform_in(0.05, 0.7) * nf;
        let y0 = rng.uniform_in(0.05, 0.7) * nf;
        let wdt = rng.uniform_in(0.1, 0.3) * nf;
        let hgt = rng.uniform_in(0.1, 0.3) * nf;
        let delta = rng.uniform_in(spec.intensity_lo, spec.intensity_hi) * rng.rademacher();
        for r in 0..n {
            for c in 0..n {
                let x = c as f64;
                let y = r as f64;
                if x >= x0 && x <= x0 + wdt && y >= y0 && y <= y0 + hgt {
                    img[r * n + c] += delta;
                }
            }
        }
    }

    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_real(&[n, n], img).unwrap()
}

/// Random square crops from a phantom set, used as denoiser training patches.
pub fn random_patches(images: &[Tensor], patch: usize, count: usize, rng: &mut Rng) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let img = &images[rng.index(images.len())];
        let (h, w) = (img.dims()[0], img.dims()[1]);
        assert!(h >= patch && w >= patch, "patch larger than image");
        let r0 = rng.index(h - patch + 1);
        let c0 = rng.index(w - patch + 1);
        let src = img.real();
        let mut data = Vec::with_capacity(patch * patch);
        for r in 0..patch {
            data.extend_from_slice(&src[(r0 + r) * w + c0..(r0 + r) * w + c0 + patch]);
        }
        out.push(Tensor::from_real(&[patch, patch], data).unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_abs_diff;

    #[test]
    fn same_seed_identical_set() {
        let spec = PhantomSpec::default();
        let a = generate_phantoms(&spec, 5).unwrap();
        let b = generate_phantoms(&spec, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(max_abs_diff(x, y), 0.0);
        }
    }

    #[test]
    fn zero_shapes_gives_uniform_background() {
        let spec = PhantomSpec {
            ellipses: 0,
            rects: 0,
            ..PhantomSpec::default()
        };
        for img in generate_phantoms(&spec, 4).unwrap() {
            let first = img.real()[0];
            assert!(img.real().iter().all(|&v| v == first));
        }
    }

    #[test]
    fn hundred_phantoms_stay_in_unit_range() {
        let spec = PhantomSpec::default();
        for img in generate_phantoms(&spec, 100).unwrap() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in img.real() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            assert!(lo >= 0.0 && hi <= 1.0, "range [{lo}, {hi}]");
        }
    }
}
