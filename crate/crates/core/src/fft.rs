//! Unitary 2-D discrete Fourier transforms.
//!
//! `dft2`/`idft2` use the 1/sqrt(HW) normalization on both directions, so the
//! forward transform is unitary and its adjoint equals its inverse. Power-of-two
//! extents run through an iterative radix-2 FFT; other extents fall back to the
//! direct O(n^2) transform, which stays exact (desk-scale images keep this cheap).

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use num_complex::Complex64;

fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place radix-2 FFT, unnormalized. `sign` is -1 for the forward kernel
/// and +1 for the inverse kernel.
fn fft_pow2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[i + k];
                let b = buf[i + k + len / 2] * w;
                buf[i + k] = a + b;
                buf[i + k + len / 2] = a - b;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Direct unnormalized DFT for arbitrary length.
fn dft_naive(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    let src = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &v) in src.iter().enumerate() {
            let ang = sign * 2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
            acc += v * Complex64::new(ang.cos(), ang.sin());
        }
        *out = acc;
    }
}

fn transform_1d(buf: &mut [Complex64], sign: f64) {
    if is_pow2(buf.len()) {
        fft_pow2(buf, sign);
    } else {
        dft_naive(buf, sign);
    }
}

fn transform_2d(t: &Tensor, sign: f64) -> Result<Tensor> {
    let dims = t.dims();
    if dims.len() != 2 {
        return Err(Error::dims(format!("dft2 expects H x W tensor, got {dims:?}")));
    }
    let (h, w) = (dims[0], dims[1]);
    let mut data = t.try_complex()?.to_vec();
    // rows
    for r in 0..h {
        transform_1d(&mut data[r * w..(r + 1) * w], sign);
    }
    // columns via scratch
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        transform_1d(&mut col, sign);
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
    Tensor::from_complex(dims, data)
}

/// Unitary forward 2-D DFT of a complex H x W tensor.
pub fn dft2(t: &Tensor) -> Result<Tensor> {
    transform_2d(t, -1.0)
}

/// Unitary inverse 2-D DFT; `idft2(dft2(x)) == x` to roundoff.
pub fn idft2(t: &Tensor) -> Result<Tensor> {
    transform_2d(t, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::max_abs_diff;

    fn random_complex(rng: &mut Rng, h: usize, w: usize) -> Tensor {
        let data: Vec<Complex64> = (0..h * w)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        Tensor::from_complex(&[h, w], data).unwrap()
    }

    /// Direct quadratic-time oracle, independent of the row-column code path.
    fn dft2_oracle(t: &Tensor) -> Tensor {
        let (h, w) = (t.dims()[0], t.dims()[1]);
        let src = t.complex();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for ku in 0..h {
            for kv in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((ku * r) as f64 / h as f64 + (kv * c) as f64 / w as f64);
                        acc += src[r * w + c] * Complex64::new(ang.cos(), ang.sin());
                    }
                }
                out[ku * w + kv] = acc / ((h * w) as f64).sqrt();
            }
        }
        Tensor::from_complex(&[h, w], out).unwrap()
    }

    #[test]
    fn delta_gives_constant_plane() {
        // 4x4 delta at (0,0) -> constant plane of value 1/4
        let mut t = Tensor::zeros_complex(&[4, 4]);
        t.complex_mut()[0] = Complex64::new(1.0, 0.0);
        let f = dft2(&t).unwrap();
        for v in f.complex() {
            assert!((v - Complex64::new(0.25, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn constant_gives_dc_delta() {
        // constant plane c on 8x8 -> delta of value 8c at DC
        let c = 0.37;
        let t = Tensor::filled(&[8, 8], c).promote();
        let f = dft2(&t).unwrap();
        let fr = f.complex();
        assert!((fr[0] - Complex64::new(8.0 * c, 0.0)).norm() < 1e-12);
        for v in &fr[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_against_direct_oracle() {
        // random 16x16: ||dft2(x)|| == ||x|| within 1e-10, and dft2 matches
        // the direct O(N^2) DFT oracle.
        let mut rng = Rng::new(11);
        let x = random_complex(&mut rng, 16, 16);
        let f = dft2(&x).unwrap();
        assert!((f.norm2() - x.norm2()).abs() < 1e-10);
        let oracle = dft2_oracle(&x);
        assert!(max_abs_diff(&f, &oracle) < 1e-10);
    }

    #[test]
    fn roundtrip_many_sizes() {
        // dft2/idft2 round trip: max-abs error < 1e-10 on 100 random images
        // up to 64x64, including non-power-of-two extents.
        let mut rng = Rng::new(23);
        for i in 0..100 {
            let h = 1 + rng.index(64);
            let w = 1 + rng.index(64);
            let x = random_complex(&mut rng, h, w);
            let back = idft2(&dft2(&x).unwrap()).unwrap();
            assert!(
                max_abs_diff(&x, &back) < 1e-10,
                "roundtrip failed at iter {i} ({h}x{w})"
            );
        }
    }

    #[test]
    fn non_pow2_matches_oracle() {
        let mut rng = Rng::new(5);
        let x = random_complex(&mut rng, 6, 10);
        let f = dft2(&x).unwrap();
        let oracle = dft2_oracle(&x);
        assert!(max_abs_diff(&f, &oracle) < 1e-10);
    }
}
