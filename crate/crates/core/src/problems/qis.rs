//! Quanta image sensor: quantized-Poisson single-photon measurements.
//!
//! Each pixel is observed by K^2 binary jots; a jot fires when its
//! Poisson(alpha_s * x / K^2) count reaches 1. With the default gain
//! alpha_s = K^2 the per-jot rate is x itself. Reconstruction works from the
//! per-pixel one/zero counts.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct QisModel {
    /// Jots per pixel per axis (K^2 jots total per pixel).
    pub k: u32,
    /// Sensor gain (alpha_s = K^2 by default).
    pub alpha_s: f64,
    /// Per-pixel count of jots that fired.
    pub ones: Tensor,
    /// Per-pixel count of dark jots; ones + zeros = K^2 everywhere.
    pub zeros: Tensor,
}

impl QisModel {
    pub fn dims(&self) -> (usize, usize) {
        (self.ones.dims()[0], self.ones.dims()[1])
    }

    pub fn jots_per_pixel(&self) -> f64 {
        (self.k as f64) * (self.k as f64)
    }

    /// Per-unit rate coefficient alpha_s / K^2 (1.0 at the default gain).
    pub fn rate_coeff(&self) -> f64 {
        self.alpha_s / self.jots_per_pixel()
    }
}

/// Simulate the binary sensor: K^2 jots per pixel, each thresholding a
/// Poisson draw at 1.
pub fn qis_forward(x: &Tensor, k: u32, rng: &mut Rng) -> Result<QisModel> {
    if k == 0 {
        return Err(Error::invalid("jot count K must be positive"));
    }
    let dims = x.dims().to_vec();
    let jots = (k as u64) * (k as u64);
    let alpha_s = jots as f64;
    let rate_coeff = alpha_s / jots as f64; // 1.0; kept for clarity vs the model
    let mut ones = vec![0.0f64; x.len()];
    let mut zeros = vec![0.0f64; x.len()];
    for (i, &xi) in x.real().iter().enumerate() {
        let rate = rate_coeff * xi;
        let mut fired = 0u64;
        for _ in 0..jots {
            if rng.poisson(rate) >= 1 {
                fired += 1;
            }
        }
        ones[i] = fired as f64;
        zeros[i] = (jots - fired) as f64;
    }
    Ok(QisModel {
        k,
        alpha_s,
        ones: Tensor::from_real(&dims, ones)?,
        zeros: Tensor::from_real(&dims, zeros)?,
    })
}

/// Per-pixel maximum-likelihood estimate x = -(K^2/alpha_s) ln(K0/K^2), with
/// the zero-count boundary K0 = 0 mapped to half a count; clipped to [0, 1].
pub fn qis_init(m: &QisModel) -> Result<Tensor> {
    let jots = m.jots_per_pixel();
    let c = m.rate_coeff();
    let data: Vec<f64> = m
        .zeros
        .real()
        .iter()
        .map(|&k0| {
            let k0 = if k0 <= 0.0 { 0.5 } else { k0 };
            (-(k0 / jots).ln() / c).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::from_real(m.ones.dims(), data)
}

/// Derivative of the per-pixel data term
///   D_j(x) = K0 c x - K1 ln(1 - e^{-c x})
/// which is strictly increasing on x > 0 when K1 > 0.
fn data_term_deriv(x: f64, k0: f64, k1: f64, c: f64) -> f64 {
    let mut d = c * k0;
    if k1 > 0.0 {
        d -= c * k1 / ((c * x).exp_m1());
    }
    d
}

const QIS_BRACKET_HI: f64 = 2.0;
const QIS_BISECTION_ITERS: usize = 10;

/// Proximal step of the quantized-Poisson data term: per-pixel minimizer of
/// D_j(x) + (mu/2)(x - v_j)^2, found by ten bisection iterations on the
/// monotone derivative over the bracket [0, 2].
pub fn qis_prox(v: &Tensor, m: &QisModel, mu: f64) -> Result<Tensor> {
    if mu <= 0.0 {
        return Err(Error::invalid(format!("penalty mu {mu} must be positive")));
    }
    if v.dims() != m.ones.dims() {
        return Err(Error::dims("qis_prox: dims mismatch"));
    }
    let c = m.rate_coeff();
    let ones = m.ones.real();
    let zeros = m.zeros.real();
    let out: Vec<f64> = v
        .real()
        .iter()
        .enumerate()
        .map(|(i, &vi)| {
            let (k1, k0) = (ones[i], zeros[i]);
            let deriv = |x: f64| data_term_deriv(x, k0, k1, c) + mu * (x - vi);
            // derivative at 0+: -inf when K1 > 0, else the linear form
            let lo_sign_neg = if k1 > 0.0 { true } else { deriv(0.0) < 0.0 };
            if !lo_sign_neg {
                return 0.0;
            }
            if deriv(QIS_BRACKET_HI) <= 0.0 {
                return QIS_BRACKET_HI;
            }
            let (mut lo, mut hi) = (0.0, QIS_BRACKET_HI);
            for _ in 0..QIS_BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if deriv(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    Tensor::from_real(v.dims(), out)
}

/// Gradient of the summed data term, with x floored away from zero where the
/// logarithmic term would blow up.
pub fn qis_grad(x: &Tensor, m: &QisModel) -> Result<Tensor> {
    let c = m.rate_coeff();
    let ones = m.ones.real();
    let zeros = m.zeros.real();
    let data: Vec<f64> = x
        .real()
        .iter()
        .enumerate()
        .map(|(i, &xi)| data_term_deriv(xi.max(1e-6), zeros[i], ones[i], c))
        .collect();
    Tensor::from_real(x.dims(), data)
}

/// Summed data-term value (x floored away from zero for finiteness).
pub fn qis_objective(x: &Tensor, m: &QisModel) -> Result<f64> {
    let c = m.rate_coeff();
    let ones = m.ones.real();
    let zeros = m.zeros.real();
    let mut acc = 0.0;
    for (i, &xi) in x.real().iter().enumerate() {
        let xi = xi.max(1e-9);
        acc += zeros[i] * c * xi;
        if ones[i] > 0.0 {
            acc -= ones[i] * (-(-c * xi).exp_m1()).ln();
        }
    }
    Ok(acc)
}

/// Per-pixel prox objective, used by tests to cross-check minimizers.
pub fn qis_pixel_objective(x: f64, k0: f64, k1: f64, c: f64, v: f64, mu: f64) -> f64 {
    let xi = x.max(1e-12);
    let mut d = k0 * c * xi;
    if k1 > 0.0 {
        d -= k1 * (-(-c * xi).exp_m1()).ln();
    }
    d + 0.5 * mu * (x - v) * (x - v)
}
