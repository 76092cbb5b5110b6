//! The plug-and-play prior: a strength-indexed denoiser interface with three
//! backends.
//!
//! * `TvProx` — proximal operator of isotropic total variation via Chambolle's
//!   dual fixed-point scheme, with strength mapped as lambda = kappa * sigma^2.
//! * `GaussianSmoother` — separable Gaussian blur whose spatial width grows
//!   linearly with sigma.
//! * `MicroUnet` — a two-scale residual U-Net conditioned on a constant
//!   noise-level plane, trained on noisy patches with an L1 loss.
//!
//! All three preserve constant images exactly. The U-Net achieves this by
//! construction: replicate-padded convolutions keep constant stacks constant,
//! and the residual has its spatial mean removed before being added back.

use crate::error::{Error, Result};
use crate::micrograd::{adam_step, AdamState, LayerSpec, NetParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Denoising strengths live in [0, 50/255]: the sigma range the prior is
/// trained for, on the [0,1] pixel convention.
pub const SIGMA_MAX: f64 = 50.0 / 255.0;

/// Spatial kernel std per unit sigma for the Gaussian smoother
/// (sigma = 25/255 maps to a blur of about two pixels).
pub const SMOOTHER_WIDTH_PER_SIGMA: f64 = 20.0;

/// TV strength mapping lambda = TV_KAPPA * sigma^2, calibrated so the TV
/// prior and the smoother occupy comparable PSNR ranges.
pub const TV_KAPPA: f64 = 2.0;

pub const TV_DEFAULT_ITERS: usize = 30;
const TV_DUAL_STEP: f64 = 0.248;

#[derive(Clone, Debug)]
pub enum Denoiser {
    TvProx { iters: usize, kappa: f64 },
    GaussianSmoother { width_per_sigma: f64 },
    MicroUnet { net: NetParams, trained: bool },
}

impl Denoiser {
    pub fn tv() -> Denoiser {
        Denoiser::TvProx { iters: TV_DEFAULT_ITERS, kappa: TV_KAPPA }
    }

    pub fn smoother() -> Denoiser {
        Denoiser::GaussianSmoother { width_per_sigma: SMOOTHER_WIDTH_PER_SIGMA }
    }

    /// A denoiser that returns its input for every strength (sigma = 0
    /// semantics made explicit); useful for solver fixed-point checks.
    pub fn identity() -> Denoiser {
        Denoiser::GaussianSmoother { width_per_sigma: 0.0 }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Denoiser::TvProx { .. } => "tv-prox",
            Denoiser::GaussianSmoother { .. } => "gaussian-smoother",
            Denoiser::MicroUnet { .. } => "micro-unet",
        }
    }
}

/// Apply the prior at strength `sigma` in [0, SIGMA_MAX].
pub fn denoise(d: &Denoiser, x: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(0.0..=SIGMA_MAX + 1e-12).contains(&sigma) {
        return Err(Error::invalid(format!(
            "denoising strength {sigma} outside [0, {SIGMA_MAX}]"
        )));
    }
    if x.dims().len() != 2 {
        return Err(Error::dims(format!("denoise expects H x W image, got {:?}", x.dims())));
    }
    let out = match d {
        Denoiser::TvProx { iters, kappa } => tv_prox(x, kappa * sigma * sigma, *iters),
        Denoiser::GaussianSmoother { width_per_sigma } => {
            gaussian_smooth(x, width_per_sigma * sigma)
        }
        Denoiser::MicroUnet { net, .. } => unet_denoise(net, x, sigma)?,
    };
    if !out.all_finite() {
        return Err(Error::Numeric(format!(
            "{} produced non-finite output",
            d.kind_name()
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// total variation prox
// ---------------------------------------------------------------------------

/// Forward-difference gradient with Neumann boundary (last row/col zero).
fn tv_grad(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            gx[i] = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of `tv_grad`.
fn tv_div(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let dx = if c + 1 < w { px[i] } else { 0.0 } - if c > 0 { px[i - 1] } else { 0.0 };
            let dy = if r + 1 < h { py[i] } else { 0.0 } - if r > 0 { py[i - w] } else { 0.0 };
            out[i] = dx + dy;
        }
    }
}

/// Isotropic TV value with the same discrete gradient used by the prox.
pub fn tv_value(u: &Tensor) -> f64 {
    let (h, w) = (u.dims()[0], u.dims()[1]);
    let x = u.real();
    let mut acc = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let gx = if c + 1 < w { x[i + 1] - x[i] } else { 0.0 };
            let gy = if r + 1 < h { x[i + w] - x[i] } else { 0.0 };
            acc += (gx * gx + gy * gy).sqrt();
        }
    }
    acc
}

/// Objective of the TV proximal problem at `u`: lambda*TV(u) + 0.5*||u - x||^2.
pub fn tv_prox_objective(x: &Tensor, u: &Tensor, lambda: f64) -> f64 {
    let diff: f64 = x
        .real()
        .iter()
        .zip(u.real())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    lambda * tv_value(u) + 0.5 * diff
}

/// Approximate argmin_u lambda*TV(u) + 0.5*||u - x||^2 by projected gradient
/// on the dual problem: p steps along the dual gradient with step 0.248
/// (just under the 1/4 stability bound of the discrete Laplacian) and is
/// projected back onto the pointwise unit ball each iteration.
pub fn tv_prox(x: &Tensor, lambda: f64, iters: usize) -> Tensor {
    assert!(lambda >= 0.0, "tv_prox: negative lambda");
    assert!(iters >= 1, "tv_prox: iters must be >= 1");
    if lambda == 0.0 {
        return x.clone();
    }
    let (h, w) = (x.dims()[0], x.dims()[1]);
    let n = h * w;
    let xv = x.real();
    let mut px = vec![0.0f64; n];
    let mut py = vec![0.0f64; n];
    let mut div = vec![0.0f64; n];
    let mut gx = vec![0.0f64; n];
    let mut gy = vec![0.0f64; n];
    let mut work = vec![0.0f64; n];
    for _ in 0..iters {
        tv_div(&px, &py, h, w, &mut div);
        for i in 0..n {
            work[i] = div[i] - xv[i] / lambda;
        }
        tv_grad(&work, h, w, &mut gx, &mut gy);
        for i in 0..n {
            px[i] += TV_DUAL_STEP * gx[i];
            py[i] += TV_DUAL_STEP * gy[i];
            let mag = (px[i] * px[i] + py[i] * py[i]).sqrt();
            if mag > 1.0 {
                px[i] /= mag;
                py[i] /= mag;
            }
        }
    }
    tv_div(&px, &py, h, w, &mut div);
    let out: Vec<f64> = (0..n).map(|i| xv[i] - lambda * div[i]).collect();
    Tensor::from_real(&[h, w], out).unwrap()
}

// ---------------------------------------------------------------------------
// gaussian smoother
// ---------------------------------------------------------------------------

/// Separable Gaussian blur with replicate boundary; `rho` is the spatial
/// kernel std in pixels. `rho = 0` is the identity.
pub fn gaussian_smooth(x: &Tensor, rho: f64) -> Tensor {
    if rho < 1e-12 {
        return x.clone();
    }
    let (h, w) = (x.dims()[0], x.dims()[1]);
    let radius = (3.0 * rho).ceil().max(1.0) as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in -(radius as i64)..=(radius as i64) {
        kernel.push((-(k * k) as f64 / (2.0 * rho * rho)).exp());
    }
    let s: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= s;
    }
    let src = x.real();
    let mut tmp = vec![0.0f64; h * w];
    // rows
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let cc = (c as i64 + ki as i64 - radius as i64).clamp(0, w as i64 - 1) as usize;
                acc += kv * src[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    // columns
    let mut out = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let rr = (r as i64 + ki as i64 - radius as i64).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[rr * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    Tensor::from_real(&[h, w], out).unwrap()
}

// ---------------------------------------------------------------------------
// micro residual U-Net
// ---------------------------------------------------------------------------

/// Two-scale residual U-Net, widths {16, 32}; input is the image plane plus a
/// constant noise-level plane.
pub fn micro_unet_topology() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv { in_ch: 2, out_ch: 16, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 16, out_ch: 16, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::PushSkip,
        LayerSpec::AvgPool2,
        LayerSpec::Conv { in_ch: 16, out_ch: 32, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 32, out_ch: 32, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Upsample2,
        LayerSpec::Conv { in_ch: 32, out_ch: 16, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::PopSkipAdd,
        LayerSpec::Conv { in_ch: 16, out_ch: 1, stride: 1 },
    ]
}

pub fn init_micro_unet(rng: &mut Rng) -> NetParams {
    NetParams::init(micro_unet_topology(), rng)
}

fn unet_input(x: &Tensor, sigma: f64) -> Tensor {
    let (h, w) = (x.dims()[0], x.dims()[1]);
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(x.real());
    data.extend(std::iter::repeat(sigma / SIGMA_MAX).take(h * w));
    Tensor::from_real(&[2, h, w], data).unwrap()
}

/// Residual denoising pass: x + (r - mean(r)) with r the network output.
pub fn unet_denoise(net: &NetParams, x: &Tensor, sigma: f64) -> Result<Tensor> {
    let (h, w) = (x.dims()[0], x.dims()[1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dims(format!(
            "micro-unet needs even extents, got {h}x{w}"
        )));
    }
    let (r, _) = net.forward(&unet_input(x, sigma))?;
    let rbar = r.mean();
    let out: Vec<f64> = x
        .real()
        .iter()
        .zip(r.real())
        .map(|(&xi, &ri)| xi + ri - rbar)
        .collect();
    Tensor::from_real(&[h, w], out)
}

// ---------------------------------------------------------------------------
// denoiser training
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// Patches reserved from the end of the dataset for held-out evaluation.
    pub holdout: usize,
    pub min_patches: usize,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            steps: 2000,
            batch: 16,
            lr: 1e-3,
            sigma_lo: 1.0 / 255.0,
            sigma_hi: SIGMA_MAX,
            holdout: 32,
            min_patches: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDenoiser {
    pub net: NetParams,
    pub trained: bool,
    /// (step, mean L1 loss) pairs sampled along training.
    pub loss_log: Vec<(usize, f64)>,
}

/// Train the micro U-Net on noisy patches with an L1 loss; noise levels are
/// sampled uniformly from [sigma_lo, sigma_hi] per patch.
pub fn train_denoiser(patches: &[Tensor], cfg: &DenoiserTrainConfig) -> Result<TrainedDenoiser> {
    if patches.len() < cfg.min_patches {
        return Err(Error::invalid(format!(
            "dataset too small: {} patches, need at least {}",
            patches.len(),
            cfg.min_patches
        )));
    }
    let mut rng = Rng::new(cfg.seed).derive(0xD30);
    let mut net = init_micro_unet(&mut rng);
    if cfg.steps == 0 {
        return Ok(TrainedDenoiser { net, trained: false, loss_log: Vec::new() });
    }
    let train = &patches[..patches.len() - cfg.holdout.min(patches.len() / 2)];
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut loss_log = Vec::new();

    for step in 0..cfg.steps {
        net.zero_grads();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch {
            let clean = &train[rng.index(train.len())];
            let (h, w) = (clean.dims()[0], clean.dims()[1]);
            let n = (h * w) as f64;
            let sigma = rng.uniform_in(cfg.sigma_lo, cfg.sigma_hi);
            let noise = crate::rng::gaussian_noise(&mut rng, clean.dims(), sigma)?;
            let noisy = clean.add(&noise);

            let input = unet_input(&noisy, sigma);
            let (r, tape) = net.forward(&input)?;
            let rbar = r.mean();
            // L1 loss on x + (r - mean(r)) vs clean
            let mut s = vec![0.0f64; h * w];
            let mut loss = 0.0;
            for i in 0..h * w {
                let out = noisy.real()[i] + r.real()[i] - rbar;
                let d = out - clean.real()[i];
                loss += d.abs();
                s[i] = d.signum() / n;
            }
            batch_loss += loss / n;
            let sbar = s.iter().sum::<f64>() / n;
            let grad_r: Vec<f64> = s.iter().map(|&si| si - sbar).collect();
            let grad_out = Tensor::from_real(&[1, h, w], grad_r)?;
            net.backward(&tape, &grad_out)?;
        }
        net.scale_grads(1.0 / cfg.batch as f64);
        if !net.grads_all_finite() {
            return Err(Error::Numeric(format!(
                "divergent denoiser loss (non-finite gradient) at step {step}"
            )));
        }
        adam_step(&mut net, &mut adam)?;
        if !net.params_all_finite() {
            return Err(Error::Numeric(format!(
                "divergent denoiser parameters at step {step}"
            )));
        }
        if step % 100 == 0 || step + 1 == cfg.steps {
            loss_log.push((step, batch_loss / cfg.batch as f64));
        }
    }
    Ok(TrainedDenoiser { net, trained: true, loss_log })
}

/// Mean PSNR of noisy inputs and denoised outputs over held-out patches at a
/// fixed noise level.
pub fn holdout_psnr(
    d: &Denoiser,
    patches: &[Tensor],
    sigma: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = Rng::new(seed).derive(0xE7A1);
    let mut noisy_sum = 0.0;
    let mut den_sum = 0.0;
    for clean in patches {
        let noise = crate::rng::gaussian_noise(&mut rng, clean.dims(), sigma)?;
        let noisy = clean.add(&noise);
        let den = denoise(d, &noisy, sigma)?;
        noisy_sum += crate::metrics::psnr(&noisy, clean)?;
        den_sum += crate::metrics::psnr(&den, clean)?;
    }
    let n = patches.len() as f64;
    Ok((noisy_sum / n, den_sum / n))
}
