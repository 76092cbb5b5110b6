//! The six PnP-type iteration schemes as pure single-step updates, plus a
//! policy-driven trajectory driver.
//!
//! Steps take a [`SolverState`] and produce the next one; nothing is mutated
//! in place, so trajectories for different images can run side by side. The
//! denoiser always acts on the real part of its input; for CS-MRI the state
//! tensors stay complex (with the primal's imaginary part zeroed by each
//! denoising step), for QIS/CDP everything is real.

use crate::denoise::{denoise, Denoiser, SIGMA_MAX};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::problems::ObservationModel;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Admm,
    Pgm,
    Apgm,
    Hqs,
    Red,
    Damp,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Admm => "admm",
            Scheme::Pgm => "pgm",
            Scheme::Apgm => "apgm",
            Scheme::Hqs => "hqs",
            Scheme::Red => "red",
            Scheme::Damp => "damp",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s {
            "admm" => Ok(Scheme::Admm),
            "pgm" => Ok(Scheme::Pgm),
            "apgm" => Ok(Scheme::Apgm),
            "hqs" => Ok(Scheme::Hqs),
            "red" => Ok(Scheme::Red),
            "damp" => Ok(Scheme::Damp),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }

    pub const ALL: [Scheme; 6] = [
        Scheme::Admm,
        Scheme::Pgm,
        Scheme::Apgm,
        Scheme::Hqs,
        Scheme::Red,
        Scheme::Damp,
    ];

    /// Continuous action coordinates the scheme consumes, in order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Scheme::Admm | Scheme::Hqs => &["sigma", "mu"],
            Scheme::Pgm => &["sigma", "gamma"],
            Scheme::Apgm => &["sigma", "gamma", "qbar"],
            Scheme::Red => &["sigma", "mu", "lambda"],
            Scheme::Damp => &["delta"],
        }
    }
}

/// Per-iteration parameters. Schemes read only the fields they use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    /// Denoising strength in [0, SIGMA_MAX].
    pub sigma: f64,
    /// ADMM/HQS/RED penalty.
    pub mu: f64,
    /// PGM/APGM gradient step size.
    pub gamma: f64,
    /// APGM inertial weight in [0, 1); `None` follows the internal FISTA
    /// recurrence.
    pub qbar: Option<f64>,
    /// RED prior weight.
    pub lambda: f64,
    /// D-AMP noise-estimate multiplier.
    pub delta: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            sigma: 15.0 / 255.0,
            mu: 0.1,
            gamma: 0.1,
            qbar: None,
            lambda: 0.1,
            delta: 1.0,
        }
    }
}

impl StepParams {
    pub fn validate(&self, scheme: Scheme) -> Result<()> {
        if !(0.0..=SIGMA_MAX + 1e-12).contains(&self.sigma) {
            return Err(Error::invalid(format!("sigma {} out of range", self.sigma)));
        }
        let positive = |v: f64, name: &str| -> Result<()> {
            if v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
            Ok(())
        };
        match scheme {
            Scheme::Admm | Scheme::Hqs => positive(self.mu, "mu"),
            Scheme::Pgm => positive(self.gamma, "gamma"),
            Scheme::Apgm => {
                positive(self.gamma, "gamma")?;
                if let Some(q) = self.qbar {
                    if !(0.0..1.0).contains(&q) {
                        return Err(Error::invalid(format!("qbar {q} outside [0, 1)")));
                    }
                }
                Ok(())
            }
            Scheme::Red => {
                positive(self.mu, "mu")?;
                positive(self.lambda, "lambda")
            }
            Scheme::Damp => positive(self.delta, "delta"),
        }
    }
}

/// Live optimization variables for any scheme. Unused slots stay zero.
#[derive(Clone, Debug)]
pub struct SolverState {
    /// Primal estimate (complex for CS-MRI, real otherwise).
    pub x: Tensor,
    /// Auxiliary variable: the data-consistent iterate for splitting schemes,
    /// the measurement-domain residual for D-AMP.
    pub z: Tensor,
    /// Scaled dual variable (ADMM family).
    pub u: Tensor,
    /// Inertial point (PGM/APGM).
    pub s: Tensor,
    /// FISTA momentum scalar.
    pub q: f64,
    /// Iteration counter; increments by exactly one per step.
    pub k: usize,
    /// Input handed to the denoiser in the most recent step (real).
    pub xbar: Option<Tensor>,
}

impl SolverState {
    pub fn all_finite(&self) -> bool {
        self.x.all_finite() && self.z.all_finite() && self.u.all_finite() && self.s.all_finite()
    }

    /// Real-valued recovered image, clipped to [0, 1].
    pub fn recovered(&self) -> Tensor {
        self.x.real_part().clip(0.0, 1.0)
    }
}

/// Scheme-appropriate starting state from the model's initializer.
pub fn init_state(model: &ObservationModel, scheme: Scheme) -> Result<SolverState> {
    let x0 = model.init_image()?;
    let x0 = if model.state_is_complex() { x0.promote() } else { x0 };
    let zeros = if model.state_is_complex() {
        Tensor::zeros_complex(x0.dims())
    } else {
        Tensor::zeros_real(x0.dims())
    };
    let state = match scheme {
        Scheme::Admm | Scheme::Hqs | Scheme::Red => SolverState {
            z: x0.clone(),
            u: zeros.clone(),
            s: zeros,
            x: x0,
            q: 1.0,
            k: 0,
            xbar: None,
        },
        Scheme::Pgm | Scheme::Apgm => SolverState {
            z: x0.clone(),
            u: zeros.clone(),
            s: x0.clone(),
            x: x0,
            q: 1.0,
            k: 0,
            xbar: None,
        },
        Scheme::Damp => {
            if !model.is_linear() {
                return Err(Error::invalid(
                    "damp requires a linear forward model (CS-MRI only)",
                ));
            }
            let residual = model.measurement()?.sub(&model.forward_apply(&x0)?);
            SolverState {
                z: residual,
                u: zeros.clone(),
                s: zeros,
                x: x0,
                q: 1.0,
                k: 0,
                xbar: None,
            }
        }
    };
    Ok(state)
}

/// Denoise the real part at strength `sigma`, returning the result in the
/// state's dtype together with the recorded denoiser input.
fn denoise_state(d: &Denoiser, t: &Tensor, sigma: f64, complex: bool) -> Result<(Tensor, Tensor)> {
    let xbar = t.real_part();
    let den = denoise(d, &xbar, sigma)?;
    let out = if complex { den.promote() } else { den };
    Ok((out, xbar))
}

pub fn pnp_admm_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
) -> Result<SolverState> {
    p.validate(Scheme::Admm)?;
    let complex = model.state_is_complex();
    let (x, xbar) = denoise_state(d, &st.z.sub(&st.u), p.sigma, complex)?;
    let z = model.data_prox(&x.add(&st.u), p.mu)?;
    let u = st.u.add(&x).sub(&z);
    Ok(SolverState {
        x,
        z,
        u,
        s: st.s.clone(),
        q: st.q,
        k: st.k + 1,
        xbar: Some(xbar),
    })
}

pub fn pnp_hqs_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
) -> Result<SolverState> {
    p.validate(Scheme::Hqs)?;
    let complex = model.state_is_complex();
    let (x, xbar) = denoise_state(d, &st.z, p.sigma, complex)?;
    let z = model.data_prox(&x, p.mu)?;
    Ok(SolverState {
        x,
        z,
        u: st.u.clone(),
        s: st.s.clone(),
        q: st.q,
        k: st.k + 1,
        xbar: Some(xbar),
    })
}

/// FISTA recurrence: next momentum scalar from the current one.
pub fn fista_next_q(q: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * q * q).sqrt())
}

fn pgm_like_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
    accelerated: bool,
) -> Result<SolverState> {
    let complex = model.state_is_complex();
    let grad = model.data_grad(&st.s)?;
    let z = st.s.sub(&grad.scale(p.gamma));
    let (x_new, xbar) = denoise_state(d, &z, p.sigma, complex)?;
    let (s, q) = if accelerated {
        let (qbar, q_next) = match p.qbar {
            Some(v) => (v, st.q),
            None => {
                let qn = fista_next_q(st.q);
                ((st.q - 1.0) / qn, qn)
            }
        };
        (x_new.add(&x_new.sub(&st.x).scale(qbar)), q_next)
    } else {
        (x_new.clone(), st.q)
    };
    Ok(SolverState {
        x: x_new,
        z,
        u: st.u.clone(),
        s,
        q,
        k: st.k + 1,
        xbar: Some(xbar),
    })
}

pub fn pnp_pgm_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
) -> Result<SolverState> {
    p.validate(Scheme::Pgm)?;
    pgm_like_step(st, p, model, d, false)
}

pub fn pnp_apgm_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
) -> Result<SolverState> {
    p.validate(Scheme::Apgm)?;
    pgm_like_step(st, p, model, d, true)
}

pub fn red_admm_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
) -> Result<SolverState> {
    p.validate(Scheme::Red)?;
    let complex = model.state_is_complex();
    let (v, xbar) = denoise_state(d, &st.x, p.sigma, complex)?;
    let x = v
        .scale(p.lambda)
        .add(&st.z.sub(&st.u).scale(p.mu))
        .scale(1.0 / (p.mu + p.lambda));
    let z = model.data_prox(&x.add(&st.u), p.mu)?;
    let u = st.u.add(&x).sub(&z);
    Ok(SolverState {
        x,
        z,
        u,
        s: st.s.clone(),
        q: st.q,
        k: st.k + 1,
        xbar: Some(xbar),
    })
}

/// Which norm scales the AMP effective-noise estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DampNorm {
    /// sigma-hat = ||z|| / sqrt(N); avoids the over-estimation of the
    /// measured-count form on CS-MRI.
    PixelCount,
    /// sigma-hat = ||z|| / sqrt(M).
    MeasuredCount,
}

/// Effective-noise estimate from the residual.
pub fn damp_sigma_hat(z_norm: f64, count: usize, delta: f64) -> f64 {
    delta * z_norm / (count as f64).sqrt()
}

pub fn damp_step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
    norm: DampNorm,
    rng: &mut Rng,
) -> Result<SolverState> {
    p.validate(Scheme::Damp)?;
    if !model.is_linear() {
        return Err(Error::invalid(
            "damp requires a linear forward model (CS-MRI only)",
        ));
    }
    let (h, w) = model.dims();
    let n = h * w;
    let m_count = model.measured_count()?;

    let v = st.x.add(&model.adjoint_apply(&st.z)?);
    let count = match norm {
        DampNorm::PixelCount => n,
        DampNorm::MeasuredCount => m_count,
    };
    let sigma_hat = damp_sigma_hat(st.z.norm2(), count, p.delta).min(SIGMA_MAX);

    let vbar = v.real_part();
    let denoised = denoise(d, &vbar, sigma_hat)?;

    // one-probe Monte Carlo divergence of the denoiser at vbar
    let div = monte_carlo_divergence(d, &vbar, sigma_hat, rng)?;
    let onsager = st.z.scale(div / m_count as f64);

    let x = denoised.promote();
    let z = model
        .measurement()?
        .sub(&model.forward_apply(&x)?)
        .add(&onsager);
    Ok(SolverState {
        x,
        z,
        u: st.u.clone(),
        s: st.s.clone(),
        q: st.q,
        k: st.k + 1,
        xbar: Some(vbar),
    })
}

/// Monte Carlo divergence estimate with a single Rademacher probe and
/// perturbation scale 1e-3 * (1 + ||v||_inf).
pub fn monte_carlo_divergence(
    d: &Denoiser,
    v: &Tensor,
    sigma: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let eps = 1e-3 * (1.0 + v.max_abs());
    let probe: Vec<f64> = (0..v.len()).map(|_| rng.rademacher()).collect();
    let probe_t = Tensor::from_real(v.dims(), probe.clone())?;
    let base = denoise(d, v, sigma)?;
    let pert = denoise(d, &v.add(&probe_t.scale(eps)), sigma)?;
    let diff = pert.sub(&base);
    let mut acc = 0.0;
    for (p, dv) in probe.iter().zip(diff.real()) {
        acc += p * dv;
    }
    Ok(acc / eps)
}

/// Dispatch one scheme iteration.
pub fn step(
    st: &SolverState,
    p: &StepParams,
    model: &ObservationModel,
    d: &Denoiser,
    scheme: Scheme,
    opts: &SolverOptions,
    rng: &mut Rng,
) -> Result<SolverState> {
    match scheme {
        Scheme::Admm => pnp_admm_step(st, p, model, d),
        Scheme::Pgm => pnp_pgm_step(st, p, model, d),
        Scheme::Apgm => pnp_apgm_step(st, p, model, d),
        Scheme::Hqs => pnp_hqs_step(st, p, model, d),
        Scheme::Red => red_admm_step(st, p, model, d),
        Scheme::Damp => damp_step(st, p, model, d, opts.damp_norm, rng),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Iterations per policy decision block.
    pub block_iters: usize,
    /// Maximum number of blocks.
    pub max_blocks: usize,
    pub damp_norm: DampNorm,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            block_iters: 5,
            max_blocks: 6,
            damp_norm: DampNorm::PixelCount,
        }
    }
}

/// Per-iteration record of a trajectory.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub k: usize,
    pub params: StepParams,
    pub psnr: Option<f64>,
    /// Recovered image after this iteration.
    pub recovered: Tensor,
    /// Denoiser input of this iteration.
    pub xbar: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct IterationTrace {
    pub init_psnr: Option<f64>,
    pub rows: Vec<TraceRow>,
    /// Block index at which the policy stopped, if it stopped early.
    pub stopped_at_block: Option<usize>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.psnr).or(self.init_psnr)
    }

    /// Best PSNR over all iterations (optimal early stopping), with the
    /// 1-based iteration index achieving it.
    pub fn best_psnr(&self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = self.init_psnr.map(|p| (p, 0));
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(p) = row.psnr {
                if best.map(|(bp, _)| p > bp).unwrap_or(true) {
                    best = Some((p, i + 1));
                }
            }
        }
        best
    }
}

/// What a policy decides at the start of each block: stop now, or run the
/// block with the given per-iteration parameters.
#[derive(Clone, Debug)]
pub struct BlockDecision {
    pub stop: bool,
    /// Length `block_iters` when not stopping.
    pub params: Vec<StepParams>,
}

/// Everything a policy may look at when deciding.
pub struct ActContext<'a> {
    pub block: usize,
    pub n_blocks: usize,
    pub block_iters: usize,
    pub state: &'a SolverState,
    pub model: &'a ObservationModel,
    pub denoiser: &'a Denoiser,
    pub scheme: Scheme,
    pub truth: Option<&'a Tensor>,
    pub opts: &'a SolverOptions,
}

pub trait PolicyAgent {
    fn decide(&mut self, ctx: &ActContext) -> Result<BlockDecision>;
}

pub struct RunOutcome {
    pub state: SolverState,
    pub trace: IterationTrace,
}

/// Run a policy-controlled trajectory: the policy is consulted once per block
/// of `block_iters` iterations and may stop before any block. The trajectory
/// never exceeds `block_iters * max_blocks` iterations, and a non-finite
/// state aborts with a diagnostic.
pub fn run_solver(
    model: &ObservationModel,
    scheme: Scheme,
    policy: &mut dyn PolicyAgent,
    d: &Denoiser,
    truth: Option<&Tensor>,
    opts: &SolverOptions,
    rng: &mut Rng,
) -> Result<RunOutcome> {
    let mut st = init_state(model, scheme)?;
    let mut trace = IterationTrace {
        init_psnr: match truth {
            Some(t) => Some(psnr(&st.recovered(), t)?),
            None => None,
        },
        ..Default::default()
    };
    for block in 0..opts.max_blocks {
        let decision = {
            let ctx = ActContext {
                block,
                n_blocks: opts.max_blocks,
                block_iters: opts.block_iters,
                state: &st,
                model,
                denoiser: d,
                scheme,
                truth,
                opts,
            };
            policy.decide(&ctx)?
        };
        if decision.stop {
            trace.stopped_at_block = Some(block);
            break;
        }
        if decision.params.len() != opts.block_iters {
            return Err(Error::invalid(format!(
                "policy returned {} parameter sets for a block of {}",
                decision.params.len(),
                opts.block_iters
            )));
        }
        for p in &decision.params {
            st = step(&st, p, model, d, scheme, opts, rng)?;
            if !st.all_finite() {
                return Err(Error::Numeric(format!(
                    "solver state became non-finite at iteration {} (scheme {}, sigma {:.4})",
                    st.k,
                    scheme.name(),
                    p.sigma
                )));
            }
            trace.rows.push(TraceRow {
                k: st.k,
                params: *p,
                psnr: match truth {
                    Some(t) => Some(psnr(&st.recovered(), t)?),
                    None => None,
                },
                recovered: st.recovered(),
                xbar: st.xbar.clone().unwrap_or_else(|| st.x.real_part()),
            });
        }
    }
    Ok(RunOutcome { state: st, trace })
}
