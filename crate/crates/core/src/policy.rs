//! Parameter-selection policies: the grid-search baselines and the learned
//! policy network.
//!
//! All policies emit [`StepParams`] inside the declared grid bounds. The
//! learned policy maps sigmoid head outputs to physical ranges: denoising
//! strength linearly over [0, SIGMA_MAX], penalty/step-size parameters
//! geometrically over [1e-3, 1] (they act multiplicatively), the APGM
//! inertial weight directly, and the AMP multiplier geometrically over
//! [1/2, 2].

use crate::denoise::{Denoiser, SIGMA_MAX};
use crate::env::{encode_observation, Action, Observation};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::micrograd::bundle::{read_net, write_net};
use crate::micrograd::layers::softmax;
use crate::micrograd::{LayerSpec, NetParams};
use crate::problems::ObservationModel;
use crate::rng::Rng;
use crate::solver::{
    run_solver, step, ActContext, BlockDecision, IterationTrace, PolicyAgent,
    RunOutcome, Scheme, SolverOptions, SolverState, StepParams,
};
use crate::tensor::Tensor;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const RATE_LO: f64 = 1e-3;
pub const RATE_HI: f64 = 1.0;
pub const DELTA_LO: f64 = 0.5;
pub const DELTA_HI: f64 = 2.0;

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Search space for the grid-based baseline policies.
#[derive(Clone, Debug)]
pub struct ParamGrid {
    /// Denoising strengths, geometric over [1/255, 50/255].
    pub sigmas: Vec<f64>,
    /// Penalty (mu) or step size (gamma) values, geometric over [1e-3, 1].
    pub rates: Vec<f64>,
    /// RED prior weights.
    pub lambdas: Vec<f64>,
    /// AMP noise multipliers.
    pub deltas: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            sigmas: geometric(1.0 / 255.0, SIGMA_MAX, 12),
            rates: geometric(RATE_LO, RATE_HI, 8),
            lambdas: geometric(RATE_LO, RATE_HI, 8),
            deltas: geometric(DELTA_LO, DELTA_HI, 8),
        }
    }
}

impl ParamGrid {
    /// Constant-parameter candidates for a scheme, in a fixed search order
    /// (sigma ascending outermost) so argmax ties resolve toward smaller
    /// sigma, then smaller rate.
    pub fn points(&self, scheme: Scheme) -> Vec<StepParams> {
        let mut out = Vec::new();
        match scheme {
            Scheme::Admm | Scheme::Hqs => {
                for &sigma in &self.sigmas {
                    for &mu in &self.rates {
                        out.push(StepParams { sigma, mu, ..Default::default() });
                    }
                }
            }
            Scheme::Pgm | Scheme::Apgm => {
                for &sigma in &self.sigmas {
                    for &gamma in &self.rates {
                        out.push(StepParams { sigma, gamma, qbar: None, ..Default::default() });
                    }
                }
            }
            Scheme::Red => {
                for &sigma in &self.sigmas {
                    for &mu in &self.rates {
                        for &lambda in &self.lambdas {
                            out.push(StepParams { sigma, mu, lambda, ..Default::default() });
                        }
                    }
                }
            }
            Scheme::Damp => {
                for &delta in &self.deltas {
                    out.push(StepParams { delta, ..Default::default() });
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// action mapping for the learned policy
// ---------------------------------------------------------------------------

fn geo_map(p: f64, lo: f64, hi: f64) -> f64 {
    lo * (hi / lo).powf(p)
}

/// Map sigmoid outputs in (0,1) to the scheme's physical parameters.
pub fn map_unit_to_params(scheme: Scheme, unit: &[f64]) -> Result<StepParams> {
    let expect = scheme.param_names().len();
    if unit.len() != expect {
        return Err(Error::dims(format!(
            "{} expects {expect} continuous actions, got {}",
            scheme.name(),
            unit.len()
        )));
    }
    let mut p = StepParams::default();
    match scheme {
        Scheme::Admm | Scheme::Hqs => {
            p.sigma = (unit[0] * SIGMA_MAX).clamp(0.0, SIGMA_MAX);
            p.mu = geo_map(unit[1], RATE_LO, RATE_HI);
        }
        Scheme::Pgm => {
            p.sigma = (unit[0] * SIGMA_MAX).clamp(0.0, SIGMA_MAX);
            p.gamma = geo_map(unit[1], RATE_LO, RATE_HI);
        }
        Scheme::Apgm => {
            p.sigma = (unit[0] * SIGMA_MAX).clamp(0.0, SIGMA_MAX);
            p.gamma = geo_map(unit[1], RATE_LO, RATE_HI);
            p.qbar = Some(unit[2].clamp(0.0, 1.0 - 1e-9));
        }
        Scheme::Red => {
            p.sigma = (unit[0] * SIGMA_MAX).clamp(0.0, SIGMA_MAX);
            p.mu = geo_map(unit[1], RATE_LO, RATE_HI);
            p.lambda = geo_map(unit[2], RATE_LO, RATE_HI);
        }
        Scheme::Damp => {
            p.delta = geo_map(unit[0], DELTA_LO, DELTA_HI);
        }
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// policy networks
// ---------------------------------------------------------------------------

pub const FEATURE_DIM: usize = 64;

/// Four stride-2 conv stages with widths {16, 32, 64, 64} and a global
/// average pool down to a 64-dim feature vector.
pub fn trunk_topology(in_ch: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv { in_ch, out_ch: 16, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 16, out_ch: 16, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 16, out_ch: 16, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 16, out_ch: 32, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 32, out_ch: 32, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 32, out_ch: 64, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 64, out_ch: 64, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 64, out_ch: 64, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv { in_ch: 64, out_ch: 64, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
    ]
}

fn stop_head_topology() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { n_in: FEATURE_DIM, n_out: 32 },
        LayerSpec::Relu,
        LayerSpec::Dense { n_in: 32, n_out: 2 },
    ]
}

fn param_head_topology(k: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { n_in: FEATURE_DIM, n_out: 32 },
        LayerSpec::Relu,
        LayerSpec::Dense { n_in: 32, n_out: k },
        LayerSpec::Sigmoid,
    ]
}

/// Policy network: shared convolutional trunk, a termination head emitting
/// two-class logits, and a continuous head emitting sigmoid outputs.
#[derive(Clone, Debug)]
pub struct PolicyNets {
    pub trunk: NetParams,
    pub stop_head: NetParams,
    pub param_head: NetParams,
    pub scheme: Scheme,
    pub obs_channels: usize,
}

impl PolicyNets {
    pub fn init(scheme: Scheme, obs_channels: usize, rng: &mut Rng) -> PolicyNets {
        let k = scheme.param_names().len();
        PolicyNets {
            trunk: NetParams::init(trunk_topology(obs_channels), rng),
            stop_head: NetParams::init(stop_head_topology(), rng),
            param_head: NetParams::init(param_head_topology(k), rng),
            scheme,
            obs_channels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.stop_head.param_count() + self.param_head.param_count()
    }

    /// Forward pass to (stop logits, unit action vector).
    pub fn forward(&self, obs: &Observation) -> Result<(Vec<f64>, Vec<f64>)> {
        let (feat, _) = self.trunk.forward(&obs.data)?;
        let (logits, _) = self.stop_head.forward(&feat)?;
        let (unit, _) = self.param_head.forward(&feat)?;
        Ok((logits.real().to_vec(), unit.real().to_vec()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    /// Sample the stop decision from the two-class categorical.
    Train,
    /// Argmax stop decision; ties break toward continuing.
    Eval,
}

/// One policy decision from an observation.
pub fn learned_policy_act(
    nets: &PolicyNets,
    obs: &Observation,
    mode: ActMode,
    rng: &mut Rng,
) -> Result<Action> {
    let (logits, unit) = nets.forward(obs)?;
    let probs = softmax(&logits);
    let stop = match mode {
        ActMode::Train => rng.uniform() < probs[1],
        ActMode::Eval => logits[1] > logits[0],
    };
    Ok(Action {
        stop,
        params: map_unit_to_params(nets.scheme, &unit)?,
    })
}

// ---------------------------------------------------------------------------
// the policy family
// ---------------------------------------------------------------------------

pub enum Policy {
    /// Constant sigma = 15/255, mu = 0.1; never stops.
    Fixed,
    /// Geometrically decaying per-iteration sigma schedule with fixed mu.
    Handcrafted {
        sigma_start: f64,
        sigma_end: f64,
        total_iters: usize,
    },
    /// A grid point found by oracle or fixed-optimal search.
    Constant { params: StepParams, label: String },
    /// Re-searches the grid for the best next block at every decision.
    Greedy { grid: ParamGrid },
    /// Policy network inference.
    Learned {
        nets: PolicyNets,
        mode: ActMode,
        rng: Rng,
    },
}

impl Policy {
    pub fn fixed() -> Policy {
        Policy::Fixed
    }

    pub fn handcrafted(sigma_start: f64, sigma_end: f64, total_iters: usize) -> Result<Policy> {
        if !(sigma_start > sigma_end && sigma_end > 0.0) {
            return Err(Error::invalid(format!(
                "handcrafted schedule needs sigma_start > sigma_end > 0, got {sigma_start} > {sigma_end}"
            )));
        }
        if sigma_start > SIGMA_MAX {
            return Err(Error::invalid("sigma_start beyond SIGMA_MAX"));
        }
        Ok(Policy::Handcrafted { sigma_start, sigma_end, total_iters })
    }

    pub fn name(&self) -> String {
        match self {
            Policy::Fixed => "fixed".into(),
            Policy::Handcrafted { .. } => "handcrafted".into(),
            Policy::Constant { label, .. } => label.clone(),
            Policy::Greedy { .. } => "greedy".into(),
            Policy::Learned { .. } => "learned".into(),
        }
    }
}

/// Per-iteration sigma of the handcrafted schedule: geometric interpolation
/// from start to end across `total_iters` iterations.
pub fn handcrafted_sigma(sigma_start: f64, sigma_end: f64, total_iters: usize, k: usize) -> f64 {
    if total_iters <= 1 {
        return sigma_start;
    }
    let t = k.min(total_iters - 1) as f64 / (total_iters - 1) as f64;
    sigma_start * (sigma_end / sigma_start).powf(t)
}

pub const FIXED_SIGMA: f64 = 15.0 / 255.0;
pub const FIXED_MU: f64 = 0.1;

impl PolicyAgent for Policy {
    fn decide(&mut self, ctx: &ActContext) -> Result<BlockDecision> {
        let m = ctx.block_iters;
        match self {
            Policy::Fixed => Ok(BlockDecision {
                stop: false,
                params: vec![
                    StepParams {
                        sigma: FIXED_SIGMA,
                        mu: FIXED_MU,
                        gamma: FIXED_MU,
                        lambda: FIXED_MU,
                        qbar: None,
                        delta: 1.0,
                    };
                    m
                ],
            }),
            Policy::Handcrafted { sigma_start, sigma_end, total_iters } => {
                let params = (0..m)
                    .map(|i| {
                        let k = ctx.block * m + i;
                        StepParams {
                            sigma: handcrafted_sigma(*sigma_start, *sigma_end, *total_iters, k),
                            mu: FIXED_MU,
                            gamma: FIXED_MU,
                            lambda: FIXED_MU,
                            qbar: None,
                            delta: 1.0,
                        }
                    })
                    .collect();
                Ok(BlockDecision { stop: false, params })
            }
            Policy::Constant { params, .. } => Ok(BlockDecision {
                stop: false,
                params: vec![*params; m],
            }),
            Policy::Greedy { grid } => {
                let truth = ctx
                    .truth
                    .ok_or_else(|| Error::invalid("greedy policy requires ground truth"))?;
                let p = greedy_step(ctx.state, ctx.model, truth, grid, ctx.scheme, ctx.denoiser, ctx.opts)?;
                Ok(BlockDecision { stop: false, params: vec![p; m] })
            }
            Policy::Learned { nets, mode, rng } => {
                let obs = encode_observation(
                    ctx.state,
                    ctx.model.effective_noise_sigma(),
                    ctx.block,
                    ctx.n_blocks,
                )?;
                let action = learned_policy_act(nets, &obs, *mode, rng)?;
                Ok(BlockDecision {
                    stop: action.stop,
                    params: vec![action.params; m],
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// grid searches
// ---------------------------------------------------------------------------

/// Full trajectory with constant parameters; convenience for searches.
pub fn run_constant(
    model: &ObservationModel,
    scheme: Scheme,
    d: &Denoiser,
    params: StepParams,
    truth: Option<&Tensor>,
    opts: &SolverOptions,
) -> Result<RunOutcome> {
    let mut policy = Policy::Constant { params, label: "constant".into() };
    let mut rng = Rng::new(0x5EED);
    run_solver(model, scheme, &mut policy, d, truth, opts, &mut rng)
}

fn final_psnr(trace: &IterationTrace) -> f64 {
    trace.final_psnr().unwrap_or(f64::NEG_INFINITY)
}

/// Exhaustive search for the constant parameters maximizing the final PSNR
/// on one instance. Ties break toward the earlier grid point, i.e. smaller
/// sigma then smaller rate.
pub fn oracle_search(
    model: &ObservationModel,
    truth: &Tensor,
    grid: &ParamGrid,
    scheme: Scheme,
    d: &Denoiser,
    opts: &SolverOptions,
) -> Result<Policy> {
    let points = grid.points(scheme);
    if points.is_empty() {
        return Err(Error::invalid("empty parameter grid"));
    }
    let mut best: Option<(f64, StepParams)> = None;
    for p in points {
        let out = run_constant(model, scheme, d, p, Some(truth), opts)?;
        let score = final_psnr(&out.trace);
        if best.map(|(b, _)| score > b).unwrap_or(true) {
            best = Some((score, p));
        }
    }
    let (_, params) = best.unwrap();
    Ok(Policy::Constant { params, label: "oracle".into() })
}

/// Single grid point maximizing the mean final PSNR across a dataset.
pub fn fixed_optimal_search(
    instances: &[(ObservationModel, Tensor)],
    grid: &ParamGrid,
    scheme: Scheme,
    d: &Denoiser,
    opts: &SolverOptions,
) -> Result<Policy> {
    if instances.is_empty() {
        return Err(Error::invalid("fixed-optimal search needs a non-empty dataset"));
    }
    let points = grid.points(scheme);
    let mut best: Option<(f64, StepParams)> = None;
    for p in points {
        let mut total = 0.0;
        for (model, truth) in instances {
            let out = run_constant(model, scheme, d, p, Some(truth), opts)?;
            total += final_psnr(&out.trace);
        }
        let mean = total / instances.len() as f64;
        if best.map(|(b, _)| mean > b).unwrap_or(true) {
            best = Some((mean, p));
        }
    }
    let (_, params) = best.unwrap();
    Ok(Policy::Constant { params, label: "fixed-optimal".into() })
}

/// Grid point maximizing the PSNR after the next block from the given state.
pub fn greedy_step(
    state: &SolverState,
    model: &ObservationModel,
    truth: &Tensor,
    grid: &ParamGrid,
    scheme: Scheme,
    d: &Denoiser,
    opts: &SolverOptions,
) -> Result<StepParams> {
    let mut best: Option<(f64, StepParams)> = None;
    for p in grid.points(scheme) {
        let mut st = state.clone();
        let mut rng = Rng::new(0x6EED);
        let mut ok = true;
        for _ in 0..opts.block_iters {
            match step(&st, &p, model, d, scheme, opts, &mut rng) {
                Ok(next) if next.all_finite() => st = next,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let score = psnr(&st.recovered(), truth)?;
        if best.map(|(b, _)| score > b).unwrap_or(true) {
            best = Some((score, p));
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Numeric("no grid point produced a finite block".into()))
}

// ---------------------------------------------------------------------------
// checkpoint i/o
// ---------------------------------------------------------------------------

fn write_length_prefixed<W: Write>(w: &mut W, net: &NetParams) -> Result<()> {
    let mut buf = Vec::new();
    write_net(&mut buf, net)?;
    writeln!(w, "net {}", buf.len())?;
    w.write_all(&buf)?;
    Ok(())
}

fn read_length_prefixed<R: BufRead>(r: &mut R) -> Result<NetParams> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Format("truncated policy checkpoint".into()));
    }
    let len: usize = line
        .trim()
        .strip_prefix("net ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad net length header".into()))?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    read_net(buf.as_slice())
}

pub fn write_policy<W: Write>(w: &mut W, nets: &PolicyNets) -> Result<()> {
    writeln!(w, "POLICY1")?;
    writeln!(w, "scheme {}", nets.scheme.name())?;
    writeln!(w, "channels {}", nets.obs_channels)?;
    write_length_prefixed(w, &nets.trunk)?;
    write_length_prefixed(w, &nets.stop_head)?;
    write_length_prefixed(w, &nets.param_head)?;
    Ok(())
}

pub fn read_policy<R: Read>(r: R) -> Result<PolicyNets> {
    let mut br = BufReader::new(r);
    let mut line = String::new();
    br.read_line(&mut line)?;
    if line.trim() != "POLICY1" {
        return Err(Error::Format("bad policy checkpoint magic".into()));
    }
    line.clear();
    br.read_line(&mut line)?;
    let scheme = Scheme::parse(
        line.trim()
            .strip_prefix("scheme ")
            .ok_or_else(|| Error::Format("missing scheme line".into()))?,
    )?;
    line.clear();
    br.read_line(&mut line)?;
    let obs_channels: usize = line
        .trim()
        .strip_prefix("channels ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("missing channels line".into()))?;
    let trunk = read_length_prefixed(&mut br)?;
    let stop_head = read_length_prefixed(&mut br)?;
    let param_head = read_length_prefixed(&mut br)?;
    Ok(PolicyNets { trunk, stop_head, param_head, scheme, obs_channels })
}

pub fn save_policy(path: impl AsRef<Path>, nets: &PolicyNets) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_policy(&mut f, nets)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyNets> {
    read_policy(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::obs_channels;
    use crate::problems::{csmri_forward, sampling_mask, MaskKind};
    use crate::solver::{init_state, Scheme};

    #[test]
    fn grid_is_increasing_and_positive() {
        let g = ParamGrid::default();
        assert_eq!(g.sigmas.len(), 12);
        assert_eq!(g.rates.len(), 8);
        assert!((g.sigmas[0] - 1.0 / 255.0).abs() < 1e-15);
        assert!((g.sigmas[11] - SIGMA_MAX).abs() < 1e-15);
        assert!((g.rates[0] - 1e-3).abs() < 1e-15);
        assert!((g.rates[7] - 1.0).abs() < 1e-12);
        for w in g.sigmas.windows(2) {
            assert!(w[1] > w[0] && w[0] > 0.0);
        }
        for w in g.rates.windows(2) {
            assert!(w[1] > w[0] && w[0] > 0.0);
        }
    }

    #[test]
    fn fixed_policy_is_constant_never_stops() {
        let mut rng = Rng::new(1);
        let truth = Tensor::filled(&[8, 8], 0.5);
        let mask = Tensor::filled(&[8, 8], 1.0);
        let m = csmri_forward(&truth, &mask, 0.0, &mut rng).unwrap();
        let model = ObservationModel::CsMri(m);
        let st = init_state(&model, Scheme::Admm).unwrap();
        let opts = SolverOptions::default();
        let d = Denoiser::tv();
        let mut pol = Policy::fixed();
        let mut decisions = Vec::new();
        for block in [0usize, 5] {
            let ctx = ActContext {
                block,
                n_blocks: 6,
                block_iters: 5,
                state: &st,
                model: &model,
                denoiser: &d,
                scheme: Scheme::Admm,
                truth: None,
                opts: &opts,
            };
            decisions.push(pol.decide(&ctx).unwrap());
        }
        assert!(!decisions[0].stop && !decisions[1].stop);
        assert_eq!(decisions[0].params[0], decisions[1].params[0]);
        assert_eq!(decisions[0].params[0].sigma, 15.0 / 255.0);
        assert_eq!(decisions[0].params[0].mu, 0.1);
    }

    #[test]
    fn handcrafted_schedule_endpoints_and_monotonicity() {
        let (s0, s1, n) = (40.0 / 255.0, 5.0 / 255.0, 30);
        assert_eq!(handcrafted_sigma(s0, s1, n, 0), s0);
        let last = handcrafted_sigma(s0, s1, n, 29);
        assert!((last - s1).abs() < 1e-12, "endpoint {last}");
        // spot value: sigma_k = (40/255) * (1/8)^(k/29)
        let k = 13;
        let expect = s0 * (1.0f64 / 8.0).powf(k as f64 / 29.0);
        assert!((handcrafted_sigma(s0, s1, n, k) - expect).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let s = handcrafted_sigma(s0, s1, n, k);
            assert!(s < prev);
            prev = s;
        }
        assert!(Policy::handcrafted(0.01, 0.02, 30).is_err());
    }

    #[test]
    fn mapping_zero_logits_hit_documented_midpoints() {
        // sigmoid(0) = 0.5: sigma = 25/255, mu = sqrt(1e-3 * 1) ~ 0.0316
        let p = map_unit_to_params(Scheme::Admm, &[0.5, 0.5]).unwrap();
        assert!((p.sigma - 25.0 / 255.0).abs() < 1e-15);
        assert!((p.mu - 10f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn mapping_monotone_and_in_bounds() {
        let mut rng = Rng::new(2);
        for scheme in Scheme::ALL {
            let k = scheme.param_names().len();
            let mut prev_sigma = -1.0;
            for trial in 0..10_000 {
                let unit: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
                let p = map_unit_to_params(scheme, &unit).unwrap();
                p.validate(scheme).unwrap();
                assert!(p.sigma >= 0.0 && p.sigma <= SIGMA_MAX);
                assert!(p.mu >= RATE_LO - 1e-12 && p.mu <= RATE_HI + 1e-12);
                assert!(p.delta >= DELTA_LO - 1e-12 && p.delta <= DELTA_HI + 1e-12);
                // monotonicity spot check on the sigma coordinate
                if scheme != Scheme::Damp && trial % 100 == 0 {
                    let mut hi = unit.clone();
                    hi[0] = (hi[0] + 0.1).min(1.0);
                    let p2 = map_unit_to_params(scheme, &hi).unwrap();
                    assert!(p2.sigma >= p.sigma);
                    let _ = prev_sigma;
                    prev_sigma = p.sigma;
                }
            }
        }
    }

    #[test]
    fn learned_act_zero_weights_behaviour() {
        // zero-weight heads emit zero logits: stop probability 0.5 in train
        // mode, continue in eval mode, and midpoint parameters.
        let mut rng = Rng::new(3);
        let mut nets = PolicyNets::init(Scheme::Admm, 8, &mut rng);
        for net in [&mut nets.stop_head, &mut nets.param_head] {
            for b in net.blocks_mut() {
                b.value = Tensor::zeros_real(b.value.dims());
            }
            net.bump_version();
        }
        let obs = Observation { data: Tensor::filled(&[8, 16, 16], 0.3) };
        let mut act_rng = Rng::new(4);
        let eval = learned_policy_act(&nets, &obs, ActMode::Eval, &mut act_rng).unwrap();
        assert!(!eval.stop, "tie must break toward continue");
        assert!((eval.params.sigma - 25.0 / 255.0).abs() < 1e-12);
        assert!((eval.params.mu - 10f64.powf(-1.5)).abs() < 1e-9);

        // stochastic mode stops about half the time
        let mut stops = 0;
        for _ in 0..2000 {
            if learned_policy_act(&nets, &obs, ActMode::Train, &mut act_rng).unwrap().stop {
                stops += 1;
            }
        }
        assert!((stops as f64 / 2000.0 - 0.5).abs() < 0.05, "stop rate {stops}");
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = Rng::new(5);
        let nets = PolicyNets::init(Scheme::Red, 5, &mut rng);
        let obs = Observation {
            data: Tensor::from_real(&[5, 16, 16], (0..5 * 256).map(|i| (i % 7) as f64 / 7.0).collect())
                .unwrap(),
        };
        let mut r1 = Rng::new(6);
        let mut r2 = Rng::new(7);
        let a = learned_policy_act(&nets, &obs, ActMode::Eval, &mut r1).unwrap();
        let b = learned_policy_act(&nets, &obs, ActMode::Eval, &mut r2).unwrap();
        assert_eq!(a.stop, b.stop);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn policy_net_bounds_over_random_observations() {
        let mut rng = Rng::new(8);
        let nets = PolicyNets::init(Scheme::Apgm, 5, &mut rng);
        for i in 0..200 {
            let obs = Observation {
                data: Tensor::from_real(
                    &[5, 8, 8],
                    (0..5 * 64).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
                )
                .unwrap(),
            };
            let mut arng = Rng::new(i);
            let a = learned_policy_act(&nets, &obs, ActMode::Train, &mut arng).unwrap();
            a.params.validate(Scheme::Apgm).unwrap();
        }
    }

    #[test]
    fn trunk_parameter_budget() {
        let mut rng = Rng::new(9);
        let nets = PolicyNets::init(Scheme::Admm, 8, &mut rng);
        assert!(
            nets.trunk.param_count() <= 200_000,
            "feature extractor has {} params",
            nets.trunk.param_count()
        );
    }

    #[test]
    fn searches_on_tiny_instance() {
        // singleton grid returns that point; single-image fixed-optimal
        // equals oracle on that image; all deterministic.
        let spec = crate::phantom::PhantomSpec { size: 16, seed: 21, ..Default::default() };
        let truth = crate::phantom::generate_phantoms(&spec, 1).unwrap().pop().unwrap();
        let mut rng = Rng::new(10);
        let mask = sampling_mask(MaskKind::Radial, 16, 16, 0.4, &mut rng).unwrap();
        let m = csmri_forward(&truth, &mask, 10.0 / 255.0, &mut rng).unwrap();
        let model = ObservationModel::CsMri(m);
        let d = Denoiser::tv();
        let opts = SolverOptions { block_iters: 2, max_blocks: 3, ..Default::default() };

        let single = ParamGrid {
            sigmas: vec![12.0 / 255.0],
            rates: vec![0.05],
            lambdas: vec![0.1],
            deltas: vec![1.0],
        };
        let pol = oracle_search(&model, &truth, &single, Scheme::Admm, &d, &opts).unwrap();
        match &pol {
            Policy::Constant { params, .. } => {
                assert!((params.sigma - 12.0 / 255.0).abs() < 1e-15);
                assert!((params.mu - 0.05).abs() < 1e-15);
            }
            _ => panic!("expected constant policy"),
        }

        let small = ParamGrid {
            sigmas: vec![5.0 / 255.0, 15.0 / 255.0, 30.0 / 255.0],
            rates: vec![0.01, 0.1],
            lambdas: vec![0.1],
            deltas: vec![1.0],
        };
        let dataset = vec![(model.clone(), truth.clone())];
        let o = oracle_search(&model, &truth, &small, Scheme::Admm, &d, &opts).unwrap();
        let f = fixed_optimal_search(&dataset, &small, Scheme::Admm, &d, &opts).unwrap();
        match (&o, &f) {
            (Policy::Constant { params: po, .. }, Policy::Constant { params: pf, .. }) => {
                assert_eq!(po, pf);
            }
            _ => panic!("expected constant policies"),
        }

        // oracle dominance over the whole grid on this instance
        let oracle_psnr = match &o {
            Policy::Constant { params, .. } => {
                final_psnr(&run_constant(&model, Scheme::Admm, &d, *params, Some(&truth), &opts).unwrap().trace)
            }
            _ => unreachable!(),
        };
        for p in small.points(Scheme::Admm) {
            let got = final_psnr(&run_constant(&model, Scheme::Admm, &d, p, Some(&truth), &opts).unwrap().trace);
            assert!(oracle_psnr >= got - 1e-12);
        }
    }

    #[test]
    fn greedy_beats_every_fixed_choice_on_first_block() {
        let spec = crate::phantom::PhantomSpec { size: 16, seed: 22, ..Default::default() };
        let truth = crate::phantom::generate_phantoms(&spec, 1).unwrap().pop().unwrap();
        let mut rng = Rng::new(11);
        let mask = sampling_mask(MaskKind::Radial, 16, 16, 0.4, &mut rng).unwrap();
        let m = csmri_forward(&truth, &mask, 10.0 / 255.0, &mut rng).unwrap();
        let model = ObservationModel::CsMri(m);
        let d = Denoiser::tv();
        let opts = SolverOptions { block_iters: 3, max_blocks: 2, ..Default::default() };
        let grid = ParamGrid {
            sigmas: vec![5.0 / 255.0, 20.0 / 255.0, 40.0 / 255.0],
            rates: vec![0.01, 0.1, 1.0],
            lambdas: vec![0.1],
            deltas: vec![1.0],
        };
        let st = init_state(&model, Scheme::Admm).unwrap();
        let best = greedy_step(&st, &model, &truth, &grid, Scheme::Admm, &d, &opts).unwrap();

        let block_psnr = |p: StepParams| {
            let mut s = st.clone();
            let mut rng = Rng::new(0x6EED);
            for _ in 0..opts.block_iters {
                s = step(&s, &p, &model, &d, Scheme::Admm, &opts, &mut rng).unwrap();
            }
            psnr(&s.recovered(), &truth).unwrap()
        };
        let greedy_score = block_psnr(best);
        for p in grid.points(Scheme::Admm) {
            assert!(greedy_score >= block_psnr(p) - 1e-12);
        }
    }

    #[test]
    fn policy_checkpoint_roundtrip() {
        let mut rng = Rng::new(12);
        let nets = PolicyNets::init(Scheme::Apgm, 8, &mut rng);
        let mut buf = Vec::new();
        write_policy(&mut buf, &nets).unwrap();
        let back = read_policy(buf.as_slice()).unwrap();
        assert_eq!(back.scheme, Scheme::Apgm);
        assert_eq!(back.obs_channels, 8);
        assert_eq!(back.param_count(), nets.param_count());
        let obs = Observation { data: Tensor::filled(&[8, 16, 16], 0.2) };
        let (l0, u0) = nets.forward(&obs).unwrap();
        let (l1, u1) = back.forward(&obs).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(u0, u1);
    }

    #[test]
    fn obs_channel_helper_matches_policy_init() {
        let mut rng = Rng::new(13);
        let truth = Tensor::filled(&[8, 8], 0.4);
        let mask = Tensor::filled(&[8, 8], 1.0);
        let m = csmri_forward(&truth, &mask, 0.0, &mut rng).unwrap();
        let model = ObservationModel::CsMri(m);
        assert_eq!(obs_channels(&model), 8);
    }
}
