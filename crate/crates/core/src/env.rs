//! MDP wrapper around a solver: observation encoding, block transitions,
//! rewards, returns, and the replay buffer.
//!
//! A decision step ("block") runs `m` solver iterations with the chosen
//! parameters and rewards the PSNR increment minus a fixed per-block penalty
//! `eta`, so stopping becomes attractive once gains fall below `eta`.

use crate::denoise::{Denoiser, SIGMA_MAX};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::problems::ObservationModel;
use crate::rng::Rng;
use crate::solver::{init_state, step, Scheme, SolverOptions, SolverState, StepParams};
use crate::tensor::Tensor;
use std::collections::VecDeque;
use std::sync::Arc;

/// Channel stack fed to the policy and value networks: the optimization
/// variables (real/imag planes where complex) plus two constant auxiliary
/// planes carrying the noise level and the normalized step count.
#[derive(Clone, Debug)]
pub struct Observation {
    /// Real tensor with dims [channels, H, W].
    pub data: Tensor,
}

/// Channels produced for a given problem: x, z, u planes (doubled when the
/// state is complex) plus the noise-level and step-count planes.
pub fn obs_channels(model: &ObservationModel) -> usize {
    if model.state_is_complex() {
        3 * 2 + 2
    } else {
        3 + 2
    }
}

fn push_planes(out: &mut Vec<f64>, t: &Tensor) {
    if t.is_complex() {
        out.extend(t.real_part().real());
        out.extend(t.imag_part().real());
    } else {
        out.extend(t.real());
    }
}

/// Stack [x, z, u, noise plane, step plane]; the noise plane holds
/// `noise_level / SIGMA_MAX` and the step plane `step_index / n_blocks`,
/// both clamped to [0, 1].
pub fn encode_observation(
    st: &SolverState,
    noise_level: f64,
    step_index: usize,
    n_blocks: usize,
) -> Result<Observation> {
    if step_index > n_blocks {
        return Err(Error::invalid(format!(
            "step index {step_index} beyond horizon {n_blocks}"
        )));
    }
    let dims = st.x.dims();
    if dims.len() != 2 {
        return Err(Error::dims("state tensors must be H x W"));
    }
    let (h, w) = (dims[0], dims[1]);
    let mut data = Vec::new();
    push_planes(&mut data, &st.x);
    push_planes(&mut data, &st.z);
    push_planes(&mut data, &st.u);
    let noise = (noise_level / SIGMA_MAX).clamp(0.0, 1.0);
    data.extend(std::iter::repeat(noise).take(h * w));
    let frac = (step_index as f64 / n_blocks as f64).clamp(0.0, 1.0);
    data.extend(std::iter::repeat(frac).take(h * w));
    let channels = data.len() / (h * w);
    Ok(Observation {
        data: Tensor::from_real(&[channels, h, w], data)?,
    })
}

/// Discrete stop decision plus the continuous parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct Action {
    pub stop: bool,
    pub params: StepParams,
}

/// Sum of discounted rewards.
pub fn discounted_return(rewards: &[f64], rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("discount {rho} outside [0, 1]")));
    }
    let mut acc = 0.0;
    let mut weight = 1.0;
    for &r in rewards {
        acc += weight * r;
        weight *= rho;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug)]
pub struct EnvConfig {
    /// Solver iterations per decision step.
    pub m: usize,
    /// Maximum number of decision steps N.
    pub n_blocks: usize,
    /// Per-block penalty in the reward.
    pub eta: f64,
    /// Discount factor.
    pub rho: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { m: 5, n_blocks: 6, eta: 0.05, rho: 0.99 }
    }
}

/// A measured problem instance together with its ground truth.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: ObservationModel,
    pub truth: Tensor,
}

/// MDP state: the solver variables, the block index, and the instance.
#[derive(Clone)]
pub struct PnpState {
    pub solver: SolverState,
    pub t: usize,
    pub instance: Arc<Instance>,
}

impl std::fmt::Debug for PnpState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PnpState(t={}, k={})", self.t, self.solver.k)
    }
}

pub struct Transition<S> {
    pub next: S,
    pub reward: f64,
    /// True when the successor state must not be bootstrapped from
    /// (stop action taken or horizon reached).
    pub terminal: bool,
}

/// The environment interface the trainer works against. The PnP environment
/// is the real implementation; tests use small synthetic ones.
pub trait Mdp {
    type State: Clone;
    fn observe(&self, s: &Self::State) -> Result<Observation>;
    fn transition(&self, s: &Self::State, a: &Action) -> Result<Transition<Self::State>>;
    fn horizon(&self) -> usize;
    /// Continuous action coordinates consumed by this environment's scheme.
    fn action_dim(&self) -> usize;
    /// Optional scalar quality score for logging (PSNR for the PnP env).
    fn log_score(&self, _s: &Self::State) -> Option<f64> {
        None
    }
}

/// Solver-backed environment for one (scheme, denoiser) pair.
pub struct PnpEnv {
    pub cfg: EnvConfig,
    pub scheme: Scheme,
    pub denoiser: Denoiser,
    pub opts: SolverOptions,
}

impl PnpEnv {
    pub fn new(cfg: EnvConfig, scheme: Scheme, denoiser: Denoiser) -> PnpEnv {
        let opts = SolverOptions {
            block_iters: cfg.m,
            max_blocks: cfg.n_blocks,
            ..Default::default()
        };
        PnpEnv { cfg, scheme, denoiser, opts }
    }

    /// Initial MDP state for an instance (block 0, solver initialized).
    pub fn start(&self, instance: Arc<Instance>) -> Result<PnpState> {
        let solver = init_state(&instance.model, self.scheme)?;
        Ok(PnpState { solver, t: 0, instance })
    }

    /// PSNR of the current recovered image against the instance truth.
    pub fn score(&self, s: &PnpState) -> Result<f64> {
        psnr(&s.solver.recovered(), &s.instance.truth)
    }
}

impl Mdp for PnpEnv {
    type State = PnpState;

    fn observe(&self, s: &Self::State) -> Result<Observation> {
        encode_observation(
            &s.solver,
            s.instance.model.effective_noise_sigma(),
            s.t,
            self.cfg.n_blocks,
        )
    }

    /// Run `m` solver iterations with the action's parameters. The reward is
    /// the PSNR increment minus `eta`. Deterministic models make this exact;
    /// the Monte Carlo probe inside D-AMP draws from a stream derived from
    /// the block index, keeping transitions reproducible.
    fn transition(&self, s: &Self::State, a: &Action) -> Result<Transition<Self::State>> {
        if s.t >= self.cfg.n_blocks {
            return Err(Error::invalid("transition past the horizon"));
        }
        let before = self.score(s)?;
        let mut solver = s.solver.clone();
        let mut rng = Rng::new(0xDA3F).derive(s.t as u64);
        for _ in 0..self.cfg.m {
            solver = step(
                &solver,
                &a.params,
                &s.instance.model,
                &self.denoiser,
                self.scheme,
                &self.opts,
                &mut rng,
            )?;
            if !solver.all_finite() {
                return Err(Error::Numeric(format!(
                    "environment transition produced non-finite state at iteration {}",
                    solver.k
                )));
            }
        }
        let next = PnpState {
            solver,
            t: s.t + 1,
            instance: Arc::clone(&s.instance),
        };
        let after = self.score(&next)?;
        let reward = after - before - self.cfg.eta;
        let terminal = a.stop || next.t >= self.cfg.n_blocks;
        Ok(Transition { next, reward, terminal })
    }

    fn horizon(&self) -> usize {
        self.cfg.n_blocks
    }

    fn action_dim(&self) -> usize {
        self.scheme.param_names().len()
    }

    fn log_score(&self, s: &Self::State) -> Option<f64> {
        self.score(s).ok()
    }
}

/// Free-function form of the block transition.
pub fn env_transition(
    env: &PnpEnv,
    s: &PnpState,
    a: &Action,
) -> Result<(PnpState, f64)> {
    let tr = env.transition(s, a)?;
    Ok((tr.next, tr.reward))
}

/// Everything recorded about one environment step.
#[derive(Clone)]
pub struct TransitionRecord<S> {
    pub state: S,
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
    pub next_state: S,
}

/// Bounded FIFO of transitions with uniform sampling.
pub struct ReplayBuffer<S> {
    items: VecDeque<TransitionRecord<S>>,
    capacity: usize,
}

impl<S> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> ReplayBuffer<S> {
        assert!(capacity > 0, "buffer capacity must be positive");
        ReplayBuffer { items: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, rec: TransitionRecord<S>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(rec);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<'a>(&'a self, rng: &mut Rng) -> &'a TransitionRecord<S> {
        &self.items[rng.index(self.items.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{csmri_forward, sampling_mask, MaskKind};

    fn make_instance(seed: u64, n: usize) -> Arc<Instance> {
        let spec = crate::phantom::PhantomSpec { size: n, seed, ..Default::default() };
        let truth = crate::phantom::generate_phantoms(&spec, 1).unwrap().pop().unwrap();
        let mut rng = Rng::new(seed).derive(1);
        let mask = sampling_mask(MaskKind::Radial, n, n, 0.3, &mut rng).unwrap();
        let model = csmri_forward(&truth, &mask, 10.0 / 255.0, &mut rng).unwrap();
        Arc::new(Instance { model: ObservationModel::CsMri(model), truth })
    }

    #[test]
    fn observation_planes_and_channels() {
        let inst = make_instance(1, 16);
        let env = PnpEnv::new(EnvConfig::default(), Scheme::Admm, Denoiser::tv());
        let s = env.start(Arc::clone(&inst)).unwrap();
        let obs = env.observe(&s).unwrap();
        assert_eq!(obs.data.dims(), &[8, 16, 16]); // complex x,z,u -> 6 + 2 aux

        // step plane all zeros at t = 0
        let plane = &obs.data.real()[7 * 256..8 * 256];
        assert!(plane.iter().all(|&v| v == 0.0));

        // step plane all ones at t = N
        let s_end = PnpState { t: 6, ..s };
        let obs_end = env.observe(&s_end).unwrap();
        let plane = &obs_end.data.real()[7 * 256..8 * 256];
        assert!(plane.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn real_problem_has_five_channels() {
        let mut rng = Rng::new(2);
        let x = Tensor::filled(&[8, 8], 0.4);
        let m = crate::problems::qis_forward(&x, 4, &mut rng).unwrap();
        let model = ObservationModel::Qis(m);
        assert_eq!(obs_channels(&model), 5);
        let st = init_state(&model, Scheme::Admm).unwrap();
        let obs = encode_observation(&st, model.effective_noise_sigma(), 2, 6).unwrap();
        assert_eq!(obs.data.dims(), &[5, 8, 8]);
    }

    #[test]
    fn transition_advances_m_iterations_and_prices_reward() {
        let inst = make_instance(3, 16);
        let env = PnpEnv::new(EnvConfig::default(), Scheme::Admm, Denoiser::tv());
        let s0 = env.start(Arc::clone(&inst)).unwrap();
        let a = Action { stop: false, params: StepParams::default() };
        let before = env.score(&s0).unwrap();
        let tr = env.transition(&s0, &a).unwrap();
        assert_eq!(tr.next.solver.k - s0.solver.k, 5);
        let after = env.score(&tr.next).unwrap();
        assert!((tr.reward - (after - before - 0.05)).abs() < 1e-12);
        assert!(!tr.terminal);
    }

    #[test]
    fn reward_formula_examples() {
        // gain 1.00 dB with eta 0.05 -> 0.95; zero gain -> -0.05
        let eta = 0.05;
        assert!((1.00 - eta - 0.95f64).abs() < 1e-15);
        assert!((0.0 - eta) == -0.05);
    }

    #[test]
    fn stop_action_marks_terminal() {
        let inst = make_instance(4, 16);
        let env = PnpEnv::new(EnvConfig::default(), Scheme::Admm, Denoiser::tv());
        let s0 = env.start(inst).unwrap();
        let a = Action { stop: true, params: StepParams::default() };
        let tr = env.transition(&s0, &a).unwrap();
        assert!(tr.terminal);
    }

    #[test]
    fn reward_telescoping_over_full_episode() {
        // sum of undiscounted rewards over a no-stop episode equals
        // score(final) - score(init) - N * eta
        let inst = make_instance(5, 16);
        let cfg = EnvConfig::default();
        let env = PnpEnv::new(cfg, Scheme::Admm, Denoiser::tv());
        let mut s = env.start(Arc::clone(&inst)).unwrap();
        let init = env.score(&s).unwrap();
        let mut total = 0.0;
        for _ in 0..cfg.n_blocks {
            let tr = env
                .transition(&s, &Action { stop: false, params: StepParams::default() })
                .unwrap();
            total += tr.reward;
            s = tr.next;
        }
        let expect = env.score(&s).unwrap() - init - cfg.n_blocks as f64 * cfg.eta;
        assert!((total - expect).abs() < 1e-9, "{total} vs {expect}");
    }

    #[test]
    fn discounted_return_examples_and_oracle() {
        assert_eq!(discounted_return(&[1.0, 1.0], 0.99).unwrap(), 1.99);
        assert_eq!(discounted_return(&[3.0, 7.0, 9.0], 0.0).unwrap(), 3.0);
        let mut rng = Rng::new(6);
        let rewards: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let rho: f64 = 0.9;
        let mut oracle = 0.0;
        for (t, &r) in rewards.iter().enumerate() {
            oracle += rho.powi(t as i32) * r;
        }
        let got = discounted_return(&rewards, rho).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!(discounted_return(&[1.0], 1.5).is_err());
    }

    #[test]
    fn buffer_evicts_fifo_and_samples_uniformly() {
        let mut buf: ReplayBuffer<u32> = ReplayBuffer::new(100);
        let dummy_obs = || Observation { data: Tensor::zeros_real(&[1, 1, 1]) };
        for i in 0..150u32 {
            buf.push(TransitionRecord {
                state: i,
                obs: dummy_obs(),
                action: Action { stop: false, params: StepParams::default() },
                reward: 0.0,
                next_obs: dummy_obs(),
                terminal: false,
                next_state: i,
            });
        }
        assert_eq!(buf.len(), 100);

        // chi-squared uniformity over 1e5 draws from the 100 live slots at
        // the 1% level (critical value for 99 dof is about 134.64)
        let mut rng = Rng::new(7);
        let mut counts = [0u32; 100];
        let draws = 100_000;
        for _ in 0..draws {
            let rec = buf.sample(&mut rng);
            counts[(rec.state - 50) as usize] += 1;
        }
        let expected = draws as f64 / 100.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 134.64, "chi-squared {chi2}");
    }
}
