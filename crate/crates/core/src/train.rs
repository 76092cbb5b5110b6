//! Interleaved actor-critic training with a model-free termination gradient
//! and a model-based continuous-parameter gradient.
//!
//! Per gradient step, each sampled buffer state is re-evaluated under the
//! current policy (the stop decision is re-sampled, the continuous action is
//! the deterministic head output) and the transition is re-run through the
//! environment. Three gradients come out of the same evaluations:
//!
//! * value: squared TD error against the target network,
//! * pi1 (stop head): likelihood-ratio gradient weighted by the advantage,
//! * pi2 (continuous head): the action-value is differentiated with central
//!   finite differences over each normalized action coordinate and chained
//!   through the sigmoid head by backprop. Action dimensionality is at most
//!   three, so the extra block evaluations stay cheap, and classical
//!   denoisers (with no analytic Jacobian) remain usable.

use crate::env::{Action, Instance, Mdp, Observation, PnpEnv, ReplayBuffer, TransitionRecord};
use crate::error::{Error, Result};
use crate::micrograd::layers::softmax;
use crate::micrograd::{adam_step, AdamState, LayerSpec, NetParams, Tape};
use crate::policy::{
    learned_policy_act, map_unit_to_params, read_policy, trunk_topology, write_policy, ActMode,
    Policy, PolicyNets, FEATURE_DIM,
};
use crate::rng::Rng;
use crate::solver::{run_solver, Scheme, SolverOptions};
use crate::tensor::Tensor;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Finite-difference step over each normalized action coordinate (the
/// coordinate range is the unit interval).
pub const ACTION_FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub grad_steps: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// Target-network mix: phi_hat <- beta*phi + (1-beta)*phi_hat.
    pub beta: f64,
    pub rho: f64,
    pub buffer_capacity: usize,
    /// Fraction of training after which both learning rates halve.
    pub lr_halve_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            batch: 16,
            grad_steps: 10,
            lr_policy: 1e-4,
            lr_value: 5e-5,
            beta: 1e-3,
            rho: 0.99,
            buffer_capacity: 500,
            lr_halve_frac: 0.64,
            seed: 0,
        }
    }
}

/// Policy nets plus the critic and its slowly moving target copy.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub policy: PolicyNets,
    pub value: NetParams,
    pub value_target: NetParams,
}

/// Critic: same extractor shape as the policy trunk with a scalar head.
pub fn value_net_topology(in_ch: usize) -> Vec<LayerSpec> {
    let mut t = trunk_topology(in_ch);
    t.push(LayerSpec::Dense { n_in: FEATURE_DIM, n_out: 32 });
    t.push(LayerSpec::Relu);
    t.push(LayerSpec::Dense { n_in: 32, n_out: 1 });
    t
}

pub fn init_actor_critic(scheme: Scheme, obs_channels: usize, rng: &mut Rng) -> ActorCritic {
    let policy = PolicyNets::init(scheme, obs_channels, rng);
    let value = NetParams::init(value_net_topology(obs_channels), rng);
    let value_target = value.clone();
    ActorCritic { policy, value, value_target }
}

impl ActorCritic {
    pub fn all_finite(&self) -> bool {
        self.policy.trunk.params_all_finite()
            && self.policy.stop_head.params_all_finite()
            && self.policy.param_head.params_all_finite()
            && self.value.params_all_finite()
    }

    fn zero_grads(&mut self) {
        self.policy.trunk.zero_grads();
        self.policy.stop_head.zero_grads();
        self.policy.param_head.zero_grads();
        self.value.zero_grads();
    }

    fn grads_all_finite(&self) -> bool {
        self.policy.trunk.grads_all_finite()
            && self.policy.stop_head.grads_all_finite()
            && self.policy.param_head.grads_all_finite()
            && self.value.grads_all_finite()
    }
}

fn value_scalar(net: &NetParams, obs: &Observation) -> Result<f64> {
    let (out, _) = net.forward(&obs.data)?;
    Ok(out.real()[0])
}

/// One buffer state re-evaluated under the current policy, with the tapes
/// needed to backpropagate all three gradients without re-running forwards.
pub struct SampleEval<S> {
    pub obs: Observation,
    pub state: S,
    /// Sampled stop decision a1 and the categorical it came from.
    pub a1_stop: bool,
    pub probs: [f64; 2],
    /// Deterministic continuous action in normalized (sigmoid-output) form.
    pub unit: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub next_obs: Option<Observation>,
    /// Bootstrapped target r + rho * (1 - terminal) * V_target(s').
    pub target: f64,
    pub v_s: f64,
    /// target - V_phi(s), treated as a constant in the policy gradients.
    pub advantage: f64,
    trunk_tape: Tape,
    stop_tape: Tape,
    param_tape: Tape,
    value_tape: Tape,
}

/// Evaluate one stored state: re-sample the stop decision, take the current
/// deterministic continuous action, and re-run the environment transition.
pub fn evaluate_sample<M: Mdp>(
    env: &M,
    ac: &ActorCritic,
    state: &M::State,
    rho: f64,
    rng: &mut Rng,
) -> Result<SampleEval<M::State>> {
    let obs = env.observe(state)?;
    let (feat, trunk_tape) = ac.policy.trunk.forward(&obs.data)?;
    let (logits, stop_tape) = ac.policy.stop_head.forward(&feat)?;
    let (unit_t, param_tape) = ac.policy.param_head.forward(&feat)?;
    let probs_v = softmax(logits.real());
    let probs = [probs_v[0], probs_v[1]];
    let a1_stop = rng.uniform() < probs[1];
    let unit = unit_t.real().to_vec();
    let action = Action {
        stop: a1_stop,
        params: map_unit_to_params(ac.policy.scheme, &unit)?,
    };
    let tr = env.transition(state, &action)?;
    if !tr.reward.is_finite() {
        return Err(Error::Numeric("non-finite reward in transition".into()));
    }
    let next_obs = env.observe(&tr.next)?;
    let v_target_next = if tr.terminal {
        0.0
    } else {
        value_scalar(&ac.value_target, &next_obs)?
    };
    let (v_out, value_tape) = ac.value.forward(&obs.data)?;
    let v_s = v_out.real()[0];
    let target = tr.reward + rho * v_target_next;
    Ok(SampleEval {
        obs,
        state: state.clone(),
        a1_stop,
        probs,
        unit,
        reward: tr.reward,
        terminal: tr.terminal,
        next_obs: Some(next_obs),
        target,
        v_s,
        advantage: target - v_s,
        trunk_tape,
        stop_tape,
        param_tape,
        value_tape,
    })
}

/// Mean squared TD loss; gradients with respect to the critic only are
/// accumulated into `ac.value` (the target network stays frozen).
pub fn value_loss<S>(evals: &[SampleEval<S>], ac: &mut ActorCritic) -> Result<f64> {
    let mut loss = 0.0;
    for e in evals {
        let err = e.v_s - e.target;
        loss += 0.5 * err * err;
        let g = Tensor::from_real(&[1], vec![err])?;
        ac.value.backward(&e.value_tape, &g)?;
    }
    Ok(loss / evals.len().max(1) as f64)
}

/// Likelihood-ratio gradient for the stop head: accumulates the ascent
/// direction of E[log pi1(a1|s) * advantage] into the stop head and trunk.
pub fn policy_grad_pi1<S>(evals: &[SampleEval<S>], ac: &mut ActorCritic) -> Result<()> {
    for e in evals {
        let a_idx = usize::from(e.a1_stop);
        let glogits: Vec<f64> = (0..2)
            .map(|i| {
                let onehot = if i == a_idx { 1.0 } else { 0.0 };
                (onehot - e.probs[i]) * e.advantage
            })
            .collect();
        let g = Tensor::from_real(&[2], glogits)?;
        let gfeat = ac.policy.stop_head.backward(&e.stop_tape, &g)?;
        ac.policy.trunk.backward(&e.trunk_tape, &gfeat)?;
    }
    Ok(())
}

/// Model-based Q estimate for a probed continuous action: the transition is
/// re-run with the perturbed parameters and bootstrapped with the critic.
fn probe_q<M: Mdp>(
    env: &M,
    ac: &ActorCritic,
    state: &M::State,
    stop: bool,
    unit: &[f64],
    rho: f64,
) -> Result<f64> {
    let action = Action {
        stop,
        params: map_unit_to_params(ac.policy.scheme, unit)?,
    };
    let tr = env.transition(state, &action)?;
    let q = if tr.terminal {
        tr.reward
    } else {
        tr.reward + rho * value_scalar(&ac.value, &env.observe(&tr.next)?)?
    };
    if !q.is_finite() {
        return Err(Error::Numeric(
            "non-finite action-value in finite-difference probe".into(),
        ));
    }
    Ok(q)
}

/// Deterministic policy gradient for the continuous head: central finite
/// differences of Q over each normalized action coordinate, chained through
/// the sigmoid head into the ascent direction for theta2 and the trunk.
pub fn policy_grad_pi2<M: Mdp>(
    evals: &[SampleEval<M::State>],
    ac: &mut ActorCritic,
    env: &M,
    rho: f64,
) -> Result<()> {
    let k = env.action_dim();
    for e in evals {
        let mut gunit = vec![0.0f64; k];
        for i in 0..k {
            let mut up = e.unit.clone();
            up[i] += ACTION_FD_STEP;
            let qp = probe_q(env, ac, &e.state, e.a1_stop, &up, rho)?;
            let mut dn = e.unit.clone();
            dn[i] -= ACTION_FD_STEP;
            let qm = probe_q(env, ac, &e.state, e.a1_stop, &dn, rho)?;
            gunit[i] = (qp - qm) / (2.0 * ACTION_FD_STEP);
        }
        let g = Tensor::from_real(&[k], gunit)?;
        let gfeat = ac.policy.param_head.backward(&e.param_tape, &g)?;
        ac.policy.trunk.backward(&e.trunk_tape, &gfeat)?;
    }
    Ok(())
}

/// phi_hat <- beta * phi + (1 - beta) * phi_hat, blockwise.
pub fn soft_update(phi_hat: &mut NetParams, phi: &NetParams, beta: f64) -> Result<()> {
    if phi_hat.topology() != phi.topology() {
        return Err(Error::invalid("soft_update: topology mismatch"));
    }
    for (tb, sb) in phi_hat.blocks_mut().iter_mut().zip(phi.blocks()) {
        let t = tb.value.real_mut();
        let s = sb.value.real();
        for i in 0..t.len() {
            t[i] = beta * s[i] + (1.0 - beta) * t[i];
        }
    }
    phi_hat.bump_version();
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub iteration: usize,
    /// Discounted return of the rollout episode.
    pub episode_return: f64,
    /// Blocks executed before the rollout stopped (stochastic stop).
    pub stop_block: usize,
    /// Final score of the rollout episode, when the environment provides one.
    pub final_score: Option<f64>,
    pub mean_value_loss: f64,
}

pub struct TrainOutcome {
    pub ac: ActorCritic,
    pub log: Vec<TrainLogRow>,
    /// Set when training aborted on a non-finite network; `ac` then holds the
    /// last finite checkpoint.
    pub diverged_at: Option<usize>,
}

/// Full training loop: collect one episode per iteration with stochastic
/// stopping, then take `grad_steps` interleaved actor/critic updates from
/// the replay buffer, soft-updating the target network after each.
pub fn train_policy<M, F>(
    cfg: &TrainConfig,
    env: &M,
    mut sample_start: F,
    mut ac: ActorCritic,
) -> Result<TrainOutcome>
where
    M: Mdp,
    F: FnMut(&mut Rng) -> Result<M::State>,
{
    let mut log = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { ac, log, diverged_at: None });
    }
    let mut rollout_rng = Rng::new(cfg.seed).derive(0xA110);
    let update_rng = Rng::new(cfg.seed).derive(0xB220);
    let mut buffer: ReplayBuffer<M::State> = ReplayBuffer::new(cfg.buffer_capacity);

    let mut adam_trunk = AdamState::new(&ac.policy.trunk, cfg.lr_policy);
    let mut adam_stop = AdamState::new(&ac.policy.stop_head, cfg.lr_policy);
    let mut adam_param = AdamState::new(&ac.policy.param_head, cfg.lr_policy);
    let mut adam_value = AdamState::new(&ac.value, cfg.lr_value);
    let halve_at = ((cfg.iterations as f64) * cfg.lr_halve_frac).floor() as usize;

    let mut last_good = ac.clone();

    for it in 0..cfg.iterations {
        if it == halve_at && it > 0 {
            adam_trunk.lr *= 0.5;
            adam_stop.lr *= 0.5;
            adam_param.lr *= 0.5;
            adam_value.lr *= 0.5;
        }

        // --- rollout with stochastic stopping ---
        let mut s = sample_start(&mut rollout_rng)?;
        let mut rewards = Vec::new();
        for _ in 0..env.horizon() {
            let obs = env.observe(&s)?;
            let action = learned_policy_act(&ac.policy, &obs, ActMode::Train, &mut rollout_rng)?;
            let tr = env.transition(&s, &action)?;
            let next_obs = env.observe(&tr.next)?;
            rewards.push(tr.reward);
            buffer.push(TransitionRecord {
                state: s.clone(),
                obs,
                action,
                reward: tr.reward,
                next_obs,
                terminal: tr.terminal,
                next_state: tr.next.clone(),
            });
            let stopped = action.stop;
            s = tr.next;
            if stopped {
                break;
            }
        }
        let episode_return = crate::env::discounted_return(&rewards, cfg.rho)?;
        let final_score = env.log_score(&s);

        // --- gradient steps ---
        let mut loss_acc = 0.0;
        for gs in 0..cfg.grad_steps {
            ac.zero_grads();
            let mut step_rng = update_rng.derive((it as u64) << 20 | (gs as u64));
            let mut evals = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let rec = buffer.sample(&mut step_rng);
                let state = rec.state.clone();
                evals.push(evaluate_sample(env, &ac, &state, cfg.rho, &mut step_rng)?);
            }
            loss_acc += value_loss(&evals, &mut ac)?;
            policy_grad_pi1(&evals, &mut ac)?;
            policy_grad_pi2(&evals, &mut ac, env, cfg.rho)?;

            // mean over the batch; policy gradients ascend
            let inv = 1.0 / cfg.batch as f64;
            ac.policy.trunk.scale_grads(-inv);
            ac.policy.stop_head.scale_grads(-inv);
            ac.policy.param_head.scale_grads(-inv);
            ac.value.scale_grads(inv);

            if !ac.grads_all_finite() {
                return Ok(TrainOutcome {
                    ac: last_good,
                    log,
                    diverged_at: Some(it),
                });
            }
            adam_step(&mut ac.policy.trunk, &mut adam_trunk)?;
            adam_step(&mut ac.policy.stop_head, &mut adam_stop)?;
            adam_step(&mut ac.policy.param_head, &mut adam_param)?;
            adam_step(&mut ac.value, &mut adam_value)?;
            soft_update(&mut ac.value_target, &ac.value, cfg.beta)?;
        }
        if !ac.all_finite() {
            return Ok(TrainOutcome {
                ac: last_good,
                log,
                diverged_at: Some(it),
            });
        }
        last_good = ac.clone();
        log.push(TrainLogRow {
            iteration: it,
            episode_return,
            stop_block: rewards.len(),
            final_score,
            mean_value_loss: loss_acc / cfg.grad_steps as f64,
        });
    }
    Ok(TrainOutcome { ac, log, diverged_at: None })
}

/// Evaluation of a learned policy on held-out instances (deterministic
/// stopping). Returns mean PSNR, mean stop block, and the per-image PSNRs.
pub struct EvalReport {
    pub mean_psnr: f64,
    pub mean_stop_block: f64,
    pub mean_iterations: f64,
    pub per_image: Vec<f64>,
}

pub fn eval_policy(
    env: &PnpEnv,
    nets: &PolicyNets,
    instances: &[Arc<Instance>],
    opts: &SolverOptions,
) -> Result<EvalReport> {
    let mut per_image = Vec::with_capacity(instances.len());
    let mut stop_sum = 0.0;
    let mut iter_sum = 0.0;
    for (i, inst) in instances.iter().enumerate() {
        let mut policy = Policy::Learned {
            nets: nets.clone(),
            mode: ActMode::Eval,
            rng: Rng::new(0xE7 + i as u64),
        };
        let mut rng = Rng::new(0xE8 + i as u64);
        let out = run_solver(
            &inst.model,
            env.scheme,
            &mut policy,
            &env.denoiser,
            Some(&inst.truth),
            opts,
            &mut rng,
        )?;
        per_image.push(out.trace.final_psnr().unwrap_or(f64::NEG_INFINITY));
        stop_sum += out
            .trace
            .stopped_at_block
            .unwrap_or(opts.max_blocks) as f64;
        iter_sum += out.trace.iterations() as f64;
    }
    let n = instances.len() as f64;
    Ok(EvalReport {
        mean_psnr: per_image.iter().sum::<f64>() / n,
        mean_stop_block: stop_sum / n,
        mean_iterations: iter_sum / n,
        per_image,
    })
}

// ---------------------------------------------------------------------------
// checkpoint i/o
// ---------------------------------------------------------------------------

pub fn write_actor_critic<W: Write>(w: &mut W, ac: &ActorCritic) -> Result<()> {
    writeln!(w, "AC1")?;
    let mut pol = Vec::new();
    write_policy(&mut pol, &ac.policy)?;
    writeln!(w, "policy {}", pol.len())?;
    w.write_all(&pol)?;
    for net in [&ac.value, &ac.value_target] {
        let mut buf = Vec::new();
        crate::micrograd::bundle::write_net(&mut buf, net)?;
        writeln!(w, "net {}", buf.len())?;
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_actor_critic<R: Read>(r: R) -> Result<ActorCritic> {
    let mut br = BufReader::new(r);
    let mut line = String::new();
    br.read_line(&mut line)?;
    if line.trim() != "AC1" {
        return Err(Error::Format("bad actor-critic checkpoint magic".into()));
    }
    line.clear();
    br.read_line(&mut line)?;
    let plen: usize = line
        .trim()
        .strip_prefix("policy ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad policy length".into()))?;
    let mut pbuf = vec![0u8; plen];
    br.read_exact(&mut pbuf)?;
    let policy = read_policy(pbuf.as_slice())?;
    let mut nets = Vec::new();
    for _ in 0..2 {
        line.clear();
        br.read_line(&mut line)?;
        let len: usize = line
            .trim()
            .strip_prefix("net ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad net length".into()))?;
        let mut buf = vec![0u8; len];
        br.read_exact(&mut buf)?;
        nets.push(crate::micrograd::bundle::read_net(buf.as_slice())?);
    }
    let value_target = nets.pop().unwrap();
    let value = nets.pop().unwrap();
    Ok(ActorCritic { policy, value, value_target })
}

pub fn save_actor_critic(path: impl AsRef<Path>, ac: &ActorCritic) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_actor_critic(&mut f, ac)
}

pub fn load_actor_critic(path: impl AsRef<Path>) -> Result<ActorCritic> {
    read_actor_critic(std::fs::File::open(path)?)
}
