// Scratch experiment: does a desk-scale training run beat the fixed policy
// and learn early stopping at eta = 0.05?
use pnp_core::denoise::Denoiser;
use pnp_core::env::{EnvConfig, Instance, PnpEnv};
use pnp_core::phantom::{generate_phantoms, PhantomSpec};
use pnp_core::policy::Policy;
use pnp_core::problems::{csmri_forward, sampling_mask, MaskKind, ObservationModel};
use pnp_core::rng::Rng;
use pnp_core::solver::{run_solver, Scheme, SolverOptions};
use pnp_core::train::{eval_policy, init_actor_critic, train_policy, TrainConfig};
use std::sync::Arc;
use std::time::Instant;

fn make_instance(seed: u64, n: usize) -> Arc<Instance> {
    let spec = PhantomSpec { size: n, seed, ..Default::default() };
    let truth = generate_phantoms(&spec, 1).unwrap().pop().unwrap();
    let mut mrng = Rng::new(seed).derive(5);
    let mask = sampling_mask(MaskKind::Radial, n, n, 0.25, &mut mrng).unwrap();
    let model = csmri_forward(&truth, &mask, 15.0 / 255.0, &mut mrng).unwrap();
    Arc::new(Instance { model: ObservationModel::CsMri(model), truth })
}

fn main() {
    let n = 32;
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let eta: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);

    let env = PnpEnv::new(EnvConfig { eta, ..Default::default() }, Scheme::Admm, Denoiser::tv());
    let mut rng = Rng::new(7);
    let ac = init_actor_critic(Scheme::Admm, 8, &mut rng);
    let cfg = TrainConfig { iterations: iters, seed: 7, ..Default::default() };
    let mut counter = 1000u64;
    let t0 = Instant::now();
    let out = train_policy(&cfg, &env, |r| { counter += 1; let _ = r; Ok(env.start(make_instance(counter, n))?) }, ac).unwrap();
    println!("trained {iters} iters eta={eta} in {:.1} min, diverged: {:?}", t0.elapsed().as_secs_f64()/60.0, out.diverged_at);
    for row in out.log.iter().step_by(iters.max(10)/10) {
        println!("  it {:3} return {:7.3} stop_block {} psnr {:.2}", row.iteration, row.episode_return, row.stop_block, row.final_score.unwrap_or(0.0));
    }

    // held-out set (different seed family)
    let held: Vec<_> = (0..8).map(|i| make_instance(500 + i, n)).collect();
    let opts = SolverOptions::default();
    let rep = eval_policy(&env, &out.ac.policy, &held, &opts).unwrap();
    println!("learned: mean_psnr {:.3} stop_block {:.2} iters {:.1}", rep.mean_psnr, rep.mean_stop_block, rep.mean_iterations);

    let mut fixed_sum = 0.0;
    for inst in &held {
        let mut p = Policy::fixed();
        let mut rr = Rng::new(1);
        let o = run_solver(&inst.model, Scheme::Admm, &mut p, &env.denoiser, Some(&inst.truth), &opts, &mut rr).unwrap();
        fixed_sum += o.trace.final_psnr().unwrap();
    }
    println!("fixed:   mean_psnr {:.3}", fixed_sum / 8.0);
}
