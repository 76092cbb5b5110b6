//! Trajectory-level solver behavior: measured PSNR improvements, driver
//! semantics, scheme equivalences over full runs, and the AMP divergence
//! oracle.

use pnp_core::denoise::{denoise, Denoiser};
use pnp_core::env::Instance;
use pnp_core::metrics::psnr;
use pnp_core::phantom::{generate_phantoms, PhantomSpec};
use pnp_core::policy::{oracle_search, run_constant, ParamGrid, Policy};
use pnp_core::problems::{csmri_forward, sampling_mask, MaskKind, ObservationModel};
use pnp_core::rng::Rng;
use pnp_core::solver::{
    init_state, monte_carlo_divergence, pnp_admm_step, run_solver, ActContext, BlockDecision,
    PolicyAgent, Scheme, SolverOptions, StepParams,
};
use pnp_core::tensor::Tensor;
use std::sync::Arc;

fn csmri_instance(seed: u64, n: usize, ratio: f64, noise: f64) -> Arc<Instance> {
    let spec = PhantomSpec { size: n, seed, ..Default::default() };
    let truth = generate_phantoms(&spec, 1).unwrap().pop().unwrap();
    let mut rng = Rng::new(seed).derive(77);
    let mask = sampling_mask(MaskKind::Radial, n, n, ratio, &mut rng).unwrap();
    let model = csmri_forward(&truth, &mask, noise, &mut rng).unwrap();
    Arc::new(Instance { model: ObservationModel::CsMri(model), truth })
}

struct StopNow;
impl PolicyAgent for StopNow {
    fn decide(&mut self, _ctx: &ActContext) -> pnp_core::Result<BlockDecision> {
        Ok(BlockDecision { stop: true, params: Vec::new() })
    }
}

#[test]
fn admm_improves_over_zero_filled_init() {
    // 16x16 CS-MRI, 10 steps, sigma = 15/255, mu = 0.1
    let inst = csmri_instance(1, 16, 0.4, 10.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions { block_iters: 5, max_blocks: 2, ..Default::default() };
    let p = StepParams { sigma: 15.0 / 255.0, mu: 0.1, ..Default::default() };
    let out = run_constant(&inst.model, Scheme::Admm, &d, p, Some(&inst.truth), &opts).unwrap();
    let init = out.trace.init_psnr.unwrap();
    let fin = out.trace.final_psnr().unwrap();
    assert!(fin > init, "final {fin} vs init {init}");
    assert_eq!(out.trace.iterations(), 10);
}

#[test]
fn hqs_thirty_steps_finite_and_improving() {
    let inst = csmri_instance(2, 16, 0.4, 15.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions::default(); // 5 * 6 = 30
    let p = StepParams { sigma: 15.0 / 255.0, mu: 0.1, ..Default::default() };
    let out = run_constant(&inst.model, Scheme::Hqs, &d, p, Some(&inst.truth), &opts).unwrap();
    assert_eq!(out.trace.iterations(), 30);
    assert!(out.state.all_finite());
    assert!(out.trace.final_psnr().unwrap() > out.trace.init_psnr.unwrap());
}

#[test]
fn red_thirty_steps_improves() {
    let inst = csmri_instance(3, 16, 0.4, 10.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions::default();
    let p = StepParams { sigma: 10.0 / 255.0, mu: 0.1, lambda: 0.2, ..Default::default() };
    let out = run_constant(&inst.model, Scheme::Red, &d, p, Some(&inst.truth), &opts).unwrap();
    assert!(out.trace.final_psnr().unwrap() > out.trace.init_psnr.unwrap());
}

#[test]
fn apgm_accelerates_over_pgm_on_data_fidelity() {
    // identity denoiser, 20 iterations: APGM (FISTA schedule) reaches a data
    // objective no worse than PGM's.
    let inst = csmri_instance(4, 16, 0.3, 0.0);
    let d = Denoiser::identity();
    let opts = SolverOptions { block_iters: 5, max_blocks: 4, ..Default::default() };
    let p = StepParams { sigma: 0.0, gamma: 1.0, qbar: None, ..Default::default() };
    let pgm = run_constant(&inst.model, Scheme::Pgm, &d, p, Some(&inst.truth), &opts).unwrap();
    let apgm = run_constant(&inst.model, Scheme::Apgm, &d, p, Some(&inst.truth), &opts).unwrap();
    let obj_pgm = inst.model.data_objective(&pgm.state.x).unwrap();
    let obj_apgm = inst.model.data_objective(&apgm.state.x).unwrap();
    assert!(
        obj_apgm <= obj_pgm + 1e-12,
        "APGM {obj_apgm} vs PGM {obj_pgm}"
    );
}

#[test]
fn admm_primal_consistency_with_identity_denoiser() {
    // full mask, noise-free: ||x_k - z_k|| falls below 1e-6 within 30 steps
    let spec = PhantomSpec { size: 16, seed: 5, ..Default::default() };
    let truth = generate_phantoms(&spec, 1).unwrap().pop().unwrap();
    let mut rng = Rng::new(50);
    let mask = Tensor::filled(&[16, 16], 1.0);
    let model =
        ObservationModel::CsMri(csmri_forward(&truth, &mask, 0.0, &mut rng).unwrap());
    let d = Denoiser::identity();
    let mut st = init_state(&model, Scheme::Admm).unwrap();
    let p = StepParams { sigma: 0.0, mu: 0.5, ..Default::default() };
    for _ in 0..30 {
        st = pnp_admm_step(&st, &p, &model, &d).unwrap();
    }
    let gap = st.x.sub(&st.z).norm2();
    assert!(gap <= 1e-6, "primal gap {gap}");
}

#[test]
fn run_solver_stop_and_length_semantics() {
    let inst = csmri_instance(6, 16, 0.4, 10.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions::default();
    let mut rng = Rng::new(1);

    // immediate stop: no iterations beyond init
    let out = run_solver(
        &inst.model,
        Scheme::Admm,
        &mut StopNow,
        &d,
        Some(&inst.truth),
        &opts,
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.trace.iterations(), 0);
    assert_eq!(out.trace.stopped_at_block, Some(0));

    // fixed policy runs exactly block_iters * max_blocks iterations
    let mut fixed = Policy::fixed();
    let out = run_solver(
        &inst.model,
        Scheme::Admm,
        &mut fixed,
        &d,
        Some(&inst.truth),
        &opts,
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.trace.iterations(), 30);
    assert_eq!(out.trace.stopped_at_block, None);
}

#[test]
fn oracle_dominates_fixed_on_an_instance() {
    let inst = csmri_instance(7, 16, 0.3, 15.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions::default();
    let grid = ParamGrid::default();
    let mut oracle =
        oracle_search(&inst.model, &inst.truth, &grid, Scheme::Admm, &d, &opts).unwrap();
    let mut fixed = Policy::fixed();
    let mut rng = Rng::new(2);
    let po = run_solver(&inst.model, Scheme::Admm, &mut oracle, &d, Some(&inst.truth), &opts, &mut rng)
        .unwrap()
        .trace
        .final_psnr()
        .unwrap();
    let pf = run_solver(&inst.model, Scheme::Admm, &mut fixed, &d, Some(&inst.truth), &opts, &mut rng)
        .unwrap()
        .trace
        .final_psnr()
        .unwrap();
    assert!(po >= pf, "oracle {po} vs fixed {pf}");
}

#[test]
fn smoother_divergence_matches_exhaustive_probes() {
    // one Rademacher probe within 5% of the full-basis trace on 8x8
    let mut rng = Rng::new(42);
    let v = Tensor::from_real(&[8, 8], (0..64).map(|_| rng.uniform()).collect()).unwrap();
    let d = Denoiser::smoother();
    let sigma = 5.0 / 255.0;

    let mc = monte_carlo_divergence(&d, &v, sigma, &mut rng).unwrap();

    // exhaustive probe over all 64 basis vectors
    let h = 1e-5;
    let base = denoise(&d, &v, sigma).unwrap();
    let mut trace = 0.0;
    for i in 0..64 {
        let mut vp = v.clone();
        vp.real_mut()[i] += h;
        let out = denoise(&d, &vp, sigma).unwrap();
        trace += (out.real()[i] - base.real()[i]) / h;
    }
    let rel = (mc - trace).abs() / trace.abs();
    assert!(rel <= 0.05, "MC {mc} vs trace {trace} ({:.1}%)", rel * 100.0);
}

#[test]
fn damp_runs_and_estimates_noise() {
    let inst = csmri_instance(8, 16, 0.5, 5.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions { block_iters: 5, max_blocks: 2, ..Default::default() };
    let p = StepParams { delta: 1.0, ..Default::default() };
    let out = run_constant(&inst.model, Scheme::Damp, &d, p, Some(&inst.truth), &opts).unwrap();
    assert!(out.state.all_finite());
    assert_eq!(out.trace.iterations(), 10);
}

#[test]
fn iteration_noise_contracts_under_oracle_policy() {
    // norm of the iteration noise at the final iteration <= at the first
    let inst = csmri_instance(9, 16, 0.4, 10.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions::default();
    let grid = ParamGrid::default();
    let mut oracle =
        oracle_search(&inst.model, &inst.truth, &grid, Scheme::Admm, &d, &opts).unwrap();
    let mut rng = Rng::new(3);
    let out = run_solver(
        &inst.model,
        Scheme::Admm,
        &mut oracle,
        &d,
        Some(&inst.truth),
        &opts,
        &mut rng,
    )
    .unwrap();
    let samples =
        pnp_core::diag::iteration_noise(&out.trace, &inst.truth, Scheme::Admm).unwrap();
    let first = samples.first().unwrap().eps.norm2();
    let last = samples.last().unwrap().eps.norm2();
    assert!(last <= first, "noise grew: {last} vs {first}");
}

#[test]
fn unet_denoiser_runs_inside_admm() {
    // untrained micro-unet still produces finite improving-or-stable runs
    let inst = csmri_instance(10, 16, 0.5, 5.0 / 255.0);
    let mut rng = Rng::new(4);
    let d = Denoiser::MicroUnet {
        net: pnp_core::denoise::init_micro_unet(&mut rng),
        trained: false,
    };
    let opts = SolverOptions { block_iters: 5, max_blocks: 1, ..Default::default() };
    let p = StepParams { sigma: 10.0 / 255.0, mu: 0.3, ..Default::default() };
    let out = run_constant(&inst.model, Scheme::Admm, &d, p, Some(&inst.truth), &opts).unwrap();
    assert!(out.state.all_finite());
}

#[test]
fn psnr_sanity_against_ground_truth_scale() {
    // recovered image stays a valid [0,1] image all along the trace
    let inst = csmri_instance(11, 16, 0.4, 10.0 / 255.0);
    let d = Denoiser::tv();
    let opts = SolverOptions { block_iters: 5, max_blocks: 2, ..Default::default() };
    let p = StepParams::default();
    let out = run_constant(&inst.model, Scheme::Admm, &d, p, Some(&inst.truth), &opts).unwrap();
    for row in &out.trace.rows {
        let img = &row.recovered;
        assert!(img.real().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(psnr(img, &inst.truth).unwrap().is_finite());
    }
}
