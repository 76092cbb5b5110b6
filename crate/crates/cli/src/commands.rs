//! Subcommand implementations and run-directory management.

use crate::config::Config;
use crate::CliError;
use pnp_core::denoise::{holdout_psnr, train_denoiser, Denoiser, DenoiserTrainConfig};
use pnp_core::diag::{probplot_r2, run_benchmark, trace_r2_series, PolicySpec};
use pnp_core::env::{EnvConfig, Instance, PnpEnv};
use pnp_core::io::{save_pgm, save_tensor};
use pnp_core::phantom::{generate_phantoms, random_patches, PhantomSpec};
use pnp_core::policy::{
    fixed_optimal_search, load_policy, oracle_search, save_policy, ActMode, ParamGrid, Policy,
};
use pnp_core::problems::{
    cdp_forward, csmri_forward, qis_forward, sampling_mask, MaskKind, ObservationModel,
    ProblemKind,
};
use pnp_core::rng::Rng;
use pnp_core::solver::{run_solver, DampNorm, Scheme, SolverOptions};
use pnp_core::train::{
    eval_policy, init_actor_critic, save_actor_critic, train_policy, TrainConfig,
};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Create `{out}/run-{unix}-seed{seed}` (suffixing on collision) and drop a
/// manifest with the resolved configuration.
pub fn make_run_dir(cfg: &Config, subcommand: &str) -> Result<PathBuf, CliError> {
    let base = PathBuf::from(cfg.str("out"));
    std::fs::create_dir_all(&base).map_err(CliError::io)?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let seed = cfg.u64("seed");
    let mut dir = base.join(format!("run-{stamp}-seed{seed}"));
    let mut suffix = 1;
    while dir.exists() {
        suffix += 1;
        dir = base.join(format!("run-{stamp}-seed{seed}-{suffix}"));
    }
    std::fs::create_dir_all(&dir).map_err(CliError::io)?;
    let manifest = format!(
        "subcommand = {subcommand}\nunix_time = {stamp}\n# resolved configuration\n{}",
        cfg.dump()
    );
    std::fs::write(dir.join("manifest.txt"), manifest).map_err(CliError::io)?;
    Ok(dir)
}

fn phantom_spec(cfg: &Config, seed: u64) -> PhantomSpec {
    PhantomSpec {
        size: cfg.usize("problem.size"),
        ellipses: cfg.usize("phantom.ellipses"),
        rects: cfg.usize("phantom.rects"),
        seed,
        ..Default::default()
    }
}

fn mask_kind(cfg: &Config) -> Result<MaskKind, CliError> {
    match cfg.str("problem.mask") {
        "radial" => Ok(MaskKind::Radial),
        "cartesian" => Ok(MaskKind::Cartesian),
        other => Err(CliError::config(format!("unknown mask family `{other}`"))),
    }
}

fn damp_norm(cfg: &Config) -> Result<DampNorm, CliError> {
    match cfg.str("damp.norm") {
        "n" => Ok(DampNorm::PixelCount),
        "m" => Ok(DampNorm::MeasuredCount),
        other => Err(CliError::config(format!("unknown damp.norm `{other}`"))),
    }
}

/// Forward-simulate one instance from a ground-truth phantom.
pub fn make_instance(
    cfg: &Config,
    truth: pnp_core::Tensor,
    rng: &mut Rng,
) -> Result<Arc<Instance>, CliError> {
    let kind = ProblemKind::parse(cfg.str("problem.kind")).map_err(CliError::from_core)?;
    let model = match kind {
        ProblemKind::CsMri => {
            let (h, w) = (truth.dims()[0], truth.dims()[1]);
            let mask = sampling_mask(mask_kind(cfg)?, h, w, cfg.f64("problem.ratio"), rng)
                .map_err(CliError::from_core)?;
            ObservationModel::CsMri(
                csmri_forward(&truth, &mask, cfg.f64("problem.noise"), rng)
                    .map_err(CliError::from_core)?,
            )
        }
        ProblemKind::Qis => ObservationModel::Qis(
            qis_forward(&truth, cfg.u64("problem.jots") as u32, rng)
                .map_err(CliError::from_core)?,
        ),
        ProblemKind::Cdp => ObservationModel::Cdp(
            cdp_forward(&truth, rng, cfg.f64("problem.cdp_alpha")).map_err(CliError::from_core)?,
        ),
    };
    Ok(Arc::new(Instance { model, truth }))
}

pub fn build_dataset(cfg: &Config, count: usize, tag: u64) -> Result<Vec<Arc<Instance>>, CliError> {
    let seed = cfg.u64("seed");
    let truths = generate_phantoms(&phantom_spec(cfg, seed ^ tag), count)
        .map_err(CliError::from_core)?;
    let mut out = Vec::with_capacity(count);
    for (i, truth) in truths.into_iter().enumerate() {
        let mut rng = Rng::new(seed).derive(tag ^ (0xD5 + i as u64));
        out.push(make_instance(cfg, truth, &mut rng)?);
    }
    Ok(out)
}

pub fn build_denoiser(cfg: &Config) -> Result<Denoiser, CliError> {
    match cfg.str("denoiser.kind") {
        "tv" => Ok(Denoiser::tv()),
        "gaussian" => Ok(Denoiser::smoother()),
        "unet" => {
            let path = cfg.str("denoiser.checkpoint");
            if path.is_empty() {
                return Err(CliError::config(
                    "denoiser.kind = unet requires denoiser.checkpoint",
                ));
            }
            let net = pnp_core::micrograd::bundle::load_net(path).map_err(CliError::from_core)?;
            Ok(Denoiser::MicroUnet { net, trained: true })
        }
        other => Err(CliError::config(format!("unknown denoiser kind `{other}`"))),
    }
}

pub fn solver_options(cfg: &Config) -> Result<SolverOptions, CliError> {
    Ok(SolverOptions {
        block_iters: cfg.usize("env.m"),
        max_blocks: cfg.usize("env.N"),
        damp_norm: damp_norm(cfg)?,
    })
}

fn scheme(cfg: &Config) -> Result<Scheme, CliError> {
    Scheme::parse(cfg.str("scheme")).map_err(CliError::from_core)
}

fn build_policy(
    cfg: &Config,
    instance: &Instance,
    dataset: &[Arc<Instance>],
    sch: Scheme,
    d: &Denoiser,
    opts: &SolverOptions,
) -> Result<Policy, CliError> {
    let grid = ParamGrid::default();
    match cfg.str("policy.kind") {
        "fixed" => Ok(Policy::fixed()),
        "handcrafted" => {
            let start = cfg.f64("handcrafted.sigma_start");
            let mut end = cfg.f64("handcrafted.sigma_end");
            if end <= 0.0 {
                end = instance.model.effective_noise_sigma().max(5.0 / 255.0);
            }
            Policy::handcrafted(start, end, opts.block_iters * opts.max_blocks)
                .map_err(CliError::from_core)
        }
        "oracle" => oracle_search(&instance.model, &instance.truth, &grid, sch, d, opts)
            .map_err(CliError::from_core),
        "fixed-optimal" => {
            let pairs: Vec<_> = dataset
                .iter()
                .map(|i| (i.model.clone(), i.truth.clone()))
                .collect();
            fixed_optimal_search(&pairs, &grid, sch, d, opts).map_err(CliError::from_core)
        }
        "greedy" => Ok(Policy::Greedy { grid }),
        "learned" => {
            let path = cfg.str("policy.checkpoint");
            if path.is_empty() {
                return Err(CliError::config(
                    "policy.kind = learned requires policy.checkpoint",
                ));
            }
            let nets = load_policy(path).map_err(CliError::from_core)?;
            if nets.scheme != sch {
                return Err(CliError::config(format!(
                    "checkpoint was trained for scheme {}, requested {}",
                    nets.scheme.name(),
                    sch.name()
                )));
            }
            Ok(Policy::Learned { nets, mode: ActMode::Eval, rng: Rng::new(cfg.u64("seed")) })
        }
        other => Err(CliError::config(format!("unknown policy kind `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

pub fn cmd_gen_phantoms(cfg: &Config, count: usize) -> Result<PathBuf, CliError> {
    let dir = make_run_dir(cfg, "gen-phantoms")?;
    let imgs = generate_phantoms(&phantom_spec(cfg, cfg.u64("seed")), count)
        .map_err(CliError::from_core)?;
    for (i, img) in imgs.iter().enumerate() {
        save_pgm(dir.join(format!("phantom_{i:03}.pgm")), img).map_err(CliError::from_core)?;
        save_tensor(dir.join(format!("phantom_{i:03}.tft")), img).map_err(CliError::from_core)?;
    }
    println!("wrote {count} phantoms to {}", dir.display());
    Ok(dir)
}

pub fn cmd_train_denoiser(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = make_run_dir(cfg, "train-denoiser")?;
    let seed = cfg.u64("seed");
    let patch = cfg.usize("train_denoiser.patch_size");
    let spec = PhantomSpec {
        size: patch.max(cfg.usize("problem.size")),
        seed: seed ^ 0xDE401,
        ..phantom_spec(cfg, seed)
    };
    let images = generate_phantoms(&spec, 256).map_err(CliError::from_core)?;
    let mut prng = Rng::new(seed).derive(0xDE402);
    let patches = random_patches(
        &images,
        patch,
        cfg.usize("train_denoiser.patches"),
        &mut prng,
    );
    let tcfg = DenoiserTrainConfig {
        steps: cfg.usize("train_denoiser.steps"),
        batch: cfg.usize("train_denoiser.batch"),
        lr: cfg.f64("train_denoiser.lr"),
        seed,
        ..Default::default()
    };
    let out = train_denoiser(&patches, &tcfg).map_err(CliError::from_core)?;

    let mut csv = String::from("step,l1_loss\n");
    for (step, loss) in &out.loss_log {
        csv.push_str(&format!("{step},{loss:.8}\n"));
    }
    std::fs::write(dir.join("denoiser_loss.csv"), csv).map_err(CliError::io)?;
    pnp_core::micrograd::bundle::save_net(dir.join("denoiser.net"), &out.net)
        .map_err(CliError::from_core)?;

    let holdout = &patches[patches.len() - 32..];
    let d = Denoiser::MicroUnet { net: out.net, trained: out.trained };
    let (noisy, denoised) =
        holdout_psnr(&d, holdout, 25.0 / 255.0, seed ^ 0x701d).map_err(CliError::from_core)?;
    println!(
        "denoiser trained={} holdout sigma=25/255: noisy {noisy:.2} dB -> denoised {denoised:.2} dB ({:+.2} dB)",
        out.trained,
        denoised - noisy
    );
    println!("checkpoint: {}", dir.join("denoiser.net").display());
    Ok(dir)
}

pub fn cmd_train_policy(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = make_run_dir(cfg, "train-policy")?;
    let sch = scheme(cfg)?;
    let d = build_denoiser(cfg)?;
    let env = PnpEnv::new(
        EnvConfig {
            m: cfg.usize("env.m"),
            n_blocks: cfg.usize("env.N"),
            eta: cfg.f64("env.eta"),
            rho: cfg.f64("env.rho"),
        },
        sch,
        d,
    );
    let seed = cfg.u64("seed");
    // probe one instance for the observation channel count
    let probe = build_dataset(cfg, 1, 0x9999)?;
    let channels = pnp_core::env::obs_channels(&probe[0].model);

    let mut rng = Rng::new(seed).derive(0x9017);
    let ac = init_actor_critic(sch, channels, &mut rng);
    let tcfg = TrainConfig {
        iterations: cfg.usize("train.iterations"),
        batch: cfg.usize("train.batch"),
        grad_steps: cfg.usize("train.grad_steps"),
        lr_policy: cfg.f64("train.lr_policy"),
        lr_value: cfg.f64("train.lr_value"),
        beta: cfg.f64("train.beta"),
        rho: cfg.f64("env.rho"),
        buffer_capacity: cfg.usize("buffer.capacity"),
        seed,
        ..Default::default()
    };

    let cfg_clone = cfg.clone();
    let mut episode = 0u64;
    let outcome = train_policy(
        &tcfg,
        &env,
        move |rng: &mut Rng| {
            episode += 1;
            let spec = phantom_spec(&cfg_clone, rng.seed() ^ (0xfeed + episode));
            let truth = generate_phantoms(&spec, 1)?.pop().unwrap();
            let mut irng = rng.derive(episode);
            let inst = match make_instance(&cfg_clone, truth, &mut irng) {
                Ok(i) => i,
                Err(e) => return Err(pnp_core::Error::InvalidArgument(e.to_string())),
            };
            env.start(inst)
        },
        ac,
    )
    .map_err(CliError::from_core)?;

    let mut csv = String::from("iteration,episode_return,stop_block,final_psnr,value_loss\n");
    for row in &outcome.log {
        csv.push_str(&format!(
            "{},{:.6},{},{:.6},{:.8}\n",
            row.iteration,
            row.episode_return,
            row.stop_block,
            row.final_score.unwrap_or(f64::NAN),
            row.mean_value_loss
        ));
    }
    std::fs::write(dir.join("training_log.csv"), csv).map_err(CliError::io)?;
    save_actor_critic(dir.join("actor_critic.ac"), &outcome.ac).map_err(CliError::from_core)?;
    save_policy(dir.join("policy.net"), &outcome.ac.policy).map_err(CliError::from_core)?;

    if let Some(at) = outcome.diverged_at {
        return Err(CliError::numeric(format!(
            "training diverged at iteration {at}; last good checkpoint saved to {}",
            dir.display()
        )));
    }

    // held-out evaluation against the fixed policy
    let env2 = PnpEnv::new(
        EnvConfig {
            m: cfg.usize("env.m"),
            n_blocks: cfg.usize("env.N"),
            eta: cfg.f64("env.eta"),
            rho: cfg.f64("env.rho"),
        },
        sch,
        build_denoiser(cfg)?,
    );
    let held = build_dataset(cfg, cfg.usize("dataset.count"), 0xHELD_TAG)?;
    let opts = solver_options(cfg)?;
    let rep = eval_policy(&env2, &outcome.ac.policy, &held, &opts).map_err(CliError::from_core)?;
    println!(
        "learned policy: mean PSNR {:.3} dB, mean stop block {:.2}, mean iterations {:.1}",
        rep.mean_psnr, rep.mean_stop_block, rep.mean_iterations
    );
    println!("checkpoints in {}", dir.display());
    Ok(dir)
}

pub fn cmd_solve(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = make_run_dir(cfg, "solve")?;
    let sch = scheme(cfg)?;
    let d = build_denoiser(cfg)?;
    let opts = solver_options(cfg)?;
    let dataset = build_dataset(cfg, cfg.usize("dataset.count").max(1), 0x501E)?;
    let inst = &dataset[0];
    let mut policy = build_policy(cfg, inst, &dataset, sch, &d, &opts)?;
    let mut rng = Rng::new(cfg.u64("seed")).derive(0x501F);
    let out = run_solver(
        &inst.model,
        sch,
        &mut policy,
        &d,
        Some(&inst.truth),
        &opts,
        &mut rng,
    )
    .map_err(CliError::from_core)?;

    std::fs::write(dir.join("trace.csv"), trace_csv(&out.trace)).map_err(CliError::io)?;
    save_pgm(dir.join("truth.pgm"), &inst.truth).map_err(CliError::from_core)?;
    let init = inst.model.init_image().map_err(CliError::from_core)?;
    save_pgm(dir.join("init.pgm"), &init).map_err(CliError::from_core)?;
    save_pgm(dir.join("recovered.pgm"), &out.state.recovered()).map_err(CliError::from_core)?;
    println!(
        "{} + {} with {} policy: init {:.3} dB -> final {:.3} dB over {} iterations",
        sch.name(),
        cfg.str("problem.kind"),
        policy.name(),
        out.trace.init_psnr.unwrap_or(f64::NAN),
        out.trace.final_psnr().unwrap_or(f64::NAN),
        out.trace.iterations()
    );
    println!("trace: {}", dir.join("trace.csv").display());
    Ok(dir)
}

pub fn trace_csv(trace: &pnp_core::solver::IterationTrace) -> String {
    let mut out = String::from("k,sigma,mu,gamma,lambda,delta,psnr,stopped\n");
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.6},0\n",
            row.k,
            row.params.sigma,
            row.params.mu,
            row.params.gamma,
            row.params.lambda,
            row.params.delta,
            row.psnr.unwrap_or(f64::NAN)
        ));
    }
    if let Some(b) = trace.stopped_at_block {
        out.push_str(&format!("{},,,,,,,{b}\n", trace.rows.len()));
    }
    out
}

pub fn cmd_benchmark(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = make_run_dir(cfg, "benchmark")?;
    let d = build_denoiser(cfg)?;
    let opts = solver_options(cfg)?;
    let dataset = build_dataset(cfg, cfg.usize("dataset.count"), 0xBE9C)?;

    let schemes: Vec<Scheme> = cfg
        .str("benchmark.schemes")
        .split(',')
        .map(|s| Scheme::parse(s.trim()).map_err(CliError::from_core))
        .collect::<Result<_, _>>()?;
    let mut policies = Vec::new();
    for name in cfg.str("benchmark.policies").split(',') {
        policies.push(match name.trim() {
            "fixed" => PolicySpec::Fixed,
            "handcrafted" => PolicySpec::Handcrafted,
            "fixed-optimal" => PolicySpec::FixedOptimal,
            "greedy" => PolicySpec::Greedy,
            "oracle" => PolicySpec::Oracle,
            "learned" => {
                let path = cfg.str("policy.checkpoint");
                if path.is_empty() {
                    return Err(CliError::config(
                        "benchmark policy `learned` requires policy.checkpoint",
                    ));
                }
                PolicySpec::Learned(load_policy(path).map_err(CliError::from_core)?)
            }
            other => return Err(CliError::config(format!("unknown benchmark policy `{other}`"))),
        });
    }

    let report = run_benchmark(&dataset, &schemes, &policies, &d, &ParamGrid::default(), &opts)
        .map_err(CliError::from_core)?;
    std::fs::write(dir.join("benchmark.csv"), report.to_csv()).map_err(CliError::io)?;
    std::fs::write(dir.join("benchmark.txt"), report.to_table()).map_err(CliError::io)?;
    print!("{}", report.to_table());
    println!("csv: {}", dir.join("benchmark.csv").display());
    Ok(dir)
}

pub fn cmd_diagnose(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = make_run_dir(cfg, "diagnose")?;
    let sch = scheme(cfg)?;
    let d = build_denoiser(cfg)?;
    let opts = solver_options(cfg)?;
    let dataset = build_dataset(cfg, cfg.usize("dataset.count").max(1), 0xD1A6)?;
    let inst = &dataset[0];
    let mut policy = build_policy(cfg, inst, &dataset, sch, &d, &opts)?;
    let mut rng = Rng::new(cfg.u64("seed")).derive(0xD1A7);
    let out = run_solver(
        &inst.model,
        sch,
        &mut policy,
        &d,
        Some(&inst.truth),
        &opts,
        &mut rng,
    )
    .map_err(CliError::from_core)?;

    let series = trace_r2_series(&out.trace, &inst.truth, sch).map_err(CliError::from_core)?;
    let mut csv = String::from("k,r2,psnr\n");
    for ((k, r2), row) in series.iter().zip(&out.trace.rows) {
        csv.push_str(&format!("{k},{r2:.6},{:.6}\n", row.psnr.unwrap_or(f64::NAN)));
    }
    std::fs::write(dir.join("diagnose.csv"), csv).map_err(CliError::io)?;

    // probability-plot pairs at the first, middle and last iterations
    let samples =
        pnp_core::diag::iteration_noise(&out.trace, &inst.truth, sch).map_err(CliError::from_core)?;
    if !samples.is_empty() {
        let picks = [0, samples.len() / 2, samples.len() - 1];
        for &i in picks.iter() {
            let s = &samples[i];
            if let Ok((pairs, _)) = probplot_r2(s.eps.real()) {
                let mut csv = String::from("theoretical_quantile,sample_quantile\n");
                for (q, v) in pairs {
                    csv.push_str(&format!("{q:.8},{v:.8}\n"));
                }
                std::fs::write(dir.join(format!("probplot_k{}.csv", s.k)), csv)
                    .map_err(CliError::io)?;
            }
        }
    }
    println!("diagnostics in {}", dir.display());
    Ok(dir)
}

/// Shared helper for tests: does a path exist inside the run dir.
pub fn run_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
