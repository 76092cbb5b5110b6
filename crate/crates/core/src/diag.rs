//! Iteration-noise analysis, Gaussian probability plots, and benchmark
//! tables.
//!
//! The iteration noise of a PnP trajectory is the difference between each
//! denoiser input and the ground truth. Its normality is scored by the R^2 of
//! a Gaussian probability plot (Blom plotting positions), which rises toward
//! one as the residual Gaussianizes.

use crate::denoise::Denoiser;
use crate::env::Instance;
use crate::error::{Error, Result};
use crate::policy::{fixed_optimal_search, oracle_search, ActMode, ParamGrid, Policy, PolicyNets};
use crate::rng::Rng;
use crate::solver::{run_solver, IterationTrace, Scheme, SolverOptions};
use crate::tensor::Tensor;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// inverse standard-normal CDF
// ---------------------------------------------------------------------------

/// Standard normal density.
fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// erf by Maclaurin series; accurate to roughly 1e-14 for |x| <= 3.6.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut acc = x;
    let x2 = x * x;
    for n in 1..120 {
        term *= -x2 / n as f64;
        let add = term / (2 * n + 1) as f64;
        acc += add;
        if add.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
    }
    acc * 2.0 / std::f64::consts::PI.sqrt()
}

/// Standard normal CDF via the erf series (|z| <= 5 territory).
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2))
}

/// Acklam's rational approximation to the probit function, |error| ~ 1e-9.
fn norm_inv_acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse standard-normal CDF: Acklam's approximation polished by two
/// Halley iterations against the series CDF. Absolute error is well under
/// 1e-8 across [0.001, 0.999].
pub fn norm_inv(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::invalid(format!("probability {p} outside (0, 1)")));
    }
    let mut z = norm_inv_acklam(p);
    if z.abs() <= 5.0 {
        for _ in 0..2 {
            let f = std_normal_cdf(z) - p;
            let u = f / phi(z);
            z -= u / (1.0 + 0.5 * u * z);
        }
    }
    Ok(z)
}

// ---------------------------------------------------------------------------
// probability plot
// ---------------------------------------------------------------------------

const PROBPLOT_MAX_POINTS: usize = 8192;

/// Gaussian probability plot of a sample: pairs of (theoretical standard
/// normal quantile at the Blom plotting position (i - 0.375)/(n + 0.25),
/// sorted standardized sample value), and the squared Pearson correlation of
/// those pairs. Samples larger than 8192 points are strided down first.
pub fn probplot_r2(sample: &[f64]) -> Result<(Vec<(f64, f64)>, f64)> {
    if sample.len() < 16 {
        return Err(Error::invalid(format!(
            "probability plot needs at least 16 points, got {}",
            sample.len()
        )));
    }
    let strided: Vec<f64> = if sample.len() > PROBPLOT_MAX_POINTS {
        let stride = sample.len().div_ceil(PROBPLOT_MAX_POINTS);
        sample.iter().step_by(stride).copied().collect()
    } else {
        sample.to_vec()
    };
    let n = strided.len();
    let mean = strided.iter().sum::<f64>() / n as f64;
    let var = strided.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return Err(Error::invalid("zero-variance sample has no probability plot"));
    }
    let std = var.sqrt();
    let mut values: Vec<f64> = strided.iter().map(|x| (x - mean) / std).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut pairs = Vec::with_capacity(n);
    for (i, &v) in values.iter().enumerate() {
        let pos = (i as f64 + 1.0 - 0.375) / (n as f64 + 0.25);
        pairs.push((norm_inv(pos)?, v));
    }

    // Pearson correlation of the pairs
    let qm = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let vm = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sqq, mut svv, mut sqv) = (0.0, 0.0, 0.0);
    for &(q, v) in &pairs {
        sqq += (q - qm) * (q - qm);
        svv += (v - vm) * (v - vm);
        sqv += (q - qm) * (v - vm);
    }
    let r2 = (sqv * sqv) / (sqq * svv);
    Ok((pairs, r2))
}

// ---------------------------------------------------------------------------
// iteration noise
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct NoiseSample {
    /// Iteration index (1-based over executed iterations).
    pub k: usize,
    /// Denoiser input minus ground truth.
    pub eps: Tensor,
    pub scheme: Scheme,
}

/// Iteration noise per executed iteration: the denoiser input recorded in
/// the trace minus the ground truth.
pub fn iteration_noise(
    trace: &IterationTrace,
    truth: &Tensor,
    scheme: Scheme,
) -> Result<Vec<NoiseSample>> {
    let mut out = Vec::with_capacity(trace.rows.len());
    for row in &trace.rows {
        if row.xbar.dims() != truth.dims() {
            return Err(Error::dims(format!(
                "trace snapshot {:?} vs truth {:?}",
                row.xbar.dims(),
                truth.dims()
            )));
        }
        out.push(NoiseSample {
            k: row.k,
            eps: row.xbar.sub(truth),
            scheme,
        });
    }
    Ok(out)
}

/// Per-iteration normality score of the iteration noise.
pub fn trace_r2_series(
    trace: &IterationTrace,
    truth: &Tensor,
    scheme: Scheme,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for sample in iteration_noise(trace, truth, scheme)? {
        match probplot_r2(sample.eps.real()) {
            Ok((_, r2)) => out.push((sample.k, r2)),
            Err(_) => out.push((sample.k, f64::NAN)), // degenerate residual
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

/// Policy selector for benchmark rows.
pub enum PolicySpec {
    Fixed,
    /// Geometric schedule from 40/255 down to the instance noise level
    /// (floored at 5/255).
    Handcrafted,
    FixedOptimal,
    Greedy,
    Oracle,
    Learned(PolicyNets),
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Fixed => "fixed",
            PolicySpec::Handcrafted => "handcrafted",
            PolicySpec::FixedOptimal => "fixed-optimal",
            PolicySpec::Greedy => "greedy",
            PolicySpec::Oracle => "oracle",
            PolicySpec::Learned(_) => "learned",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkRow {
    pub scheme: Scheme,
    pub policy: String,
    /// Starred rows report the best PSNR over all iterations (optimal early
    /// stopping) instead of the final iterate.
    pub starred: bool,
    pub mean_psnr: f64,
    pub mean_iters: f64,
    pub per_image: Vec<f64>,
    /// Instances whose solve aborted; they are excluded from the means.
    pub failures: usize,
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

fn handcrafted_for(instance: &Instance, total_iters: usize) -> Result<Policy> {
    let end = instance.model.effective_noise_sigma().max(5.0 / 255.0);
    Policy::handcrafted(40.0 / 255.0, end, total_iters)
}

fn policy_for_instance(
    spec: &PolicySpec,
    instance: &Instance,
    dataset: &[Arc<Instance>],
    scheme: Scheme,
    d: &Denoiser,
    grid: &ParamGrid,
    opts: &SolverOptions,
    fixed_optimal_cache: &mut Option<Policy>,
) -> Result<Policy> {
    match spec {
        PolicySpec::Fixed => Ok(Policy::fixed()),
        PolicySpec::Handcrafted => handcrafted_for(instance, opts.block_iters * opts.max_blocks),
        PolicySpec::Greedy => Ok(Policy::Greedy { grid: grid.clone() }),
        PolicySpec::Oracle => oracle_search(&instance.model, &instance.truth, grid, scheme, d, opts),
        PolicySpec::FixedOptimal => {
            if fixed_optimal_cache.is_none() {
                let pairs: Vec<_> = dataset
                    .iter()
                    .map(|inst| (inst.model.clone(), inst.truth.clone()))
                    .collect();
                *fixed_optimal_cache = Some(fixed_optimal_search(&pairs, grid, scheme, d, opts)?);
            }
            match fixed_optimal_cache.as_ref().unwrap() {
                Policy::Constant { params, label } => Ok(Policy::Constant {
                    params: *params,
                    label: label.clone(),
                }),
                _ => unreachable!(),
            }
        }
        PolicySpec::Learned(nets) => Ok(Policy::Learned {
            nets: nets.clone(),
            mode: ActMode::Eval,
            rng: Rng::new(0x1EA8),
        }),
    }
}

/// Evaluate the full scheme x policy cross product on a dataset. Each pair
/// produces a plain row (final iterate) and a starred row (best over all
/// iterations, derived from the same traces). Solver aborts are recorded as
/// row failures rather than crashing the run.
pub fn run_benchmark(
    dataset: &[Arc<Instance>],
    schemes: &[Scheme],
    policies: &[PolicySpec],
    d: &Denoiser,
    grid: &ParamGrid,
    opts: &SolverOptions,
) -> Result<BenchmarkReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("benchmark needs a non-empty dataset"));
    }
    let mut report = BenchmarkReport::default();
    for &scheme in schemes {
        for spec in policies {
            let mut fixed_optimal_cache = None;
            let mut plain = Vec::new();
            let mut starred = Vec::new();
            let mut plain_iters = Vec::new();
            let mut starred_iters = Vec::new();
            let mut failures = 0usize;
            for inst in dataset {
                let policy = policy_for_instance(
                    spec,
                    inst,
                    dataset,
                    scheme,
                    d,
                    grid,
                    opts,
                    &mut fixed_optimal_cache,
                );
                let outcome = policy.and_then(|mut p| {
                    let mut rng = Rng::new(0xBE7C);
                    run_solver(&inst.model, scheme, &mut p, d, Some(&inst.truth), opts, &mut rng)
                });
                match outcome {
                    Ok(out) => {
                        let fp = out.trace.final_psnr().unwrap_or(f64::NEG_INFINITY);
                        plain.push(fp);
                        plain_iters.push(out.trace.iterations() as f64);
                        let (bp, bi) = out.trace.best_psnr().unwrap_or((fp, 0));
                        starred.push(bp);
                        starred_iters.push(bi as f64);
                    }
                    Err(_) => failures += 1,
                }
            }
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            };
            report.rows.push(BenchmarkRow {
                scheme,
                policy: spec.name().into(),
                starred: false,
                mean_psnr: mean(&plain),
                mean_iters: mean(&plain_iters),
                per_image: plain,
                failures,
            });
            report.rows.push(BenchmarkRow {
                scheme,
                policy: spec.name().into(),
                starred: true,
                mean_psnr: mean(&starred),
                mean_iters: mean(&starred_iters),
                per_image: starred,
                failures,
            });
        }
    }
    Ok(report)
}

impl BenchmarkReport {
    pub fn find(&self, scheme: Scheme, policy: &str, starred: bool) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.policy == policy && r.starred == starred)
    }

    /// CSV rendering: fixed row order, fixed float formatting, so identical
    /// runs produce byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,policy,starred,mean_psnr,mean_iters,failures,per_image_psnr\n");
        for r in &self.rows {
            let per: Vec<String> = r.per_image.iter().map(|p| format!("{p:.6}")).collect();
            out.push_str(&format!(
                "{},{},{},{:.6},{:.2},{},{}\n",
                r.scheme.name(),
                r.policy,
                if r.starred { 1 } else { 0 },
                r.mean_psnr,
                r.mean_iters,
                r.failures,
                per.join(";")
            ));
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<16} {:>10} {:>8}\n",
            "scheme", "policy", "mean PSNR", "#IT"
        ));
        for r in &self.rows {
            let name = if r.starred {
                format!("{}*", r.policy)
            } else {
                r.policy.clone()
            };
            out.push_str(&format!(
                "{:<8} {:<16} {:>10.3} {:>8.1}\n",
                r.scheme.name(),
                name,
                r.mean_psnr,
                r.mean_iters
            ));
        }
        out
    }
}
