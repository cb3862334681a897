//! Experiment drivers behind the CLI subcommands.
//!
//! Work fans out over (grid point, seed) with one RNG stream per work item,
//! and partial results are merged in grid order, so output bytes do not
//! depend on the worker count.

use crate::config::{default_emax_mode, Command, ExperimentConfig, Family, SchedulePolicy};
use crate::rows::{Field, Table};
use crate::{CliError, Result};
use mfvi_core::base_dist::BaseDist;
use mfvi_core::family::{FullRankParams, MeanFieldParams, VariationalParams};
use mfvi_core::grad_estimator::reparam_grad_batch;
use mfvi_core::maxstats::emax_report;
use mfvi_core::rng::{derive_seed, substream};
use mfvi_core::spgd::{
    complexity_prediction, run, spgd_step, RunOptions, ScheduleConfig, DIVERGENCE_LIMIT,
};
use mfvi_core::targets::{HessianSpec, TargetSpec};
use mfvi_core::variance_lab::{g_factor, lower_bound_experiment, pair_variance_report};
use nalgebra::DVector;
use rayon::prelude::*;

pub const FIT_COLUMNS: [&str; 8] = [
    "t", "gamma_t", "dist_sq", "elbo_est", "m_norm", "c_min", "c_max", "seed",
];

pub const MAXSTATS_COLUMNS: [&str; 7] = [
    "dist",
    "d",
    "empirical",
    "stderr",
    "bound_mgf",
    "bound_moment",
    "bound_gaussian_special",
];

pub const VARIANCE_COLUMNS: [&str; 11] = [
    "d",
    "dist",
    "delta",
    "H_norm",
    "dist_sq",
    "empirical",
    "stderr",
    "v_loc",
    "v_scale",
    "bound",
    "g_factor",
];

pub const LOWERBOUND_COLUMNS: [&str; 15] = [
    "d",
    "dist",
    "delta",
    "H_norm",
    "dist_sq",
    "empirical",
    "stderr",
    "v_loc",
    "v_scale",
    "bound",
    "g_factor",
    "lhs",
    "rhs",
    "t",
    "vacuous_flag",
];

pub const DIMSWEEP_COLUMNS: [&str; 11] = [
    "d",
    "family",
    "dist",
    "kappa",
    "delta",
    "eps",
    "iters_to_eps",
    "reached",
    "g_factor",
    "t_pred",
    "n_seeds",
];

/// Runs `f` on a dedicated rayon pool of `workers` threads (0 = default).
pub fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run_command(cfg: &ExperimentConfig) -> Result<Table> {
    match cfg.command {
        Command::Fit => run_fit(cfg),
        Command::MaxStats => run_maxstats(cfg),
        Command::VarianceSweep => run_variance_sweep(cfg),
        Command::LowerBound => run_lowerbound(cfg),
        Command::DimSweep => run_dim_sweep(cfg),
    }
}

/// Builds a sweep-point target: logspace spectrum from 1 to kappa, perturbed
/// when delta > 0.
fn point_target(d: usize, kappa: f64, delta: f64) -> Result<TargetSpec> {
    let h = HessianSpec::logspace(d, 1.0, kappa)?;
    let z_bar = DVector::zeros(d);
    let t = if delta == 0.0 {
        TargetSpec::quadratic(h, z_bar)?
    } else {
        TargetSpec::perturbed_quadratic(h, z_bar, delta)?
    };
    Ok(t)
}

fn init_params(family: Family, target: &TargetSpec) -> Result<VariationalParams> {
    let d = target.dim();
    let m = target.z_bar() + DVector::from_element(d, 1.0);
    let ones = DVector::from_element(d, 1.0);
    Ok(match family {
        Family::MeanField => MeanFieldParams::new(m, ones)?.into(),
        Family::FullRank => FullRankParams::from_diagonal(m, &ones)?.into(),
    })
}

fn sigma_star_of(params: &VariationalParams, z_bar: &DVector<f64>) -> f64 {
    let loc = (params.location() - z_bar).norm_squared();
    let scale = match params {
        VariationalParams::MeanField(p) => p.scale_diag().norm_squared(),
        VariationalParams::FullRank(p) => p.scale_factor().norm_squared(),
    };
    loc + scale
}

/// Expected-smoothness constant used to derive the step size.
///
/// Mean-field uses the proven constant `L^2 = g mu^2`. The full-rank arm has
/// no bound claimed here; its schedule uses the classical scaling of the
/// triangular-factor gradient, `(d + 1 + r4)(|H|^2 + delta^2)`, which is a
/// driver heuristic rather than a certified constant.
fn smoothness_sq_for(family: Family, target: &TargetSpec, dist: &BaseDist) -> Result<f64> {
    let (h, delta) = target.hessian_deviation();
    let h_norm = h.op_norm();
    match family {
        Family::MeanField => {
            let g = g_factor(
                target.dim(),
                h_norm,
                delta,
                target.mu(),
                dist,
                default_emax_mode(dist),
            )?;
            Ok(g * target.mu() * target.mu())
        }
        Family::FullRank => {
            let d = target.dim() as f64;
            Ok((d + 1.0 + dist.kurtosis()) * (h_norm * h_norm + delta * delta))
        }
    }
}

struct ReferencePoint {
    params: VariationalParams,
    approx: bool,
}

/// Closed form for quadratic targets; a long high-batch warm-started run
/// otherwise, flagged approximate.
fn reference_point(
    target: &TargetSpec,
    family: Family,
    dist: &BaseDist,
    t_max: u64,
) -> Result<ReferencePoint> {
    use mfvi_core::targets::TargetKind;
    if target.kind() == TargetKind::Quadratic {
        let params = match family {
            Family::MeanField => target.mf_optimum()?.into(),
            Family::FullRank => target.fr_optimum()?.into(),
        };
        return Ok(ReferencePoint {
            params,
            approx: false,
        });
    }

    // warm start from the optimum of the quadratic part
    let companion = TargetSpec::quadratic(target.hessian().clone(), target.z_bar().clone())?;
    let warm: VariationalParams = match family {
        Family::MeanField => companion.mf_optimum()?.into(),
        Family::FullRank => companion.fr_optimum()?.into(),
    };
    let sigma_star = sigma_star_of(&warm, target.z_bar());
    let l_sq = smoothness_sq_for(family, target, dist)?;
    let horizon = t_max.clamp(500, 4000);
    let sched = ScheduleConfig::suggested(
        l_sq.sqrt(),
        target.mu(),
        l_sq * sigma_star,
        // the warm start is already close; a unit-scale guess is enough
        1.0,
        horizon,
    )?;
    let opts = RunOptions {
        t_horizon: horizon,
        batch: 64,
        seed: derive_seed(0x5eed_0001, target.dim() as u64),
        elbo_every: 0,
        reference_is_approx: true,
        ..Default::default()
    };
    let trace = run(target, &warm, dist, &sched, &opts, None)?;
    if trace.divergence.is_some() {
        return Err(CliError::config(
            "reference run diverged; lower t_max or check the target constants",
        ));
    }
    Ok(ReferencePoint {
        params: trace.final_params,
        approx: true,
    })
}

fn schedule_for(
    family: Family,
    target: &TargetSpec,
    dist: &BaseDist,
    sigma_star_sq: f64,
    delta0_sq: f64,
    t_max: u64,
    policy: SchedulePolicy,
) -> Result<ScheduleConfig> {
    match policy {
        SchedulePolicy::Manual { gamma0, t_star } => {
            Ok(ScheduleConfig::new(gamma0, t_star, target.mu())?)
        }
        SchedulePolicy::Auto => {
            let l_sq = smoothness_sq_for(family, target, dist)?;
            Ok(ScheduleConfig::suggested(
                l_sq.sqrt(),
                target.mu(),
                l_sq * sigma_star_sq,
                delta0_sq,
                t_max,
            )?)
        }
    }
}

// ---------------------------------------------------------------------------
// fit

fn run_fit(cfg: &ExperimentConfig) -> Result<Table> {
    let target = cfg.target.build()?;
    let fit = &cfg.fit;
    let reference = reference_point(&target, fit.family, &fit.dist, fit.t_max)?;
    let init = init_params(fit.family, &target)?;
    let sigma_star = sigma_star_of(&reference.params, target.z_bar());
    let delta0 = init.distance_sq(&reference.params)?;
    let sched = schedule_for(
        fit.family,
        &target,
        &fit.dist,
        sigma_star,
        delta0,
        fit.t_max,
        fit.schedule,
    )?;

    let traces: Vec<Result<mfvi_core::spgd::RunTrace>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let opts = RunOptions {
                t_horizon: fit.t_max,
                batch: fit.batch,
                seed,
                elbo_every: fit.elbo_every,
                reference_is_approx: reference.approx,
                ..Default::default()
            };
            Ok(run(
                &target,
                &init,
                &fit.dist,
                &sched,
                &opts,
                Some(&reference.params),
            )?)
        })
        .collect();

    let mut table = Table::new(FIT_COLUMNS.to_vec());
    for trace in traces {
        let trace = trace?;
        for row in &trace.rows {
            table.push(vec![
                row.t.into(),
                row.gamma_t.into(),
                row.dist_sq_to_opt.into(),
                row.elbo_est.into(),
                row.m_norm.into(),
                row.c_min.into(),
                row.c_max.into(),
                trace.seed.into(),
            ]);
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// maxstats

fn run_maxstats(cfg: &ExperimentConfig) -> Result<Table> {
    let base_seed = cfg.seeds[0];
    let points: Vec<(usize, BaseDist, usize)> = cfg
        .grid
        .dist
        .iter()
        .flat_map(|dist| cfg.grid.d.iter().map(move |&d| (*dist, d)))
        .enumerate()
        .map(|(idx, (dist, d))| (idx, dist, d))
        .collect();

    let reports: Vec<_> = points
        .par_iter()
        .map(|(idx, dist, d)| {
            emax_report(
                dist,
                *d,
                cfg.samples.n_trials,
                derive_seed(base_seed, *idx as u64),
                None,
                None,
            )
        })
        .collect();

    let mut table = Table::new(MAXSTATS_COLUMNS.to_vec());
    for ((_, dist, _), rep) in points.iter().zip(reports) {
        table.push(vec![
            dist.label().into(),
            rep.d.into(),
            rep.empirical.into(),
            rep.stderr.into(),
            rep.bound_mgf.into(),
            rep.bound_moment.into(),
            rep.bound_gaussian_special.into(),
        ]);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// variance sweep

fn run_variance_sweep(cfg: &ExperimentConfig) -> Result<Table> {
    let base_seed = cfg.seeds[0];
    let mut points = Vec::new();
    for &d in &cfg.grid.d {
        for &kappa in &cfg.grid.kappa {
            for &delta in &cfg.grid.delta {
                for dist in &cfg.grid.dist {
                    points.push((d, kappa, delta, *dist));
                }
            }
        }
    }

    let rows: Vec<Result<Vec<Field>>> = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(d, kappa, delta, dist))| {
            let target = point_target(d, kappa, delta)?;
            // random parameter pair; the pair generator is Gaussian no
            // matter the base law, since any point of the space is valid
            let gauss = BaseDist::gaussian();
            let mut rng = substream(derive_seed(base_seed, 2 * idx as u64), 0);
            let a: VariationalParams = MeanFieldParams::new(
                gauss.sample_vec(&mut rng, d),
                gauss.sample_vec(&mut rng, d).map(|x| x.abs() + 0.2),
            )?
            .into();
            let b: VariationalParams = MeanFieldParams::new(
                gauss.sample_vec(&mut rng, d),
                gauss.sample_vec(&mut rng, d).map(|x| x.abs() + 0.2),
            )?
            .into();
            let rep = pair_variance_report(
                &target,
                &a,
                &b,
                &dist,
                cfg.samples.n_variance,
                derive_seed(base_seed, 2 * idx as u64 + 1),
                default_emax_mode(&dist),
            )?;
            Ok(vec![
                rep.d.into(),
                rep.dist_label.clone().into(),
                rep.delta.into(),
                rep.h_norm.into(),
                rep.dist_sq.into(),
                rep.empirical.into(),
                rep.stderr.into(),
                rep.v_loc.into(),
                rep.v_scale.into(),
                rep.bound_total.into(),
                rep.g_factor.into(),
            ])
        })
        .collect();

    let mut table = Table::new(VARIANCE_COLUMNS.to_vec());
    for row in rows {
        table.push(row?);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// lower bound

fn run_lowerbound(cfg: &ExperimentConfig) -> Result<Table> {
    let base_seed = cfg.seeds[0];
    let lb = cfg.lowerbound;
    let mut points = Vec::new();
    for dist in &cfg.grid.dist {
        for &d in &cfg.grid.d {
            points.push((*dist, d));
        }
    }

    let reports: Vec<Result<_>> = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(dist, d))| {
            Ok(lower_bound_experiment(
                lb.mu,
                lb.l,
                d,
                &dist,
                lb.t,
                cfg.samples.n_lowerbound,
                derive_seed(base_seed, idx as u64),
            )?)
        })
        .collect();

    let mut table = Table::new(LOWERBOUND_COLUMNS.to_vec());
    for ((dist, _), rep) in points.iter().zip(reports) {
        let rep = rep?;
        let cfg_field = mfvi_core::targets::WorstFieldConfig::new(rep.mu, rep.l)
            .expect("validated at experiment time");
        table.push(vec![
            rep.d.into(),
            dist.label().into(),
            cfg_field.beta.into(),
            cfg_field.alpha.into(),
            (rep.d as f64).into(), // ||C||_F^2 with C = I
            rep.lhs_empirical.into(),
            rep.lhs_stderr.into(),
            Field::Empty,
            Field::Empty,
            Field::Empty,
            Field::Empty,
            rep.lhs_empirical.into(),
            rep.rhs_theory.into(),
            rep.t.into(),
            u64::from(rep.vacuous).into(),
        ]);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// dimension sweep

/// Outcome of one sweep point: first iteration where the seed-averaged
/// squared distance to the optimum crosses eps.
struct PointOutcome {
    iters_to_eps: Option<u64>,
    eps: f64,
    g: f64,
    t_pred: Option<f64>,
}

fn dim_sweep_point(
    cfg: &ExperimentConfig,
    d: usize,
    kappa: f64,
    delta: f64,
    dist: &BaseDist,
    family: Family,
) -> Result<PointOutcome> {
    let sweep = &cfg.dim_sweep;
    let target = point_target(d, kappa, delta)?;
    let reference = reference_point(&target, family, dist, sweep.t_max)?;
    let init = init_params(family, &target)?;
    let sigma_star = sigma_star_of(&reference.params, target.z_bar());
    let delta0 = init.distance_sq(&reference.params)?;
    let eps = sweep.eps_rel * sigma_star;
    let sched = schedule_for(
        family,
        &target,
        dist,
        sigma_star,
        delta0,
        sweep.t_max,
        SchedulePolicy::Auto,
    )?;

    let g = g_factor(
        d,
        target.h_norm(),
        target.hessian_deviation().1,
        target.mu(),
        dist,
        default_emax_mode(dist),
    )?;
    let t_pred = match family {
        Family::MeanField => Some(complexity_prediction(g, sigma_star, delta0, eps).iterations()),
        Family::FullRank => None,
    };

    let iters = iterations_to_eps(
        &target,
        &init,
        &reference.params,
        dist,
        &sched,
        eps,
        sweep.t_max,
        sweep.batch,
        &cfg.seeds,
    )?;

    Ok(PointOutcome {
        iters_to_eps: iters,
        eps,
        g,
        t_pred,
    })
}

/// Steps every seed jointly in blocks, tracking the running seed-mean of
/// the squared distance, and stops at the first crossing. Per-seed RNG
/// streams persist across blocks, so the trajectory matches a straight
/// single-seed run.
#[allow(clippy::too_many_arguments)]
fn iterations_to_eps(
    target: &TargetSpec,
    init: &VariationalParams,
    reference: &VariationalParams,
    dist: &BaseDist,
    sched: &ScheduleConfig,
    eps: f64,
    t_max: u64,
    batch: usize,
    seeds: &[u64],
) -> Result<Option<u64>> {
    struct SeedState {
        params: VariationalParams,
        rng: mfvi_core::rng::StreamRng,
        diverged: bool,
    }

    let mut states: Vec<SeedState> = seeds
        .iter()
        .map(|&s| SeedState {
            params: init.clone(),
            rng: substream(s, 0),
            diverged: false,
        })
        .collect();
    let n_seeds = seeds.len() as f64;

    let mean0 = states
        .iter()
        .map(|s| s.params.distance_sq(reference).unwrap_or(f64::INFINITY))
        .sum::<f64>()
        / n_seeds;
    if mean0 <= eps {
        return Ok(Some(0));
    }

    let block: u64 = 512;
    let mut t: u64 = 0;
    while t < t_max {
        let steps = block.min(t_max - t);
        let blocks: Vec<Result<Vec<f64>>> = states
            .par_iter_mut()
            .map(|state| {
                let mut out = Vec::with_capacity(steps as usize);
                for k in 0..steps {
                    if state.diverged {
                        out.push(f64::INFINITY);
                        continue;
                    }
                    let gamma = sched.step_size(t + k);
                    let grad =
                        reparam_grad_batch(target, &state.params, dist, batch, &mut state.rng)?;
                    match spgd_step(&state.params, &grad, gamma) {
                        Ok(next) => state.params = next,
                        Err(_) => {
                            state.diverged = true;
                            out.push(f64::INFINITY);
                            continue;
                        }
                    }
                    let m_norm = state.params.location().norm();
                    if !m_norm.is_finite() || m_norm > DIVERGENCE_LIMIT {
                        state.diverged = true;
                        out.push(f64::INFINITY);
                        continue;
                    }
                    out.push(state.params.distance_sq(reference)?);
                }
                Ok(out)
            })
            .collect();

        let mut per_seed = Vec::with_capacity(states.len());
        for b in blocks {
            per_seed.push(b?);
        }
        for k in 0..steps as usize {
            let mean = per_seed.iter().map(|tr| tr[k]).sum::<f64>() / n_seeds;
            if mean <= eps {
                return Ok(Some(t + k as u64 + 1));
            }
        }
        t += steps;
    }
    Ok(None)
}

fn run_dim_sweep(cfg: &ExperimentConfig) -> Result<Table> {
    let mut table = Table::new(DIMSWEEP_COLUMNS.to_vec());
    for &d in &cfg.grid.d {
        for &kappa in &cfg.grid.kappa {
            for &delta in &cfg.grid.delta {
                for dist in &cfg.grid.dist {
                    for &family in &cfg.dim_sweep.families {
                        let outcome = dim_sweep_point(cfg, d, kappa, delta, dist, family)?;
                        table.push(vec![
                            d.into(),
                            family.as_str().into(),
                            dist.label().into(),
                            kappa.into(),
                            delta.into(),
                            outcome.eps.into(),
                            outcome.iters_to_eps.into(),
                            u64::from(outcome.iters_to_eps.is_some()).into(),
                            outcome.g.into(),
                            outcome.t_pred.into(),
                            cfg.seeds.len().into(),
                        ]);
                    }
                }
            }
        }
    }
    Ok(table)
}
