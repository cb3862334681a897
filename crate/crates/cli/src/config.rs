//! Experiment configuration: a TOML file with one section per concern.
//! Unknown keys are rejected; every validation failure carries a distinct
//! message naming the offending field.

use crate::{CliError, Result};
use mfvi_core::base_dist::BaseDist;
use mfvi_core::maxstats::EmaxMode;
use mfvi_core::spgd::ScheduleConfig;
use mfvi_core::targets::{HessianSpec, TargetSpec};
use mfvi_core::variance_lab::g_factor;
use nalgebra::DVector;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    VarianceSweep,
    MaxStats,
    LowerBound,
    DimSweep,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Command::Fit => "fit",
            Command::VarianceSweep => "variance-sweep",
            Command::MaxStats => "maxstats",
            Command::LowerBound => "lowerbound",
            Command::DimSweep => "dim-sweep",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutFormat {
    Csv,
    JsonLines,
}

impl OutFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutFormat::Csv => "csv",
            OutFormat::JsonLines => "json-lines",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    MeanField,
    FullRank,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::MeanField => "mean-field",
            Family::FullRank => "full-rank",
        }
    }
}

impl FromStr for Family {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-field" => Ok(Family::MeanField),
            "full-rank" => Ok(Family::FullRank),
            other => Err(CliError::config(format!(
                "unknown family {other:?} (expected mean-field or full-rank)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// raw TOML layer

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seeds: Option<Vec<u64>>,
    workers: Option<usize>,
    out_format: Option<String>,
    target: Option<RawTarget>,
    fit: Option<RawFit>,
    grid: Option<RawGrid>,
    samples: Option<RawSamples>,
    dim_sweep: Option<RawDimSweep>,
    lowerbound: Option<RawLowerBound>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    kind: Option<String>,
    d: Option<usize>,
    mu: Option<f64>,
    l: Option<f64>,
    delta: Option<f64>,
    hessian: Option<RawHessian>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawHessian {
    Named(String),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    family: Option<String>,
    dist: Option<String>,
    t_max: Option<u64>,
    batch: Option<usize>,
    schedule: Option<RawSchedule>,
    elbo_every: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSchedule {
    Named(String),
    Manual { gamma0: f64, t_star: u64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    d: Option<Vec<usize>>,
    kappa: Option<Vec<f64>>,
    delta: Option<Vec<f64>>,
    dist: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSamples {
    n_variance: Option<usize>,
    n_trials: Option<usize>,
    n_lowerbound: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDimSweep {
    families: Option<Vec<String>>,
    eps_rel: Option<f64>,
    t_max: Option<u64>,
    batch: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLowerBound {
    mu: Option<f64>,
    l: Option<f64>,
    t: Option<f64>,
}

// ---------------------------------------------------------------------------
// validated layer

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKindCfg {
    Quadratic,
    PerturbedQuadratic,
}

#[derive(Debug, Clone)]
pub enum HessianCfg {
    Logspace,
    Identity,
    ExplicitDiagonal(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct TargetConfig {
    pub kind: TargetKindCfg,
    pub d: usize,
    pub mu: f64,
    pub l: f64,
    pub delta: f64,
    pub hessian: HessianCfg,
    /// Randomizes the stationary point when present; zeros otherwise.
    pub seed: Option<u64>,
}

impl TargetConfig {
    pub fn hessian_spec(&self, d: usize) -> Result<HessianSpec> {
        match &self.hessian {
            HessianCfg::Logspace => Ok(HessianSpec::logspace(d, self.mu, self.l)?),
            HessianCfg::Identity => Ok(HessianSpec::identity(d)),
            HessianCfg::ExplicitDiagonal(entries) => {
                if entries.len() != d {
                    return Err(CliError::config(format!(
                        "explicit Hessian diagonal has {} entries but d = {d}",
                        entries.len()
                    )));
                }
                Ok(HessianSpec::Diagonal(DVector::from_column_slice(entries)))
            }
        }
    }

    pub fn z_bar(&self, d: usize) -> DVector<f64> {
        match self.seed {
            None => DVector::zeros(d),
            Some(seed) => {
                let gauss = BaseDist::gaussian();
                let mut rng = mfvi_core::rng::substream(seed, 0);
                gauss.sample_vec(&mut rng, d)
            }
        }
    }

    pub fn build(&self) -> Result<TargetSpec> {
        let h = self.hessian_spec(self.d)?;
        let z_bar = self.z_bar(self.d);
        let t = match self.kind {
            TargetKindCfg::Quadratic => TargetSpec::quadratic(h, z_bar)?,
            TargetKindCfg::PerturbedQuadratic => {
                TargetSpec::perturbed_quadratic(h, z_bar, self.delta)?
            }
        };
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SchedulePolicy {
    Auto,
    Manual { gamma0: f64, t_star: u64 },
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub family: Family,
    pub dist: BaseDist,
    pub t_max: u64,
    pub batch: usize,
    pub schedule: SchedulePolicy,
    pub elbo_every: u64,
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub d: Vec<usize>,
    pub kappa: Vec<f64>,
    pub delta: Vec<f64>,
    pub dist: Vec<BaseDist>,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplesConfig {
    pub n_variance: usize,
    pub n_trials: usize,
    pub n_lowerbound: usize,
}

#[derive(Debug, Clone)]
pub struct DimSweepConfig {
    pub families: Vec<Family>,
    pub eps_rel: f64,
    pub t_max: u64,
    pub batch: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LowerBoundConfig {
    pub mu: f64,
    pub l: f64,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out_format: OutFormat,
    pub target: TargetConfig,
    pub fit: FitConfig,
    pub grid: GridConfig,
    pub samples: SamplesConfig,
    pub dim_sweep: DimSweepConfig,
    pub lowerbound: LowerBoundConfig,
    pub digest: String,
}

/// The default emax supply for a law: the closed-form constant for the
/// Gaussian, the moment bound otherwise.
pub fn default_emax_mode(dist: &BaseDist) -> EmaxMode {
    match dist.kind() {
        mfvi_core::base_dist::DistKind::Gaussian => EmaxMode::GaussianSpecial,
        _ => EmaxMode::Moment { k: None },
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn parse_config(
    path: &Path,
    command: Command,
    seeds_override: Option<Vec<u64>>,
    workers_override: Option<usize>,
) -> Result<ExperimentConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let digest = sha256_hex(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::config(format!("{} is not valid UTF-8", path.display())))?;
    let raw: RawConfig = toml::from_str(&text)
        .map_err(|e| CliError::config(format!("malformed config {}: {e}", path.display())))?;
    validate(raw, command, seeds_override, workers_override, digest)
}

/// Parses from an in-memory string; used by tests.
pub fn parse_config_str(text: &str, command: Command) -> Result<ExperimentConfig> {
    let digest = sha256_hex(text.as_bytes());
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| CliError::config(format!("malformed config: {e}")))?;
    validate(raw, command, None, None, digest)
}

fn validate(
    raw: RawConfig,
    command: Command,
    seeds_override: Option<Vec<u64>>,
    workers_override: Option<usize>,
    digest: String,
) -> Result<ExperimentConfig> {
    let seeds = seeds_override
        .or(raw.seeds)
        .unwrap_or_else(|| default_seeds(command));
    if seeds.is_empty() {
        return Err(CliError::config("seed list must be non-empty"));
    }
    {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(CliError::config("duplicate seeds in seed list"));
        }
    }

    let workers = workers_override.or(raw.workers).unwrap_or(0);

    let out_format = match raw.out_format.as_deref() {
        None | Some("csv") => OutFormat::Csv,
        Some("json-lines") => OutFormat::JsonLines,
        Some(other) => {
            return Err(CliError::config(format!(
                "unknown out_format {other:?} (expected csv or json-lines)"
            )))
        }
    };

    let target = validate_target(raw.target)?;
    let fit = validate_fit(raw.fit, &target)?;
    let grid = validate_grid(raw.grid, command)?;
    let samples = validate_samples(raw.samples)?;
    let dim_sweep = validate_dim_sweep(raw.dim_sweep)?;
    let lowerbound = validate_lowerbound(raw.lowerbound)?;

    if command == Command::LowerBound {
        if let Some(&d) = grid.d.iter().find(|&&d| d < 2) {
            return Err(CliError::config(format!(
                "lowerbound requires every grid dimension to be at least 2 (got {d})"
            )));
        }
    }

    Ok(ExperimentConfig {
        command,
        seeds,
        workers,
        out_format,
        target,
        fit,
        grid,
        samples,
        dim_sweep,
        lowerbound,
        digest,
    })
}

fn default_seeds(command: Command) -> Vec<u64> {
    match command {
        // iterations-to-eps is defined as a >= 32-seed average
        Command::DimSweep => (1..=32).collect(),
        Command::Fit => vec![0],
        _ => vec![1],
    }
}

fn validate_target(raw: Option<RawTarget>) -> Result<TargetConfig> {
    let raw = raw.unwrap_or(RawTarget {
        kind: None,
        d: None,
        mu: None,
        l: None,
        delta: None,
        hessian: None,
        seed: None,
    });
    let kind = match raw.kind.as_deref() {
        None | Some("quadratic") => TargetKindCfg::Quadratic,
        Some("perturbed-quadratic") => TargetKindCfg::PerturbedQuadratic,
        Some(other) => {
            return Err(CliError::config(format!(
                "unknown target kind {other:?} (expected quadratic or perturbed-quadratic)"
            )))
        }
    };
    let d = raw.d.unwrap_or(10);
    if d == 0 {
        return Err(CliError::config("target dimension d must be at least 1"));
    }
    let mu = raw.mu.unwrap_or(1.0);
    let l = raw.l.unwrap_or(10.0);
    if !(mu > 0.0 && l >= mu) {
        return Err(CliError::config(format!(
            "target spectrum needs 0 < mu <= l (got mu = {mu}, l = {l})"
        )));
    }
    let delta = raw.delta.unwrap_or(0.0);
    if delta < 0.0 {
        return Err(CliError::config("target delta must be non-negative"));
    }
    match kind {
        TargetKindCfg::Quadratic if delta != 0.0 => {
            return Err(CliError::config(
                "quadratic targets have delta = 0; use kind = perturbed-quadratic",
            ));
        }
        TargetKindCfg::PerturbedQuadratic if delta == 0.0 => {
            return Err(CliError::config("perturbed-quadratic requires delta > 0"));
        }
        TargetKindCfg::PerturbedQuadratic if delta >= mu => {
            return Err(CliError::config(format!(
                "perturbed-quadratic requires delta < sigma_min(H) = {mu} to stay strongly convex"
            )));
        }
        _ => {}
    }
    let hessian = match raw.hessian {
        None => HessianCfg::Logspace,
        Some(RawHessian::Named(name)) => match name.as_str() {
            "logspace" => HessianCfg::Logspace,
            "identity" => HessianCfg::Identity,
            other => {
                let msg = format!(
                    "unknown hessian {other:?} (expected logspace, identity, or an explicit diagonal)"
                );
                return Err(CliError::config(msg));
            }
        },
        Some(RawHessian::Diagonal(entries)) => {
            if entries.is_empty() || entries.iter().any(|&x| !(x > 0.0)) {
                return Err(CliError::config(
                    "explicit Hessian diagonal must be non-empty and strictly positive",
                ));
            }
            HessianCfg::ExplicitDiagonal(entries)
        }
    };
    Ok(TargetConfig {
        kind,
        d,
        mu,
        l,
        delta,
        hessian,
        seed: raw.seed,
    })
}

fn validate_fit(raw: Option<RawFit>, target: &TargetConfig) -> Result<FitConfig> {
    let raw = raw.unwrap_or(RawFit {
        family: None,
        dist: None,
        t_max: None,
        batch: None,
        schedule: None,
        elbo_every: None,
    });
    let family: Family = raw.family.as_deref().unwrap_or("mean-field").parse()?;
    let dist: BaseDist = raw
        .dist
        .as_deref()
        .unwrap_or("gaussian")
        .parse()
        .map_err(|e: mfvi_core::Error| CliError::config(e.to_string()))?;
    let t_max = raw.t_max.unwrap_or(10_000);
    if t_max == 0 {
        return Err(CliError::config("fit t_max must be at least 1"));
    }
    let batch = raw.batch.unwrap_or(1);
    if batch == 0 {
        return Err(CliError::config("fit batch must be at least 1"));
    }
    let schedule = match raw.schedule {
        None => SchedulePolicy::Auto,
        Some(RawSchedule::Named(name)) => match name.as_str() {
            "auto" => SchedulePolicy::Auto,
            other => {
                return Err(CliError::config(format!(
                    "unknown schedule {other:?} (expected \"auto\" or {{gamma0, t_star}})"
                )))
            }
        },
        Some(RawSchedule::Manual { gamma0, t_star }) => {
            if !(gamma0 > 0.0) {
                return Err(CliError::config("schedule gamma0 must be positive"));
            }
            // stability constraint against the target's expected-smoothness
            // constant for this family/base law
            if family == Family::MeanField {
                let spec = TargetConfig {
                    d: target.d,
                    ..target.clone()
                }
                .build()?;
                let g = g_factor(
                    target.d,
                    spec.h_norm(),
                    spec.hessian_deviation().1,
                    spec.mu(),
                    &dist,
                    default_emax_mode(&dist),
                )?;
                let l_hat_sq = g * spec.mu() * spec.mu();
                let cap = spec.mu() / (2.0 * l_hat_sq);
                if gamma0 > cap {
                    return Err(CliError::config(format!(
                        "schedule gamma0 = {gamma0} violates the stability constraint gamma0 <= mu/(2 L^2) = {cap:.3e}"
                    )));
                }
            }
            // construction errors surface here rather than mid-run
            ScheduleConfig::new(gamma0, t_star, 1.0)
                .map_err(|e| CliError::config(e.to_string()))?;
            SchedulePolicy::Manual { gamma0, t_star }
        }
    };
    Ok(FitConfig {
        family,
        dist,
        t_max,
        batch,
        schedule,
        elbo_every: raw.elbo_every.unwrap_or(100),
    })
}

fn validate_grid(raw: Option<RawGrid>, command: Command) -> Result<GridConfig> {
    let raw = raw.unwrap_or(RawGrid {
        d: None,
        kappa: None,
        delta: None,
        dist: None,
    });
    let d = raw.d.unwrap_or_else(|| match command {
        Command::LowerBound => vec![64, 256],
        _ => vec![2, 8, 32],
    });
    if d.is_empty() {
        return Err(CliError::config("grid.d must be non-empty"));
    }
    if d.contains(&0) {
        return Err(CliError::config("grid.d entries must be at least 1"));
    }
    let kappa = raw.kappa.unwrap_or_else(|| vec![10.0]);
    if kappa.is_empty() {
        return Err(CliError::config("grid.kappa must be non-empty"));
    }
    if kappa.iter().any(|&k| !(k >= 1.0)) {
        return Err(CliError::config("grid.kappa entries must be at least 1"));
    }
    let delta = raw.delta.unwrap_or_else(|| vec![0.0]);
    if delta.is_empty() {
        return Err(CliError::config("grid.delta must be non-empty"));
    }
    if delta.iter().any(|&x| x < 0.0) {
        return Err(CliError::config("grid.delta entries must be non-negative"));
    }
    if delta.iter().any(|&x| x >= 1.0) {
        return Err(CliError::config(
            "grid.delta entries must be below sigma_min(H) = 1 to keep targets strongly convex",
        ));
    }
    let dist_names = raw.dist.unwrap_or_else(|| vec!["gaussian".to_string()]);
    if dist_names.is_empty() {
        return Err(CliError::config("grid.dist must be non-empty"));
    }
    let dist = dist_names
        .iter()
        .map(|s| {
            s.parse::<BaseDist>()
                .map_err(|e| CliError::config(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridConfig {
        d,
        kappa,
        delta,
        dist,
    })
}

fn validate_samples(raw: Option<RawSamples>) -> Result<SamplesConfig> {
    let raw = raw.unwrap_or(RawSamples {
        n_variance: None,
        n_trials: None,
        n_lowerbound: None,
    });
    let cfg = SamplesConfig {
        n_variance: raw.n_variance.unwrap_or(4096),
        n_trials: raw.n_trials.unwrap_or(100_000),
        n_lowerbound: raw.n_lowerbound.unwrap_or(100_000),
    };
    if cfg.n_variance < 1000 {
        return Err(CliError::config(
            "samples.n_variance must be at least 1000 for a usable paired estimate",
        ));
    }
    if cfg.n_trials < 100 {
        return Err(CliError::config("samples.n_trials must be at least 100"));
    }
    if cfg.n_lowerbound < 100 {
        return Err(CliError::config(
            "samples.n_lowerbound must be at least 100",
        ));
    }
    Ok(cfg)
}

fn validate_dim_sweep(raw: Option<RawDimSweep>) -> Result<DimSweepConfig> {
    let raw = raw.unwrap_or(RawDimSweep {
        families: None,
        eps_rel: None,
        t_max: None,
        batch: None,
    });
    let families = match raw.families {
        None => vec![Family::MeanField],
        Some(names) => {
            if names.is_empty() {
                return Err(CliError::config("dim_sweep.families must be non-empty"));
            }
            names
                .iter()
                .map(|s| s.parse::<Family>())
                .collect::<Result<Vec<_>>>()?
        }
    };
    let eps_rel = raw.eps_rel.unwrap_or(0.01);
    if !(eps_rel > 0.0) {
        return Err(CliError::config("dim_sweep.eps_rel must be positive"));
    }
    let t_max = raw.t_max.unwrap_or(200_000);
    if t_max == 0 {
        return Err(CliError::config("dim_sweep.t_max must be at least 1"));
    }
    let batch = raw.batch.unwrap_or(1);
    if batch == 0 {
        return Err(CliError::config("dim_sweep.batch must be at least 1"));
    }
    Ok(DimSweepConfig {
        families,
        eps_rel,
        t_max,
        batch,
    })
}

fn validate_lowerbound(raw: Option<RawLowerBound>) -> Result<LowerBoundConfig> {
    let raw = raw.unwrap_or(RawLowerBound {
        mu: None,
        l: None,
        t: None,
    });
    let mu = raw.mu.unwrap_or(1.0);
    let l = raw.l.unwrap_or(10.0);
    if !(mu > 0.0 && l >= mu) {
        return Err(CliError::config(format!(
            "lowerbound needs 0 < mu <= l (got mu = {mu}, l = {l})"
        )));
    }
    let t = raw.t.unwrap_or(0.5);
    if !(t > 0.0) {
        return Err(CliError::config("lowerbound.t must be positive"));
    }
    Ok(LowerBoundConfig { mu, l, t })
}
