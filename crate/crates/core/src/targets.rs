//! Synthetic strongly convex, smooth targets with analytically certified
//! curvature constants `(mu, L, H, delta)` and known stationary point.
//!
//! Three kinds:
//! * `Quadratic` — `0.5 (z - zbar)^T H (z - zbar)`, so `delta = 0`;
//! * `PerturbedQuadratic` — the quadratic plus `-delta sum cos(z_i - zbar_i)
//!   + delta d`, whose Hessian deviation from `H` is exactly
//!   `delta diag(cos)` with operator norm at most `delta`;
//! * `WorstCaseField` — the Householder-like matrix field from the variance
//!   lower bound. It is a matrix field, not a potential, so `value` and
//!   `grad` refuse to evaluate it.

use crate::error::{Error, Result};
use crate::family::{FullRankParams, MeanFieldParams};
use nalgebra::{DMatrix, DVector};

/// Hessian storage: diagonal by default (exact mean-field optima), dense as
/// an option for full-rank baselines and test oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum HessianSpec {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl HessianSpec {
    pub fn identity(d: usize) -> Self {
        HessianSpec::Diagonal(DVector::from_element(d, 1.0))
    }

    /// Diagonal with entries geometrically spaced from `lo` to `hi`.
    /// At `d = 1` the single entry is `lo`.
    pub fn logspace(d: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid(format!(
                "logspace spectrum needs 0 < lo <= hi (got {lo}, {hi})"
            )));
        }
        let entries = if d == 1 {
            vec![lo]
        } else {
            let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
            (0..d)
                .map(|i| (ln_lo + (ln_hi - ln_lo) * i as f64 / (d - 1) as f64).exp())
                .collect()
        };
        Ok(HessianSpec::Diagonal(DVector::from_vec(entries)))
    }

    pub fn dim(&self) -> usize {
        match self {
            HessianSpec::Diagonal(h) => h.len(),
            HessianSpec::Dense(h) => h.nrows(),
        }
    }

    pub fn sigma_min(&self) -> f64 {
        match self {
            HessianSpec::Diagonal(h) => h.min(),
            HessianSpec::Dense(h) => h.clone().symmetric_eigen().eigenvalues.min(),
        }
    }

    pub fn sigma_max(&self) -> f64 {
        match self {
            HessianSpec::Diagonal(h) => h.max(),
            HessianSpec::Dense(h) => h.clone().symmetric_eigen().eigenvalues.max(),
        }
    }

    /// Operator norm; the spectra here are positive, so this is sigma_max.
    pub fn op_norm(&self) -> f64 {
        self.sigma_max()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            HessianSpec::Diagonal(h) => h.component_mul(v),
            HessianSpec::Dense(h) => h * v,
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            HessianSpec::Diagonal(h) => h.clone(),
            HessianSpec::Dense(h) => h.diagonal(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            HessianSpec::Diagonal(h) => DMatrix::from_diagonal(h),
            HessianSpec::Dense(h) => h.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Quadratic,
    PerturbedQuadratic,
    WorstCaseField,
}

#[derive(Debug, Clone)]
pub struct TargetSpec {
    kind: TargetKind,
    hessian: HessianSpec,
    delta: f64,
    z_bar: DVector<f64>,
    mu: f64,
    l_const: f64,
}

impl TargetSpec {
    pub fn quadratic(hessian: HessianSpec, z_bar: DVector<f64>) -> Result<Self> {
        Error::check_dim(hessian.dim(), z_bar.len())?;
        let mu = hessian.sigma_min();
        if !(mu > 0.0) {
            return Err(Error::invalid("Hessian must be positive definite"));
        }
        let l_const = hessian.sigma_max();
        Ok(TargetSpec {
            kind: TargetKind::Quadratic,
            hessian,
            delta: 0.0,
            z_bar,
            mu,
            l_const,
        })
    }

    /// Requires `sigma_min(H) - delta > 0` so the target stays strongly
    /// convex; certifies `mu = sigma_min(H) - delta`, `L = sigma_max(H) + delta`.
    pub fn perturbed_quadratic(
        hessian: HessianSpec,
        z_bar: DVector<f64>,
        delta: f64,
    ) -> Result<Self> {
        Error::check_dim(hessian.dim(), z_bar.len())?;
        if !(delta > 0.0) {
            return Err(Error::invalid(
                "perturbation delta must be positive; use quadratic for delta = 0",
            ));
        }
        let s_min = hessian.sigma_min();
        if !(s_min - delta > 0.0) {
            return Err(Error::invalid(format!(
                "sigma_min(H) - delta must be positive (got {s_min} - {delta})"
            )));
        }
        let l_const = hessian.sigma_max() + delta;
        Ok(TargetSpec {
            kind: TargetKind::PerturbedQuadratic,
            hessian,
            delta,
            z_bar,
            mu: s_min - delta,
            l_const,
        })
    }

    /// The lower-bound matrix field with `H = alpha I`, `delta = beta`.
    pub fn worst_case_field(d: usize, mu: f64, l: f64) -> Result<Self> {
        let cfg = WorstFieldConfig::new(mu, l)?;
        Ok(TargetSpec {
            kind: TargetKind::WorstCaseField,
            hessian: HessianSpec::Diagonal(DVector::from_element(d, cfg.alpha)),
            delta: cfg.beta,
            z_bar: DVector::zeros(d),
            mu,
            l_const: l,
        })
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.z_bar.len()
    }

    pub fn z_bar(&self) -> &DVector<f64> {
        &self.z_bar
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn l_const(&self) -> f64 {
        self.l_const
    }

    pub fn kappa(&self) -> f64 {
        self.l_const / self.mu
    }

    pub fn h_norm(&self) -> f64 {
        self.hessian.op_norm()
    }

    pub fn hessian(&self) -> &HessianSpec {
        &self.hessian
    }

    /// The pair `(H, delta)` certifying the almost-constant-Hessian model.
    pub fn hessian_deviation(&self) -> (&HessianSpec, f64) {
        (&self.hessian, self.delta)
    }

    pub fn value(&self, z: &DVector<f64>) -> Result<f64> {
        Error::check_dim(self.dim(), z.len())?;
        let w = z - &self.z_bar;
        match self.kind {
            TargetKind::Quadratic => Ok(0.5 * w.dot(&self.hessian.apply(&w))),
            TargetKind::PerturbedQuadratic => {
                let cos_sum: f64 = w.iter().map(|x| x.cos()).sum();
                Ok(0.5 * w.dot(&self.hessian.apply(&w)) - self.delta * cos_sum
                    + self.delta * self.dim() as f64)
            }
            TargetKind::WorstCaseField => Err(Error::unsupported(
                "the worst-case field has no potential; only the matrix field is defined",
            )),
        }
    }

    pub fn grad(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), z.len())?;
        let w = z - &self.z_bar;
        match self.kind {
            TargetKind::Quadratic => Ok(self.hessian.apply(&w)),
            TargetKind::PerturbedQuadratic => {
                let mut g = self.hessian.apply(&w);
                for i in 0..g.len() {
                    g[i] += self.delta * w[i].sin();
                }
                Ok(g)
            }
            TargetKind::WorstCaseField => Err(Error::unsupported(
                "the worst-case field has no gradient; use WorstFieldConfig::apply",
            )),
        }
    }

    /// Materialized `hess(z)` for the differentiable kinds.
    pub fn hessian_at(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim(), z.len())?;
        match self.kind {
            TargetKind::Quadratic => Ok(self.hessian.to_dense()),
            TargetKind::PerturbedQuadratic => {
                let mut h = self.hessian.to_dense();
                for i in 0..self.dim() {
                    h[(i, i)] += self.delta * (z[i] - self.z_bar[i]).cos();
                }
                Ok(h)
            }
            TargetKind::WorstCaseField => Err(Error::unsupported(
                "materialize the worst-case field with WorstFieldConfig::materialize",
            )),
        }
    }

    /// Closed-form mean-field optimum of `F = f + h` on a quadratic target:
    /// `m* = zbar`, `c*_i = H_ii^{-1/2}`.
    pub fn mf_optimum(&self) -> Result<MeanFieldParams> {
        if self.kind != TargetKind::Quadratic {
            return Err(Error::unsupported(
                "closed-form optimum exists only for quadratic targets",
            ));
        }
        let c = self.hessian.diagonal().map(|h| 1.0 / h.sqrt());
        MeanFieldParams::new(self.z_bar.clone(), c)
    }

    /// Closed-form full-rank optimum on a quadratic target: the Cholesky
    /// factor of `H^{-1}`.
    pub fn fr_optimum(&self) -> Result<FullRankParams> {
        if self.kind != TargetKind::Quadratic {
            return Err(Error::unsupported(
                "closed-form optimum exists only for quadratic targets",
            ));
        }
        match &self.hessian {
            HessianSpec::Diagonal(h) => {
                let diag = h.map(|x| 1.0 / x.sqrt());
                FullRankParams::from_diagonal(self.z_bar.clone(), &diag)
            }
            HessianSpec::Dense(h) => {
                let inv = h
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::invalid("Hessian is numerically singular"))?;
                let chol = inv
                    .cholesky()
                    .ok_or_else(|| Error::invalid("H^{-1} is not positive definite"))?;
                FullRankParams::new(self.z_bar.clone(), chol.l())
            }
        }
    }
}

/// Generic curvature model for any twice-differentiable mu-strongly convex,
/// L-smooth target: `H = (L + mu)/2 I`, `delta = (L - mu)/2`.
pub fn fallback_h_delta(d: usize, mu: f64, l: f64) -> Result<(HessianSpec, f64)> {
    if !(mu > 0.0 && l >= mu) {
        return Err(Error::invalid(format!("need 0 < mu <= L (got {mu}, {l})")));
    }
    Ok((
        HessianSpec::Diagonal(DVector::from_element(d, 0.5 * (l + mu))),
        0.5 * (l - mu),
    ))
}

/// The matrix field `H(z) = alpha I + (beta/2)(e_i* zhat^T + zhat e_i*^T)`
/// where `zhat = z/||z||` and `i* = argmax |z_i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstFieldConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl WorstFieldConfig {
    pub fn new(mu: f64, l: f64) -> Result<Self> {
        if !(mu > 0.0 && l >= mu) {
            return Err(Error::invalid(format!("need 0 < mu <= L (got {mu}, {l})")));
        }
        Ok(WorstFieldConfig {
            alpha: 0.5 * (l + mu),
            beta: 0.5 * (l - mu),
        })
    }

    /// Index of the largest-magnitude coordinate; ties break to the
    /// smallest index (probability zero under a continuous base law).
    pub fn argmax_coordinate(z: &DVector<f64>) -> Result<usize> {
        if z.iter().all(|&x| x == 0.0) {
            return Err(Error::domain("the field is undefined at z = 0"));
        }
        let mut best = 0;
        for i in 1..z.len() {
            if z[i].abs() > z[best].abs() {
                best = i;
            }
        }
        Ok(best)
    }

    /// `H_worst(z) v` without materializing the matrix.
    pub fn apply(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(z.len(), v.len())?;
        let i_star = Self::argmax_coordinate(z)?;
        let z_norm = z.norm();
        let zhat = z / z_norm;
        let mut out = v * self.alpha;
        let zhat_dot_v = zhat.dot(v);
        out[i_star] += 0.5 * self.beta * zhat_dot_v;
        out += zhat * (0.5 * self.beta * v[i_star]);
        Ok(out)
    }

    pub fn materialize(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = z.len();
        let i_star = Self::argmax_coordinate(z)?;
        let zhat = z / z.norm();
        let mut h = DMatrix::from_diagonal(&DVector::from_element(d, self.alpha));
        for j in 0..d {
            h[(i_star, j)] += 0.5 * self.beta * zhat[j];
            h[(j, i_star)] += 0.5 * self.beta * zhat[j];
        }
        Ok(h)
    }
}
