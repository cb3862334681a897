//! Location-scale variational families under the linear parametrization
//! `lambda = (m, C)` with `z = C u + m`.
//!
//! The mean-field family keeps `C` diagonal; the full-rank family keeps the
//! full lower-triangular Cholesky factor and exists as a dimension-scaling
//! baseline. Parameter vectors are flat in the order (m, then scale entries
//! row-major), so Euclidean distance in parameter space coincides with the
//! optimizer's iterate space.

use crate::base_dist::BaseDist;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldParams {
    m: DVector<f64>,
    c: DVector<f64>,
}

impl MeanFieldParams {
    /// Requires matching lengths and a strictly positive scale diagonal.
    pub fn new(m: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        Error::check_dim(m.len(), c.len())?;
        if m.is_empty() {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !c.iter().all(|&x| x > 0.0 && x.is_finite()) {
            return Err(Error::invalid(
                "scale diagonal must be strictly positive and finite",
            ));
        }
        Ok(Self { m, c })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn scale_diag(&self) -> &DVector<f64> {
        &self.c
    }

    /// `T_lambda(u) = C u + m`.
    pub fn reparametrize(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), u.len())?;
        Ok(self.c.component_mul(u) + &self.m)
    }

    pub fn sample_q(&self, dist: &BaseDist, rng: &mut StreamRng) -> DVector<f64> {
        let u = dist.sample_vec(rng, self.dim());
        self.c.component_mul(&u) + &self.m
    }

    /// Negative differential entropy `h(lambda) = -sum log c_i - d H(phi)`.
    pub fn entropy_h(&self, dist: &BaseDist) -> f64 {
        let log_det: f64 = self.c.iter().map(|x| x.ln()).sum();
        -log_det - self.dim() as f64 * dist.entropy()
    }

    /// Squared flat-parameter distance `||m - m'||^2 + ||C - C'||_F^2`.
    pub fn distance_sq(&self, other: &MeanFieldParams) -> Result<f64> {
        Error::check_dim(self.dim(), other.dim())?;
        Ok((&self.m - &other.m).norm_squared() + (&self.c - &other.c).norm_squared())
    }

    /// Component-wise difference, `(m - m', C - C')`.
    pub fn delta(&self, other: &MeanFieldParams) -> Result<ParamDelta> {
        Error::check_dim(self.dim(), other.dim())?;
        Ok(ParamDelta {
            dm: &self.m - &other.m,
            dc: &self.c - &other.c,
        })
    }
}

/// Difference of two mean-field parameter points.
#[derive(Debug, Clone)]
pub struct ParamDelta {
    pub dm: DVector<f64>,
    pub dc: DVector<f64>,
}

impl ParamDelta {
    pub fn norm_sq(&self) -> f64 {
        self.dm.norm_squared() + self.dc.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRankParams {
    m: DVector<f64>,
    c_lower: DMatrix<f64>,
}

impl FullRankParams {
    /// Requires a square lower-triangular factor with strictly positive
    /// diagonal; entries above the diagonal must be exactly zero.
    pub fn new(m: DVector<f64>, c_lower: DMatrix<f64>) -> Result<Self> {
        let d = m.len();
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Error::check_dim(d, c_lower.nrows())?;
        Error::check_dim(d, c_lower.ncols())?;
        for i in 0..d {
            if !(c_lower[(i, i)] > 0.0 && c_lower[(i, i)].is_finite()) {
                return Err(Error::invalid(
                    "Cholesky factor diagonal must be strictly positive",
                ));
            }
            for j in (i + 1)..d {
                if c_lower[(i, j)] != 0.0 {
                    return Err(Error::invalid("entries above the diagonal must be zero"));
                }
            }
        }
        Ok(Self { m, c_lower })
    }

    /// Diagonal factor with the given entries, zeros elsewhere.
    pub fn from_diagonal(m: DVector<f64>, diag: &DVector<f64>) -> Result<Self> {
        let d = m.len();
        Error::check_dim(d, diag.len())?;
        Self::new(m, DMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn scale_factor(&self) -> &DMatrix<f64> {
        &self.c_lower
    }

    pub fn scale_diag(&self) -> DVector<f64> {
        self.c_lower.diagonal()
    }

    pub fn reparametrize(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), u.len())?;
        Ok(&self.c_lower * u + &self.m)
    }

    pub fn sample_q(&self, dist: &BaseDist, rng: &mut StreamRng) -> DVector<f64> {
        let u = dist.sample_vec(rng, self.dim());
        &self.c_lower * u + &self.m
    }

    /// Same entropy formula, restricted to the factor's diagonal.
    pub fn entropy_h(&self, dist: &BaseDist) -> f64 {
        let log_det: f64 = (0..self.dim()).map(|i| self.c_lower[(i, i)].ln()).sum();
        -log_det - self.dim() as f64 * dist.entropy()
    }

    pub fn distance_sq(&self, other: &FullRankParams) -> Result<f64> {
        Error::check_dim(self.dim(), other.dim())?;
        Ok((&self.m - &other.m).norm_squared() + (&self.c_lower - &other.c_lower).norm_squared())
    }
}

/// A parameter point of either family. Immutable snapshot: the optimizer
/// produces a fresh value per step.
#[derive(Debug, Clone, PartialEq)]
pub enum VariationalParams {
    MeanField(MeanFieldParams),
    FullRank(FullRankParams),
}

impl VariationalParams {
    pub fn dim(&self) -> usize {
        match self {
            VariationalParams::MeanField(p) => p.dim(),
            VariationalParams::FullRank(p) => p.dim(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            VariationalParams::MeanField(_) => "mean-field",
            VariationalParams::FullRank(_) => "full-rank",
        }
    }

    pub fn location(&self) -> &DVector<f64> {
        match self {
            VariationalParams::MeanField(p) => p.location(),
            VariationalParams::FullRank(p) => p.location(),
        }
    }

    pub fn scale_diag(&self) -> DVector<f64> {
        match self {
            VariationalParams::MeanField(p) => p.scale_diag().clone(),
            VariationalParams::FullRank(p) => p.scale_diag(),
        }
    }

    pub fn reparametrize(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            VariationalParams::MeanField(p) => p.reparametrize(u),
            VariationalParams::FullRank(p) => p.reparametrize(u),
        }
    }

    pub fn sample_q(&self, dist: &BaseDist, rng: &mut StreamRng) -> DVector<f64> {
        match self {
            VariationalParams::MeanField(p) => p.sample_q(dist, rng),
            VariationalParams::FullRank(p) => p.sample_q(dist, rng),
        }
    }

    pub fn entropy_h(&self, dist: &BaseDist) -> f64 {
        match self {
            VariationalParams::MeanField(p) => p.entropy_h(dist),
            VariationalParams::FullRank(p) => p.entropy_h(dist),
        }
    }

    pub fn distance_sq(&self, other: &VariationalParams) -> Result<f64> {
        match (self, other) {
            (VariationalParams::MeanField(a), VariationalParams::MeanField(b)) => a.distance_sq(b),
            (VariationalParams::FullRank(a), VariationalParams::FullRank(b)) => a.distance_sq(b),
            _ => Err(Error::invalid("cannot compare parameters across families")),
        }
    }
}

impl From<MeanFieldParams> for VariationalParams {
    fn from(p: MeanFieldParams) -> Self {
        VariationalParams::MeanField(p)
    }
}

impl From<FullRankParams> for VariationalParams {
    fn from(p: FullRankParams) -> Self {
        VariationalParams::FullRank(p)
    }
}

/// JSON checkpoint record: `{family, d, m, c}` or `{family, d, m, c_lower}`
/// with the triangular factor packed row-major (row i contributes i+1
/// entries).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub family: String,
    pub d: usize,
    pub m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lower: Option<Vec<f64>>,
}

impl From<&VariationalParams> for ParamsRecord {
    fn from(p: &VariationalParams) -> Self {
        match p {
            VariationalParams::MeanField(mf) => ParamsRecord {
                family: "mean-field".to_string(),
                d: mf.dim(),
                m: mf.location().iter().copied().collect(),
                c: Some(mf.scale_diag().iter().copied().collect()),
                c_lower: None,
            },
            VariationalParams::FullRank(fr) => {
                let d = fr.dim();
                let mut packed = Vec::with_capacity(d * (d + 1) / 2);
                for i in 0..d {
                    for j in 0..=i {
                        packed.push(fr.scale_factor()[(i, j)]);
                    }
                }
                ParamsRecord {
                    family: "full-rank".to_string(),
                    d,
                    m: fr.location().iter().copied().collect(),
                    c: None,
                    c_lower: Some(packed),
                }
            }
        }
    }
}

impl TryFrom<&ParamsRecord> for VariationalParams {
    type Error = Error;

    fn try_from(r: &ParamsRecord) -> Result<Self> {
        Error::check_dim(r.d, r.m.len())?;
        let m = DVector::from_column_slice(&r.m);
        match r.family.as_str() {
            "mean-field" => {
                let c =
                    r.c.as_ref()
                        .ok_or_else(|| Error::invalid("mean-field record is missing c"))?;
                Ok(MeanFieldParams::new(m, DVector::from_column_slice(c))?.into())
            }
            "full-rank" => {
                let packed = r
                    .c_lower
                    .as_ref()
                    .ok_or_else(|| Error::invalid("full-rank record is missing c_lower"))?;
                Error::check_dim(r.d * (r.d + 1) / 2, packed.len())?;
                let mut c_lower = DMatrix::zeros(r.d, r.d);
                let mut it = packed.iter();
                for i in 0..r.d {
                    for j in 0..=i {
                        c_lower[(i, j)] = *it.next().expect("length checked");
                    }
                }
                Ok(FullRankParams::new(m, c_lower)?.into())
            }
            other => Err(Error::invalid(format!("unknown family {other:?}"))),
        }
    }
}
