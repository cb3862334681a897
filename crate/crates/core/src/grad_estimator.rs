//! The reparametrization gradient estimator: push a noise draw through
//! `T_lambda`, evaluate the target gradient there, and chain through the
//! Jacobian of `T_lambda`.
//!
//! For the location block the Jacobian is the identity; for the mean-field
//! scale block it is `diag(u)`, and for a triangular factor it is the
//! lower-triangular part of the outer product `g u^T`. The estimator covers
//! only the smooth part `f`; the entropy term is handled by the proximal
//! operator.

use crate::base_dist::BaseDist;
use crate::error::{Error, Result};
use crate::family::VariationalParams;
use crate::rng::StreamRng;
use crate::targets::TargetSpec;
use nalgebra::{DMatrix, DVector};

/// Scale-block gradient; diagonal vector for mean-field, lower-triangular
/// matrix for full-rank.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleGrad {
    Diag(DVector<f64>),
    Lower(DMatrix<f64>),
}

impl ScaleGrad {
    pub fn norm_squared(&self) -> f64 {
        match self {
            ScaleGrad::Diag(v) => v.norm_squared(),
            ScaleGrad::Lower(m) => m.norm_squared(),
        }
    }
}

/// One draw of the estimator, with the noise retained so a second parameter
/// point can be evaluated on the same randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub g_m: DVector<f64>,
    pub g_c: ScaleGrad,
    pub u_used: DVector<f64>,
}

impl GradSample {
    pub fn norm_squared(&self) -> f64 {
        self.g_m.norm_squared() + self.g_c.norm_squared()
    }
}

/// Evaluates the estimator at `params` on the noise draw `u`.
pub fn reparam_grad(
    target: &TargetSpec,
    params: &VariationalParams,
    u: &DVector<f64>,
) -> Result<GradSample> {
    Error::check_dim(target.dim(), params.dim())?;
    let z = params.reparametrize(u)?;
    let g = target.grad(&z)?;
    let g_c = match params {
        VariationalParams::MeanField(_) => ScaleGrad::Diag(u.component_mul(&g)),
        VariationalParams::FullRank(_) => {
            let d = u.len();
            let mut m = DMatrix::zeros(d, d);
            for j in 0..d {
                for i in j..d {
                    m[(i, j)] = g[i] * u[j];
                }
            }
            ScaleGrad::Lower(m)
        }
    };
    Ok(GradSample {
        g_m: g,
        g_c,
        u_used: u.clone(),
    })
}

/// Average of `batch` independent draws; `u_used` keeps the last one.
pub fn reparam_grad_batch(
    target: &TargetSpec,
    params: &VariationalParams,
    dist: &BaseDist,
    batch: usize,
    rng: &mut StreamRng,
) -> Result<GradSample> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let u = dist.sample_vec(rng, params.dim());
    let mut acc = reparam_grad(target, params, &u)?;
    for _ in 1..batch {
        let u = dist.sample_vec(rng, params.dim());
        let sample = reparam_grad(target, params, &u)?;
        acc.g_m += &sample.g_m;
        match (&mut acc.g_c, &sample.g_c) {
            (ScaleGrad::Diag(a), ScaleGrad::Diag(b)) => *a += b,
            (ScaleGrad::Lower(a), ScaleGrad::Lower(b)) => *a += b,
            _ => unreachable!("family fixed within a batch"),
        }
        acc.u_used = sample.u_used;
    }
    let inv = 1.0 / batch as f64;
    acc.g_m *= inv;
    match &mut acc.g_c {
        ScaleGrad::Diag(a) => *a *= inv,
        ScaleGrad::Lower(a) => *a *= inv,
    }
    Ok(acc)
}

/// Closed-form `grad f` on a quadratic target for a mean-field point:
/// `(H (m - zbar), diag(H) .* c)`. Test oracle for unbiasedness checks.
pub fn quadratic_grad_f_mean_field(
    target: &TargetSpec,
    params: &crate::family::MeanFieldParams,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if target.kind() != crate::targets::TargetKind::Quadratic {
        return Err(Error::unsupported(
            "closed-form grad f needs a quadratic target",
        ));
    }
    Error::check_dim(target.dim(), params.dim())?;
    let gm = target
        .hessian()
        .apply(&(params.location() - target.z_bar()));
    let gc = target
        .hessian()
        .diagonal()
        .component_mul(params.scale_diag());
    Ok((gm, gc))
}
