//! Standardized, symmetric base distributions for location-scale families.
//!
//! Every law here is rescaled so that a draw `u` satisfies `E u = 0`,
//! `E u^2 = 1`, `E u^3 = 0`, with finite kurtosis `r4 = E u^4`. Three
//! families are provided: Gaussian, Student-t with more than four degrees
//! of freedom, and Laplace.

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::rng::StreamRng;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT as StudentTSampler};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};
use std::fmt;
use std::str::FromStr;

/// Smallest admissible Student-t degrees of freedom (exclusive); below this
/// the kurtosis is infinite.
pub const STUDENT_T_MIN_DOF: f64 = 4.0;

const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1; // ln(sqrt(pi)) = ln_gamma(1/2)

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistKind {
    Gaussian,
    StudentT { nu: f64 },
    Laplace,
}

/// A standardized base law together with its derived constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseDist {
    kind: DistKind,
    r4: f64,
    entropy: f64,
    variance_scale: f64,
}

impl BaseDist {
    pub fn gaussian() -> Self {
        BaseDist {
            kind: DistKind::Gaussian,
            r4: 3.0,
            entropy: 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln(),
            variance_scale: 1.0,
        }
    }

    /// Student-t rescaled to unit variance. Requires `nu > 4` so the
    /// kurtosis stays finite.
    pub fn student_t(nu: f64) -> Result<Self> {
        if !(nu > STUDENT_T_MIN_DOF) || !nu.is_finite() {
            return Err(Error::invalid(format!(
                "student-t degrees of freedom must exceed {STUDENT_T_MIN_DOF} (got {nu})"
            )));
        }
        // Var(t_nu) = nu/(nu-2), so the standardizing factor is sqrt((nu-2)/nu).
        let scale = ((nu - 2.0) / nu).sqrt();
        let raw_entropy = 0.5 * (nu + 1.0) * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu))
            + 0.5 * nu.ln()
            + ln_beta(0.5 * nu, 0.5);
        Ok(BaseDist {
            kind: DistKind::StudentT { nu },
            r4: 3.0 * (nu - 2.0) / (nu - 4.0),
            entropy: raw_entropy + scale.ln(),
            variance_scale: scale,
        })
    }

    /// Laplace with scale b = 1/sqrt(2), i.e. unit variance.
    pub fn laplace() -> Self {
        let b = std::f64::consts::FRAC_1_SQRT_2;
        BaseDist {
            kind: DistKind::Laplace,
            r4: 6.0,
            entropy: 1.0 + (2.0 * b).ln(),
            variance_scale: b,
        }
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    /// Exact kurtosis `r4 = E u^4`.
    pub fn kurtosis(&self) -> f64 {
        self.r4
    }

    /// Differential entropy of the unit-variance law, in nats.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// Factor applied to the raw law to force `E u^2 = 1`.
    pub fn variance_scale(&self) -> f64 {
        self.variance_scale
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self.kind {
            DistKind::Gaussian => StandardNormal.sample(rng),
            DistKind::StudentT { nu } => {
                let t = StudentTSampler::new(nu).expect("validated at construction");
                self.variance_scale * t.sample(rng)
            }
            DistKind::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                self.variance_scale * sign * e
            }
        }
    }

    /// Fills `out` with i.i.d. draws.
    pub fn fill(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self.kind {
            DistKind::Gaussian => {
                for x in out.iter_mut() {
                    *x = StandardNormal.sample(rng);
                }
            }
            DistKind::StudentT { nu } => {
                let t = StudentTSampler::new(nu).expect("validated at construction");
                for x in out.iter_mut() {
                    *x = self.variance_scale * t.sample(rng);
                }
            }
            DistKind::Laplace => {
                for x in out.iter_mut() {
                    let e: f64 = Exp1.sample(rng);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *x = self.variance_scale * sign * e;
                }
            }
        }
    }

    pub fn sample_vec(&self, rng: &mut StreamRng, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        self.fill(rng, v.as_mut_slice());
        v
    }

    /// MGF of `u^2` at `t > 0`; `+inf` outside the convergence region.
    pub fn mgf_usq(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::domain(format!(
                "MGF argument must be positive (got {t})"
            )));
        }
        match self.kind {
            DistKind::Gaussian => {
                // u^2 is chi-squared(1): M(t) = (1 - 2t)^{-1/2} on t in (0, 1/2).
                if t < 0.5 {
                    Ok((1.0 - 2.0 * t).powf(-0.5))
                } else {
                    Ok(f64::INFINITY)
                }
            }
            // Polynomial (Student-t) and sub-exponential (Laplace) tails:
            // E exp(t u^2) diverges for every t > 0.
            DistKind::StudentT { .. } | DistKind::Laplace => Ok(f64::INFINITY),
        }
    }

    /// `E u^{2k}` for `k >= 1`; `+inf` when the moment diverges.
    pub fn moment_usq(&self, k: usize) -> f64 {
        assert!(k >= 1, "moment order must be at least 1");
        let kf = k as f64;
        match self.kind {
            DistKind::Gaussian => {
                // (2k-1)!! = 2^k Gamma(k + 1/2) / Gamma(1/2)
                (kf * std::f64::consts::LN_2 + ln_gamma(kf + 0.5) - LN_SQRT_PI).exp()
            }
            DistKind::StudentT { nu } => {
                if 2.0 * kf >= nu {
                    f64::INFINITY
                } else {
                    // u = sqrt((nu-2)/nu) v with v^2 ~ F(1, nu):
                    // E u^{2k} = (nu-2)^k Gamma(k+1/2) Gamma(nu/2-k) / (Gamma(1/2) Gamma(nu/2))
                    (kf * (nu - 2.0).ln() + ln_gamma(kf + 0.5) + ln_gamma(0.5 * nu - kf)
                        - LN_SQRT_PI
                        - ln_gamma(0.5 * nu))
                    .exp()
                }
            }
            DistKind::Laplace => {
                // (2k)! b^{2k} with b^2 = 1/2
                (ln_gamma(2.0 * kf + 1.0) - kf * std::f64::consts::LN_2).exp()
            }
        }
    }

    /// Survival function of the squared draw, `P[u^2 > s]`.
    pub fn survival_usq(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        match self.kind {
            DistKind::Gaussian => erfc((0.5 * s).sqrt()),
            DistKind::StudentT { nu } => {
                // P[|v| > x] = I_{nu/(nu+x^2)}(nu/2, 1/2) for v ~ t_nu
                let x = s.sqrt() / self.variance_scale;
                beta_reg(0.5 * nu, 0.5, nu / (nu + x * x))
            }
            DistKind::Laplace => (-s.sqrt() / self.variance_scale).exp(),
        }
    }

    /// `c(t, phi) = int_0^t P[u^2 > s] ds`, the truncated mean of `u^2`.
    pub fn survival_integral(&self, t: f64, rel_tol: f64) -> f64 {
        assert!(t >= 0.0);
        adaptive_simpson(&|s| self.survival_usq(s), 0.0, t, rel_tol)
    }

    /// Short label used in config files and CSV metadata.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BaseDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DistKind::Gaussian => write!(f, "gaussian"),
            DistKind::StudentT { nu } => write!(f, "student-t:{nu}"),
            DistKind::Laplace => write!(f, "laplace"),
        }
    }
}

impl FromStr for BaseDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "gaussian" => Ok(BaseDist::gaussian()),
            "laplace" => Ok(BaseDist::laplace()),
            _ => {
                if let Some(nu_str) = s.strip_prefix("student-t:") {
                    let nu: f64 = nu_str.parse().map_err(|_| {
                        Error::invalid(format!(
                            "cannot parse student-t degrees of freedom {nu_str:?}"
                        ))
                    })?;
                    BaseDist::student_t(nu)
                } else {
                    Err(Error::invalid(format!(
                        "unknown distribution {s:?} (expected gaussian, student-t:<nu>, laplace)"
                    )))
                }
            }
        }
    }
}
