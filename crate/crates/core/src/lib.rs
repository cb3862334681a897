//! Black-box variational inference with mean-field location-scale families,
//! optimized by stochastic proximal gradient descent.
//!
//! The crate is organized around the pipeline of a desk-scale benchmark:
//!
//! * [`base_dist`] — standardized base noise laws (moments, MGF, entropy, sampling),
//! * [`maxstats`] — bounds and Monte Carlo estimates for `E max u_i^2`,
//! * [`family`] — mean-field and full-rank location-scale parametrizations,
//! * [`targets`] — synthetic strongly convex targets with known curvature constants,
//! * [`grad_estimator`] — the reparametrization gradient estimator,
//! * [`spgd`] — the proximal optimizer with its two-stage step-size schedule,
//! * [`variance_lab`] — gradient-variance measurements against closed-form bounds.
//!
//! All randomness flows through seeded ChaCha streams ([`rng`]), so every
//! estimate is reproducible from `(seed, stream)` regardless of thread count.
//!
//! ```
//! use mfvi_core::base_dist::BaseDist;
//! use mfvi_core::family::MeanFieldParams;
//! use mfvi_core::spgd::{run, RunOptions, ScheduleConfig};
//! use mfvi_core::targets::{HessianSpec, TargetSpec};
//! use nalgebra::DVector;
//!
//! // fit a 2-d standard Gaussian: the optimum is (m, c) = (0, 1)
//! let target = TargetSpec::quadratic(HessianSpec::identity(2), DVector::zeros(2)).unwrap();
//! let optimum = target.mf_optimum().unwrap().into();
//! let init = MeanFieldParams::new(
//!     DVector::from_element(2, 1.0),
//!     DVector::from_element(2, 1.0),
//! )
//! .unwrap()
//! .into();
//!
//! // L^2 = 2 (1 + r4) |H|^2 = 8 for the Gaussian base; sigma^2 = L^2 sigma*^2
//! let sched = ScheduleConfig::suggested(8f64.sqrt(), 1.0, 8.0 * 2.0, 2.0, 2000).unwrap();
//! let opts = RunOptions { t_horizon: 2000, seed: 1, elbo_every: 0, ..Default::default() };
//! let trace = run(&target, &init, &BaseDist::gaussian(), &sched, &opts, Some(&optimum)).unwrap();
//! assert!(trace.final_dist_sq().unwrap() < 0.2);
//! ```

// `!(x > 0.0)` is used instead of `x <= 0.0` so NaN inputs are rejected
// along with non-positive ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base_dist;
pub mod error;
pub mod family;
pub mod grad_estimator;
pub mod maxstats;
pub mod quadrature;
pub mod rng;
pub mod spgd;
pub mod streaming;
pub mod targets;
pub mod variance_lab;

pub use error::{Error, Result};
