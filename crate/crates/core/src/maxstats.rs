//! Bounds and Monte Carlo estimates for `E max_{i<=d} u_i^2`, the order
//! statistic that drives the dimension dependence of the gradient-variance
//! constants.

use crate::base_dist::{BaseDist, DistKind};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::streaming::{par_chunks, MeanVar};

/// MGF dual variable used for the Gaussian specialization, t = (1 - 1/e)/2.
pub fn gaussian_mgf_t_default() -> f64 {
    0.5 * (1.0 - (-1.0f64).exp())
}

/// Chernoff-style bound `(log M(t) + log d) / t`.
///
/// `d` is treated as a real so the bound can be evaluated at analytic
/// checkpoints such as `d = e`.
pub fn emax_bound_mgf(dist: &BaseDist, d: f64, t: f64) -> Result<f64> {
    assert!(d >= 1.0);
    let m = dist.mgf_usq(t)?;
    if !m.is_finite() {
        return Err(Error::domain(match dist.kind() {
            DistKind::Gaussian => {
                format!("MGF of u^2 diverges at t = {t}; valid interval is (0, 0.5)")
            }
            _ => format!("{dist} has no finite MGF of u^2 for any t > 0"),
        }));
    }
    Ok((m.ln() + d.ln()) / t)
}

/// Gaussian specialization `4 (1/2 + log d)`, obtained from the MGF bound
/// at t = (1 - 1/e)/2 after rounding 1/t up to 4.
pub fn emax_bound_gaussian(d: f64) -> f64 {
    assert!(d >= 1.0);
    4.0 * (0.5 + d.ln())
}

/// Moment bound `d^{1/k} (k/(k-1))^{(k-1)/k} m_k^{1/k}` applied to the
/// non-negative variables `x_i = u_i^2`.
pub fn emax_bound_moment(dist: &BaseDist, d: f64, k: usize) -> Result<f64> {
    assert!(d >= 1.0);
    if k < 2 {
        return Err(Error::domain(format!(
            "moment bound requires k >= 2 (got {k})"
        )));
    }
    let m_k = dist.moment_usq(k);
    if !m_k.is_finite() {
        let k_max = largest_finite_moment_k(dist)
            .map(|k| k.to_string())
            .unwrap_or_else(|| "unbounded".to_string());
        return Err(Error::domain(format!(
            "E u^{} diverges for {dist}; largest admissible k is {k_max}",
            2 * k
        )));
    }
    let kf = k as f64;
    let prefactor = (kf / (kf - 1.0)).powf((kf - 1.0) / kf);
    Ok(d.powf(1.0 / kf) * prefactor * m_k.powf(1.0 / kf))
}

/// Largest `k` with `E u^{2k}` finite, or `None` when all moments exist.
pub fn largest_finite_moment_k(dist: &BaseDist) -> Option<usize> {
    match dist.kind() {
        DistKind::StudentT { nu } => Some((nu / 2.0).ceil() as usize - 1),
        DistKind::Gaussian | DistKind::Laplace => None,
    }
}

const MOMENT_K_SEARCH_MAX: usize = 64;

/// Default moment order for [`emax_bound_moment`].
///
/// Student-t uses `ceil(nu/2 - 1)`, the largest admissible order. Laws with
/// all moments finite pick the `k` minimizing the bound at this `d`.
pub fn default_moment_k(dist: &BaseDist, d: f64) -> usize {
    if let Some(k_max) = largest_finite_moment_k(dist) {
        return k_max.max(2);
    }
    let mut best = (2usize, f64::INFINITY);
    for k in 2..=MOMENT_K_SEARCH_MAX {
        match emax_bound_moment(dist, d, k) {
            Ok(b) if b < best.1 => best = (k, b),
            _ => {}
        }
    }
    best.0
}

fn emax_power_empirical(
    dist: &BaseDist,
    d: usize,
    n_trials: usize,
    seed: u64,
    fourth: bool,
) -> (f64, f64) {
    assert!(n_trials >= 1);
    if d == 0 {
        // max over an empty set of non-negative terms
        return (0.0, 0.0);
    }
    let chunk = (1 << 20) / d + 1; // keep chunks around a megadraw
    let partials = par_chunks(n_trials, chunk, |stream, count| {
        let mut rng = substream(seed, stream);
        let mut acc = MeanVar::new();
        for _ in 0..count {
            let mut max_sq = 0.0f64;
            for _ in 0..d {
                let u = dist.sample(&mut rng);
                max_sq = max_sq.max(u * u);
            }
            acc.push(if fourth { max_sq * max_sq } else { max_sq });
        }
        acc
    });
    let mut total = MeanVar::new();
    for p in &partials {
        total.merge(p);
    }
    (total.mean(), total.stderr())
}

/// Monte Carlo estimate of `E max_{i<=d} u_i^2` with its standard error.
/// `d = 0` is the empty maximum, exactly 0.
pub fn emax_empirical(dist: &BaseDist, d: usize, n_trials: usize, seed: u64) -> (f64, f64) {
    emax_power_empirical(dist, d, n_trials, seed, false)
}

/// Monte Carlo estimate of `E max_{i<=d} u_i^4`, used by the lower-bound
/// experiment.
pub fn emax4_empirical(dist: &BaseDist, d: usize, n_trials: usize, seed: u64) -> (f64, f64) {
    emax_power_empirical(dist, d, n_trials, seed, true)
}

/// How to supply `E max u^2` when evaluating the variance constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmaxMode {
    /// Monte Carlo estimate with the given trial budget.
    Empirical { n_trials: usize, seed: u64 },
    /// MGF bound; `t = None` picks the Gaussian default dual variable.
    Mgf { t: Option<f64> },
    /// Moment bound; `k = None` picks [`default_moment_k`].
    Moment { k: Option<usize> },
    /// The closed-form Gaussian constant `4 (1/2 + log d)`.
    GaussianSpecial,
}

/// Evaluates `E max_{i<=d} u_i^2` (or an upper bound on it) per `mode`.
/// `d = 0` is the empty maximum, exactly 0 in every mode.
pub fn emax_by_mode(dist: &BaseDist, d: usize, mode: EmaxMode) -> Result<f64> {
    if d == 0 {
        return Ok(0.0);
    }
    let df = d as f64;
    match mode {
        EmaxMode::Empirical { n_trials, seed } => Ok(emax_empirical(dist, d, n_trials, seed).0),
        EmaxMode::Mgf { t } => {
            let t = t.unwrap_or_else(gaussian_mgf_t_default);
            emax_bound_mgf(dist, df, t)
        }
        EmaxMode::Moment { k } => {
            let k = k.unwrap_or_else(|| default_moment_k(dist, df));
            emax_bound_moment(dist, df, k)
        }
        EmaxMode::GaussianSpecial => {
            if dist.kind() != DistKind::Gaussian {
                return Err(Error::domain(format!(
                    "the 4(1/2 + log d) constant is specific to the Gaussian law, not {dist}"
                )));
            }
            Ok(emax_bound_gaussian(df))
        }
    }
}

/// One row of the max-statistics table: empirical estimate next to every
/// applicable theoretical bound.
#[derive(Debug, Clone)]
pub struct EmaxReport {
    pub d: usize,
    pub empirical: f64,
    pub stderr: f64,
    pub bound_mgf: Option<f64>,
    pub bound_moment: Option<f64>,
    pub bound_gaussian_special: Option<f64>,
}

pub fn emax_report(
    dist: &BaseDist,
    d: usize,
    n_trials: usize,
    seed: u64,
    mgf_t: Option<f64>,
    moment_k: Option<usize>,
) -> EmaxReport {
    let (empirical, stderr) = emax_empirical(dist, d, n_trials, seed);
    let df = d as f64;
    let bound_mgf = emax_bound_mgf(dist, df, mgf_t.unwrap_or_else(gaussian_mgf_t_default)).ok();
    let bound_moment = emax_bound_moment(
        dist,
        df,
        moment_k.unwrap_or_else(|| default_moment_k(dist, df)),
    )
    .ok();
    let bound_gaussian_special = match dist.kind() {
        DistKind::Gaussian => Some(emax_bound_gaussian(df)),
        _ => None,
    };
    EmaxReport {
        d,
        empirical,
        stderr,
        bound_mgf,
        bound_moment,
        bound_gaussian_special,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mgf_bound_fixtures() {
        let g = BaseDist::gaussian();
        // d = 1: 4 (0.5 log 2) = 2 log 2
        let b = emax_bound_mgf(&g, 1.0, 0.25).unwrap();
        assert!((b - 4.0 * 0.5 * std::f64::consts::LN_2).abs() < 1e-12);
        // d = e adds exactly 1/t = 4
        let b = emax_bound_mgf(&g, std::f64::consts::E, 0.25).unwrap();
        assert!((b - (4.0 * 0.5 * std::f64::consts::LN_2 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn mgf_bound_errors() {
        let g = BaseDist::gaussian();
        let err = emax_bound_mgf(&g, 10.0, 0.6).unwrap_err();
        assert!(err.to_string().contains("(0, 0.5)"));
        let t8 = BaseDist::student_t(8.0).unwrap();
        assert!(emax_bound_mgf(&t8, 10.0, 0.25).is_err());
        assert!(emax_bound_mgf(&BaseDist::laplace(), 10.0, 0.25).is_err());
    }

    #[test]
    fn gaussian_special_fixtures() {
        assert!((emax_bound_gaussian(1.0) - 2.0).abs() < 1e-14);
        let e2 = std::f64::consts::E * std::f64::consts::E;
        assert!((emax_bound_gaussian(e2) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn moment_bound_fixtures() {
        let g = BaseDist::gaussian();
        let b = emax_bound_moment(&g, 1.0, 2).unwrap();
        assert!((b - (2.0f64).sqrt() * (3.0f64).sqrt()).abs() < 1e-12);
        let b4 = emax_bound_moment(&g, 4.0, 2).unwrap();
        assert!((b4 - 2.0 * (6.0f64).sqrt()).abs() < 1e-12);
        // k = 2 prefactor is exactly sqrt(2)
        let pref = b / (3.0f64).sqrt();
        assert!((pref - (2.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn moment_bound_error_names_largest_k() {
        let t8 = BaseDist::student_t(8.0).unwrap();
        let err = emax_bound_moment(&t8, 16.0, 4).unwrap_err();
        assert!(err.to_string().contains('3'), "{err}");
        assert!(emax_bound_moment(&t8, 16.0, 3).is_ok());
    }

    #[test]
    fn default_k_student_t_matches_ceiling_rule() {
        let t8 = BaseDist::student_t(8.0).unwrap();
        assert_eq!(default_moment_k(&t8, 100.0), 3); // ceil(8/2 - 1)
        let t9 = BaseDist::student_t(9.0).unwrap();
        assert_eq!(default_moment_k(&t9, 100.0), 4); // ceil(9/2 - 1) = ceil(3.5)
    }

    #[test]
    fn default_k_minimizes_bound_for_light_tails() {
        let g = BaseDist::gaussian();
        let d = 256.0;
        let k = default_moment_k(&g, d);
        let chosen = emax_bound_moment(&g, d, k).unwrap();
        for other in 2..=16 {
            assert!(chosen <= emax_bound_moment(&g, d, other).unwrap() + 1e-9);
        }
    }

    #[test]
    fn empirical_d1_is_unit_mean() {
        let (est, se) = emax_empirical(&BaseDist::gaussian(), 1, 1_000_000, 5);
        assert!((est - 1.0).abs() <= 4.0 * se);
    }

    #[test]
    fn empirical_below_gaussian_bound_at_d100() {
        let (est, se) = emax_empirical(&BaseDist::gaussian(), 100, 100_000, 6);
        assert!(est + 3.0 * se <= emax_bound_gaussian(100.0));
    }

    #[test]
    fn empirical_below_moment_bound_student_t() {
        let t8 = BaseDist::student_t(8.0).unwrap();
        let (est, se) = emax_empirical(&t8, 100, 100_000, 7);
        let bound = emax_bound_moment(&t8, 100.0, 3).unwrap();
        assert!(est - 3.0 * se <= bound, "est {est} bound {bound}");
    }

    #[test]
    fn dominance_grid() {
        // every finite theoretical bound >= empirical - 3 stderr
        let dists = [
            BaseDist::gaussian(),
            BaseDist::student_t(8.0).unwrap(),
            BaseDist::laplace(),
        ];
        for dist in &dists {
            for d in [1usize, 4, 32, 256] {
                let rep = emax_report(dist, d, 40_000, 17 + d as u64, None, None);
                let floor = rep.empirical - 3.0 * rep.stderr;
                for bound in [rep.bound_mgf, rep.bound_moment, rep.bound_gaussian_special]
                    .into_iter()
                    .flatten()
                {
                    assert!(
                        bound >= floor,
                        "{dist} d={d}: bound {bound} < floor {floor}"
                    );
                }
            }
        }
    }

    #[test]
    fn empirical_monotone_in_d() {
        let g = BaseDist::gaussian();
        let mut prev = (0.0, 0.0);
        for d in [1usize, 8, 64, 512] {
            let (est, se) = emax_empirical(&g, d, 60_000, 23);
            assert!(est + 3.0 * se >= prev.0 - 3.0 * prev.1, "d={d}");
            prev = (est, se);
        }
    }

    #[test]
    fn gaussian_log_growth_coefficient() {
        // empirical / log d stays below the 16 appearing in the specialized
        // variance constant
        let g = BaseDist::gaussian();
        for d in [8usize, 64, 512, 4096] {
            let (est, _) = emax_empirical(&g, d, 30_000, 29);
            assert!(
                est / (d as f64).ln() <= 16.0,
                "d={d} ratio {}",
                est / (d as f64).ln()
            );
        }
    }

    #[test]
    fn emax_by_mode_dispatch() {
        let g = BaseDist::gaussian();
        let t8 = BaseDist::student_t(8.0).unwrap();
        assert!(emax_by_mode(&g, 10, EmaxMode::GaussianSpecial).is_ok());
        assert!(emax_by_mode(&t8, 10, EmaxMode::GaussianSpecial).is_err());
        assert!(emax_by_mode(&t8, 10, EmaxMode::Mgf { t: None }).is_err());
        let m = emax_by_mode(&t8, 10, EmaxMode::Moment { k: None }).unwrap();
        assert!(m.is_finite() && m > 1.0);
        // default Gaussian MGF bound is tighter than the rounded special form
        let mgf = emax_by_mode(&g, 100, EmaxMode::Mgf { t: None }).unwrap();
        assert!(mgf <= emax_bound_gaussian(100.0));
    }

    #[test]
    fn fourth_power_dominates_square() {
        let g = BaseDist::gaussian();
        let (m2, _) = emax_empirical(&g, 64, 20_000, 31);
        let (m4, _) = emax4_empirical(&g, 64, 20_000, 31);
        assert!(m4 > m2 * m2 / 2.0 && m4 > m2);
    }
}
