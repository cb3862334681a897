//! Streaming mean/variance accumulators with exact merge.
//!
//! Parallel Monte Carlo loops compute one accumulator per fixed-size chunk
//! and merge them in chunk order, which keeps the result byte-identical for
//! any worker count.

use crate::rng::{substream, StreamRng};
use rayon::prelude::*;

/// Welford accumulator for a scalar statistic.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanVar {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise merge; order of merges must be fixed for
    /// bitwise reproducibility.
    pub fn merge(&mut self, other: &MeanVar) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n_total = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n_total as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n_total as f64;
        self.n = n_total;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

pub const DEFAULT_CHUNK: usize = 8192;

/// Runs `n` Monte Carlo trials of `f`, chunked over substreams of `seed`.
///
/// Chunk `i` draws from stream `i`; partial accumulators are merged in
/// chunk order, so the outcome does not depend on the rayon thread count.
pub fn mc_scalar<F>(n: usize, seed: u64, f: F) -> MeanVar
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    mc_scalar_chunked(n, DEFAULT_CHUNK, seed, f)
}

pub fn mc_scalar_chunked<F>(n: usize, chunk: usize, seed: u64, f: F) -> MeanVar
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    assert!(n > 0 && chunk > 0);
    let n_chunks = n.div_ceil(chunk);
    let partials: Vec<MeanVar> = (0..n_chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let count = chunk.min(n - i * chunk);
            let mut acc = MeanVar::new();
            for _ in 0..count {
                acc.push(f(&mut rng));
            }
            acc
        })
        .collect();
    let mut total = MeanVar::new();
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Component-wise accumulator for a fixed-length vector statistic.
#[derive(Debug, Clone)]
pub struct VecMeanVar {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecMeanVar {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len());
        self.n += 1;
        let n = self.n as f64;
        for (i, &xi) in x.iter().enumerate() {
            let d = xi - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (xi - self.mean[i]);
        }
    }

    pub fn merge(&mut self, other: &VecMeanVar) {
        assert_eq!(self.mean.len(), other.mean.len());
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let n_total = self.n + other.n;
        let w = other.n as f64 / n_total as f64;
        let cross = self.n as f64 * other.n as f64 / n_total as f64;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * w;
            self.m2[i] += other.m2[i] + d * d * cross;
        }
        self.n = n_total;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn stderrs(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![f64::INFINITY; self.mean.len()];
        }
        let denom = (self.n - 1) as f64 * self.n as f64;
        self.m2.iter().map(|m2| (m2 / denom).sqrt()).collect()
    }
}

/// Chunked parallel runner for arbitrary per-chunk accumulators.
///
/// `fold` receives `(stream, trial_count)` and returns the chunk's partial
/// result; partials come back in chunk order for a deterministic merge.
/// Callers derive their RNG from their own seed plus the stream index.
pub fn par_chunks<A, F>(n: usize, chunk: usize, fold: F) -> Vec<A>
where
    A: Send,
    F: Fn(u64, usize) -> A + Sync,
{
    assert!(n > 0 && chunk > 0);
    let n_chunks = n.div_ceil(chunk);
    (0..n_chunks)
        .into_par_iter()
        .map(|i| fold(i as u64, chunk.min(n - i * chunk)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let mut whole = MeanVar::new();
        for &x in &xs {
            whole.push(x);
        }
        let mut left = MeanVar::new();
        let mut right = MeanVar::new();
        for &x in &xs[..317] {
            left.push(x);
        }
        for &x in &xs[317..] {
            right.push(x);
        }
        left.merge(&right);
        assert!((whole.mean() - left.mean()).abs() < 1e-12);
        assert!((whole.variance() - left.variance()).abs() < 1e-12);
    }

    #[test]
    fn mc_scalar_is_chunk_deterministic() {
        use rand::Rng;
        let f = |rng: &mut StreamRng| rng.random::<f64>();
        let a = mc_scalar_chunked(10_000, 128, 3, f);
        let b = mc_scalar_chunked(10_000, 128, 3, f);
        assert_eq!(a.mean().to_bits(), b.mean().to_bits());
        assert!((a.mean() - 0.5).abs() < 4.0 * a.stderr());
    }

    #[test]
    fn vec_accumulator_merge() {
        let mut whole = VecMeanVar::new(2);
        let mut a = VecMeanVar::new(2);
        let mut b = VecMeanVar::new(2);
        for i in 0..100 {
            let x = [i as f64, (i as f64).cos()];
            whole.push(&x);
            if i < 40 {
                a.push(&x)
            } else {
                b.push(&x)
            }
        }
        a.merge(&b);
        assert!((whole.means()[0] - a.means()[0]).abs() < 1e-12);
        assert!((whole.stderrs()[1] - a.stderrs()[1]).abs() < 1e-12);
    }
}
