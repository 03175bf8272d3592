use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Largest pooled sample size for which the rank-sum p-value is computed by
/// enumerating every assignment of ranks.
const EXACT_LIMIT: usize = 12;

/// Percentile bootstrap interval for the mean of `values`.
///
/// Each of `n_resamples` resamples draws `values.len()` items with
/// replacement; the interval endpoints are nearest-rank quantiles of the
/// resampled means at `(1 - level) / 2` and `(1 + level) / 2`.
pub fn bootstrap_ci(values: &[f64], level: f64, n_resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    if n_resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bootstrap values must be finite"));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let rank = |q: f64| {
        let k = (q * n_resamples as f64).ceil() as usize;
        means[k.clamp(1, n_resamples) - 1]
    };
    let tail = (1.0 - level) / 2.0;
    Ok((rank(tail), rank(1.0 - tail)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankSumTest {
    /// Sum of the midranks of the first sample in the pooled ordering.
    pub statistic: f64,
    pub two_sided_p: f64,
    /// Whether the p-value came from full enumeration.
    pub exact: bool,
}

/// Wilcoxon rank-sum test of `xs` against `ys`, each with at least 3 values.
///
/// Ties get midranks. Pooled samples of at most 12 values use the exact
/// permutation distribution of the statistic (conditional on the observed
/// ranks, so ties are handled exactly); larger samples use the normal
/// approximation with tie and continuity corrections.
pub fn wilcoxon_rank_sum(xs: &[f64], ys: &[f64]) -> Result<RankSumTest> {
    if xs.len() < 3 || ys.len() < 3 {
        return Err(Error::invalid(format!(
            "rank-sum test needs >= 3 values per sample, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::invalid("rank-sum test input contains NaN"));
    }
    let (n, m) = (xs.len(), ys.len());
    let total = n + m;
    let ranks = midranks(xs.iter().chain(ys).copied().collect());
    let statistic: f64 = ranks[..n].iter().sum();
    let expected = n as f64 * (total as f64 + 1.0) / 2.0;
    let observed = (statistic - expected).abs();

    if total <= EXACT_LIMIT {
        // Tolerance absorbs rounding in sums of half-integer midranks.
        let tol = 1e-9;
        let mut extreme = 0u64;
        let mut count = 0u64;
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            count += 1;
            let w: f64 = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if (w - expected).abs() >= observed - tol {
                extreme += 1;
            }
        }
        return Ok(RankSumTest {
            statistic,
            two_sided_p: extreme as f64 / count as f64,
            exact: true,
        });
    }

    let mut sorted: Vec<f64> = xs.iter().chain(ys).copied().collect();
    sorted.sort_by(f64::total_cmp);
    let tie_term: f64 = sorted
        .chunk_by(|a, b| a == b)
        .map(|g| {
            let t = g.len() as f64;
            t * t * t - t
        })
        .sum();
    let nt = total as f64;
    let variance = n as f64 * m as f64 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    let two_sided_p = if variance <= 0.0 {
        1.0
    } else {
        let z = (observed - 0.5).max(0.0) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(RankSumTest {
        statistic,
        two_sided_p,
        exact: false,
    })
}

/// 1-based ranks with ties replaced by the mean of the ranks they span.
fn midranks(values: Vec<f64>) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}
