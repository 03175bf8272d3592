//! Evaluation metrics: thresholded overlap scores, calibration scores and
//! the per-image report used by the experiment commands.

mod report;
mod stats;

pub use report::{format_sig6, MetricsReport, CSV_HEADER};
pub use stats::{bootstrap_ci, wilcoxon_rank_sum, RankSumTest, DEFAULT_RESAMPLES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probability floor and ceiling used by [`nll`].
pub const NLL_CLIP: f64 = 1e-7;

/// Foreground softmax map of one image with its binary ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    fg_prob: Tensor,
    truth: Tensor,
}

impl PredictionMap {
    pub fn new(fg_prob: Tensor, truth: Tensor) -> Result<Self> {
        if fg_prob.shape() != truth.shape() {
            return Err(Error::shape(format!(
                "probabilities {:?} and truth {:?} differ in shape",
                fg_prob.shape(),
                truth.shape()
            )));
        }
        if fg_prob.numel() == 0 {
            return Err(Error::invalid("empty prediction map"));
        }
        if let Some(s) = fg_prob.data().iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!("probability {s} outside [0, 1]")));
        }
        if let Some(y) = truth.data().iter().find(|y| **y != 0.0 && **y != 1.0) {
            return Err(Error::invalid(format!("truth value {y} is not 0 or 1")));
        }
        Ok(Self { fg_prob, truth })
    }

    pub fn fg_prob(&self) -> &Tensor {
        &self.fg_prob
    }

    pub fn truth(&self) -> &Tensor {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.fg_prob.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.fg_prob
            .data()
            .iter()
            .zip(self.truth.data())
            .map(|(s, y)| (*s, *y == 1.0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }
}

/// Thresholds `map` (foreground iff `s >= threshold`) and tallies the result
/// against the truth. `0.5` is the argmax decision.
pub fn confusion(map: &PredictionMap, threshold: f64) -> Result<ConfusionCounts> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = ConfusionCounts::default();
    for (s, y) in map.pairs() {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `num / den`, or 1 when nothing was there to get wrong and 0 when the
/// only possible outcome was an error.
fn ratio(num: u64, den: u64, other_errors: u64) -> f64 {
    if den == 0 {
        if other_errors == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 0)
}

pub fn jaccard(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_, 0)
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_, c.fp)
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp, c.fn_)
}

/// Mean binary negative log-likelihood with probabilities clipped to
/// `[NLL_CLIP, 1 - NLL_CLIP]`.
pub fn nll(map: &PredictionMap) -> f64 {
    let total: f64 = map
        .pairs()
        .map(|(s, y)| {
            let s = s.clamp(NLL_CLIP, 1.0 - NLL_CLIP);
            if y {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    total / map.len() as f64
}

/// Mean squared error of the two-class probability vector, averaged over
/// both classes.
pub fn brier(map: &PredictionMap) -> f64 {
    let total: f64 = map
        .pairs()
        .map(|(s, y)| {
            let d = s - f64::from(u8::from(y));
            // Foreground and background residuals have equal magnitude.
            2.0 * d * d
        })
        .sum();
    total / (2.0 * map.len() as f64)
}

/// Counts of foreground probabilities in `n_bins` uniform bins over [0, 1];
/// bins are left-inclusive and the last one is also right-inclusive.
pub fn softmax_histogram(map: &PredictionMap, n_bins: usize) -> Result<Vec<(usize, u64)>> {
    if n_bins < 2 {
        return Err(Error::invalid(format!("histogram needs >= 2 bins, got {n_bins}")));
    }
    let mut counts = vec![0u64; n_bins];
    for (s, _) in map.pairs() {
        let bin = ((s * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(counts.into_iter().enumerate().collect())
}

/// Fraction of pixels whose foreground probability lies strictly inside
/// `(lo, hi)`.
pub fn uncertain_fraction(map: &PredictionMap, lo: f64, hi: f64) -> f64 {
    let n = map.pairs().filter(|(s, _)| *s > lo && *s < hi).count();
    n as f64 / map.len() as f64
}
