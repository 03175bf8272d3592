use std::fmt::Write as _;

use super::{bootstrap_ci, brier, confusion, dice, jaccard, nll, precision, recall, PredictionMap};
use crate::error::{Error, Result};

/// Column order of [`MetricsReport::csv_row`].
pub const CSV_HEADER: &str = "dataset,loss,gamma,nll,brier,dice,jaccard,recall,precision,\
nll_lo,nll_hi,brier_lo,brier_hi,dice_lo,dice_hi,jaccard_lo,jaccard_hi,\
recall_lo,recall_hi,precision_lo,precision_hi";

const METRICS: [&str; 6] = ["nll", "brier", "dice", "jaccard", "recall", "precision"];

/// Per-image metrics of one model on one test set, with their means and
/// 95% bootstrap intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub loss: String,
    pub gamma: f64,
    pub threshold: f64,
    /// Per-image values, one row per metric in the order nll, brier, dice,
    /// jaccard, recall, precision.
    pub per_image: [Vec<f64>; 6],
    pub means: [f64; 6],
    pub intervals: [(f64, f64); 6],
}

impl MetricsReport {
    pub fn from_maps(
        dataset: &str,
        loss: &str,
        gamma: f64,
        maps: &[PredictionMap],
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::invalid("no prediction maps to report on"));
        }
        let mut per_image: [Vec<f64>; 6] = Default::default();
        for map in maps {
            let c = confusion(map, threshold)?;
            let row = [nll(map), brier(map), dice(&c), jaccard(&c), recall(&c), precision(&c)];
            for (col, v) in per_image.iter_mut().zip(row) {
                col.push(v);
            }
        }
        let mut means = [0.0; 6];
        let mut intervals = [(0.0, 0.0); 6];
        for (i, col) in per_image.iter().enumerate() {
            means[i] = col.iter().sum::<f64>() / col.len() as f64;
            intervals[i] = if col.len() >= 2 {
                bootstrap_ci(col, 0.95, super::DEFAULT_RESAMPLES, seed.wrapping_add(i as u64))?
            } else {
                (means[i], means[i])
            };
        }
        Ok(Self {
            dataset: dataset.to_owned(),
            loss: loss.to_owned(),
            gamma,
            threshold,
            per_image,
            means,
            intervals,
        })
    }

    /// Mean of the named metric (`nll`, `brier`, `dice`, ...).
    pub fn mean(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.means[i])
    }

    pub fn values(&self, metric: &str) -> Option<&[f64]> {
        METRICS
            .iter()
            .position(|m| *m == metric)
            .map(|i| self.per_image[i].as_slice())
    }

    /// One CSV line matching [`CSV_HEADER`], numbers to 6 significant digits.
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{}", self.dataset, self.loss, format_sig6(self.gamma));
        for m in self.means {
            let _ = write!(row, ",{}", format_sig6(m));
        }
        for (lo, hi) in self.intervals {
            let _ = write!(row, ",{},{}", format_sig6(lo), format_sig6(hi));
        }
        row
    }
}

/// Shortest decimal rendering of `x` rounded to 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    format!("{rounded}")
}
