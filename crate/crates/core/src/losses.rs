//! Differentiable segmentation losses for the binary (foreground/background)
//! case.
//!
//! Every loss takes a [`LabelledBatch`]: a `[2, ...]` probability node whose
//! channel 0 is the foreground probability and channel 1 the background
//! probability, paired with a one-hot target of the same shape. Losses are
//! means over one image.
//!
//! The region losses share one structure: a soft true-positive sum over a
//! denominator of weighted false-positive and false-negative sums. The
//! calibrated ("++") variants raise each per-pixel false-positive product
//! `p0 * y1` and false-negative product `p1 * y0` to an exponent before
//! summation, which penalises confident mistakes more than hesitant ones.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exponent applied to per-pixel FP/FN terms when a compound loss is
/// switched to its `++` form.
pub const PLUSPLUS_GAMMA: f64 = 2.0;

/// Default additive smoothing of every ratio loss.
pub const DEFAULT_SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    CrossEntropy,
    Dice,
    DicePlusPlus,
    Combo,
    Tversky,
    FocalTversky,
    UnifiedFocal,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::CrossEntropy,
        LossKind::Dice,
        LossKind::DicePlusPlus,
        LossKind::Combo,
        LossKind::Tversky,
        LossKind::FocalTversky,
        LossKind::UnifiedFocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Dice => "dsc",
            LossKind::DicePlusPlus => "dscpp",
            LossKind::Combo => "combo",
            LossKind::Tversky => "tversky",
            LossKind::FocalTversky => "focal_tversky",
            LossKind::UnifiedFocal => "unified_focal",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match norm.as_str() {
            "ce" | "cross_entropy" => LossKind::CrossEntropy,
            "dsc" | "dice" => LossKind::Dice,
            "dscpp" | "dsc++" | "dice++" => LossKind::DicePlusPlus,
            "combo" => LossKind::Combo,
            "tversky" => LossKind::Tversky,
            "focal_tversky" | "ft" => LossKind::FocalTversky,
            "unified_focal" | "uf" => LossKind::UnifiedFocal,
            _ => return Err(Error::config(format!("unknown loss kind `{s}`"))),
        })
    }
}

/// A loss selection with all of its hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Substitute the exponentiated FP/FN terms into the region term.
    pub plusplus: bool,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub lambda: f64,
    pub smooth: f64,
}

impl LossConfig {
    /// Published default hyperparameters for `kind`.
    pub fn new(kind: LossKind) -> Self {
        let base = LossConfig {
            kind,
            plusplus: false,
            gamma: 1.0,
            alpha: 0.5,
            beta: 0.5,
            delta: 0.6,
            lambda: 0.5,
            smooth: DEFAULT_SMOOTH,
        };
        match kind {
            LossKind::DicePlusPlus => LossConfig {
                gamma: PLUSPLUS_GAMMA,
                ..base
            },
            LossKind::Tversky => LossConfig {
                alpha: 0.3,
                beta: 0.7,
                ..base
            },
            LossKind::FocalTversky => LossConfig {
                alpha: 0.3,
                beta: 0.7,
                gamma: 4.0 / 3.0,
                ..base
            },
            LossKind::UnifiedFocal => LossConfig {
                gamma: 0.1,
                delta: 0.6,
                lambda: 0.5,
                ..base
            },
            _ => base,
        }
    }

    /// The DSC++ loss with focal exponent `gamma`.
    pub fn dscpp(gamma: f64) -> Self {
        LossConfig {
            gamma,
            ..Self::new(LossKind::DicePlusPlus)
        }
    }

    pub fn with_plusplus(mut self, on: bool) -> Self {
        self.plusplus = on;
        self
    }

    /// Exponent applied to per-pixel FP/FN terms in the region component.
    pub fn region_exponent(&self) -> f64 {
        match (self.kind, self.plusplus) {
            (LossKind::DicePlusPlus, _) | (LossKind::Dice, true) => self.gamma,
            (_, true) => PLUSPLUS_GAMMA,
            (_, false) => 1.0,
        }
    }

    /// Short human-readable label such as `tversky++` or `dscpp(g=2)`.
    pub fn label(&self) -> String {
        match self.kind {
            LossKind::DicePlusPlus => format!("dscpp(g={})", self.gamma),
            LossKind::Dice if self.plusplus => format!("dscpp(g={})", self.gamma),
            k if self.plusplus => format!("{k}++"),
            k => k.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("loss.{name} = {v} must lie in [0, 1]")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        unit("delta", self.delta)?;
        unit("lambda", self.lambda)?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("loss.gamma = {} must be > 0", self.gamma)));
        }
        if !(self.smooth >= 0.0) {
            return Err(Error::config(format!("loss.smooth = {} must be >= 0", self.smooth)));
        }
        if self.plusplus && self.kind == LossKind::CrossEntropy {
            return Err(Error::config("cross-entropy has no region term to substitute"));
        }
        Ok(())
    }
}

/// Probabilities paired with a one-hot target, both shaped `[2, ...]`.
#[derive(Clone, Debug)]
pub struct LabelledBatch {
    pub probs: NodeId,
    pub onehot: Tensor,
}

impl LabelledBatch {
    pub fn new(g: &Graph, probs: NodeId, onehot: Tensor) -> Result<Self> {
        let shape = g.value(probs).shape();
        if shape.first() != Some(&2) {
            return Err(Error::shape(format!(
                "binary losses need 2 channels, got {shape:?}"
            )));
        }
        if onehot.shape() != shape {
            return Err(Error::shape(format!(
                "one-hot {:?} does not match probabilities {shape:?}",
                onehot.shape()
            )));
        }
        let plane = onehot.numel() / 2;
        let (y0, y1) = onehot.data().split_at(plane);
        for (a, b) in y0.iter().zip(y1) {
            if !((*a == 0.0 || *a == 1.0) && a + b == 1.0) {
                return Err(Error::invalid("one-hot target must be 0/1 and sum to 1"));
            }
        }
        Ok(Self { probs, onehot })
    }

    /// Builds the one-hot target from a binary foreground mask.
    pub fn from_mask(g: &Graph, probs: NodeId, mask: &Tensor) -> Result<Self> {
        Self::new(g, probs, onehot_from_mask(mask)?)
    }

    fn pixels(&self) -> usize {
        self.onehot.numel() / 2
    }
}

/// `[2, ...]` one-hot encoding of a binary mask (channel 0 = foreground).
pub fn onehot_from_mask(mask: &Tensor) -> Result<Tensor> {
    if let Some(v) = mask.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::invalid(format!("mask value {v} is not 0 or 1")));
    }
    let bg = mask.map(|v| 1.0 - v);
    Tensor::stack(&[mask.clone(), bg])
}

/// Graph handles for the per-channel pieces of a batch. `fg` selects which
/// channel plays the foreground role, so `1` gives the class-swapped view.
struct Channels {
    p_fg: NodeId,
    p_bg: NodeId,
    y_fg: NodeId,
    y_bg: NodeId,
}

impl Channels {
    fn new(g: &mut Graph, batch: &LabelledBatch, fg: usize) -> Result<Self> {
        let bg = 1 - fg;
        Ok(Channels {
            p_fg: g.channel(batch.probs, fg)?,
            p_bg: g.channel(batch.probs, bg)?,
            y_fg: g.constant(batch.onehot.channel(fg)?),
            y_bg: g.constant(batch.onehot.channel(bg)?),
        })
    }

    /// Soft TP, FP and FN sums, with FP/FN raised per pixel to `exponent`.
    fn overlap(&self, g: &mut Graph, exponent: f64) -> Result<(NodeId, NodeId, NodeId)> {
        let tp = g.mul(self.p_fg, self.y_fg)?;
        let tp = g.sum(tp);
        let mut fp = g.mul(self.p_fg, self.y_bg)?;
        let mut fn_ = g.mul(self.p_bg, self.y_fg)?;
        if exponent != 1.0 {
            fp = g.pow(fp, exponent)?;
            fn_ = g.pow(fn_, exponent)?;
        }
        let fp = g.sum(fp);
        let fn_ = g.sum(fn_);
        Ok((tp, fp, fn_))
    }
}

/// `(w_tp*tp + eps) / (w_tp*tp + w_fp*fp + w_fn*fn + eps)`
fn weighted_ratio(
    g: &mut Graph,
    (tp, fp, fn_): (NodeId, NodeId, NodeId),
    w_tp: f64,
    w_fp: f64,
    w_fn: f64,
    smooth: f64,
) -> Result<NodeId> {
    let tp_w = g.scale(tp, w_tp);
    let num = g.shift(tp_w, smooth);
    let fp_w = g.scale(fp, w_fp);
    let fn_w = g.scale(fn_, w_fn);
    let errs = g.add(fp_w, fn_w)?;
    let den = g.add(num, errs)?;
    g.div(num, den)
}

/// Mean over pixels of `-sum_c y_c log p_c`.
pub fn ce_loss(g: &mut Graph, batch: &LabelledBatch) -> Result<NodeId> {
    let n = batch.pixels() as f64;
    let logp = g.log(batch.probs)?;
    let y = g.constant(batch.onehot.clone());
    let picked = g.mul(logp, y)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / n))
}

/// Class-weighted binary cross-entropy on the foreground probability:
/// `-(1/N) sum beta*y*log p + (1-beta)*(1-y)*log(1-p)`.
pub fn mce_loss(g: &mut Graph, batch: &LabelledBatch, beta: f64) -> Result<NodeId> {
    let n = batch.pixels() as f64;
    let ch = Channels::new(g, batch, 0)?;
    let log_p = g.log(ch.p_fg)?;
    let q = g.one_minus(ch.p_fg);
    let log_q = g.log(q)?;
    let pos = g.mul(ch.y_fg, log_p)?;
    let neg = g.mul(ch.y_bg, log_q)?;
    let pos = g.sum(pos);
    let neg = g.sum(neg);
    let pos = g.scale(pos, beta);
    let neg = g.scale(neg, 1.0 - beta);
    let total = g.add(pos, neg)?;
    Ok(g.scale(total, -1.0 / n))
}

/// `1 - (2 TP + eps) / (2 TP + FP + FN + eps)` on soft counts.
pub fn dsc_loss(g: &mut Graph, batch: &LabelledBatch, smooth: f64) -> Result<NodeId> {
    let ch = Channels::new(g, batch, 0)?;
    let terms = ch.overlap(g, 1.0)?;
    let score = weighted_ratio(g, terms, 2.0, 1.0, 1.0, smooth)?;
    Ok(g.one_minus(score))
}

/// Dice loss with every per-pixel FP and FN product raised to `gamma`
/// before summation; `gamma = 1` is the plain Dice loss.
pub fn dscpp_loss(g: &mut Graph, batch: &LabelledBatch, gamma: f64, smooth: f64) -> Result<NodeId> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("DSC++ gamma {gamma} must be > 0")));
    }
    let ch = Channels::new(g, batch, 0)?;
    let terms = ch.overlap(g, gamma)?;
    let score = weighted_ratio(g, terms, 2.0, 1.0, 1.0, smooth)?;
    Ok(g.one_minus(score))
}

/// Tversky index of the foreground class with FP/FN weights and per-pixel
/// FP/FN exponent.
pub fn tversky_index(
    g: &mut Graph,
    batch: &LabelledBatch,
    w_fp: f64,
    w_fn: f64,
    exponent: f64,
    smooth: f64,
) -> Result<NodeId> {
    class_tversky_index(g, batch, 0, w_fp, w_fn, exponent, smooth)
}

fn class_tversky_index(
    g: &mut Graph,
    batch: &LabelledBatch,
    fg: usize,
    w_fp: f64,
    w_fn: f64,
    exponent: f64,
    smooth: f64,
) -> Result<NodeId> {
    if w_fp < 0.0 || w_fn < 0.0 {
        return Err(Error::invalid("Tversky weights must be non-negative"));
    }
    let ch = Channels::new(g, batch, fg)?;
    let terms = ch.overlap(g, exponent)?;
    weighted_ratio(g, terms, 1.0, w_fp, w_fn, smooth)
}

/// `1 - TI` with `alpha` on false positives and `beta` on false negatives.
pub fn tversky_loss(g: &mut Graph, batch: &LabelledBatch, cfg: &LossConfig) -> Result<NodeId> {
    let ti = tversky_index(g, batch, cfg.alpha, cfg.beta, cfg.region_exponent(), cfg.smooth)?;
    Ok(g.one_minus(ti))
}

/// `(1 - TI)^(1/gamma)` for the foreground class.
pub fn focal_tversky_loss(g: &mut Graph, batch: &LabelledBatch, cfg: &LossConfig) -> Result<NodeId> {
    let base = tversky_loss(g, batch, cfg)?;
    g.pow(base, 1.0 / cfg.gamma)
}

/// `alpha * mCE - (1 - alpha) * DSC`, where the Dice score becomes the
/// DSC++ score under `plusplus`. The value can be negative.
pub fn combo_loss(g: &mut Graph, batch: &LabelledBatch, cfg: &LossConfig) -> Result<NodeId> {
    let mce = mce_loss(g, batch, cfg.beta)?;
    let dice_loss = dscpp_loss(g, batch, cfg.region_exponent(), cfg.smooth)?;
    let dice_score = g.one_minus(dice_loss);
    let a = g.scale(mce, cfg.alpha);
    let b = g.scale(dice_score, 1.0 - cfg.alpha);
    g.sub(a, b)
}

/// `lambda * L_AF + (1 - lambda) * L_AFT` with the foreground as the rare
/// class:
///
/// * `L_AF = -(delta/N) sum_fg log p0 - ((1-delta)/N) sum_bg (1-p1)^gamma log p1`
/// * `L_AFT = (1 - TI_fg)^(1-gamma) + (1 - TI_bg)`, both indices weighting
///   false positives by `delta` and false negatives by `1 - delta`, with
///   `TI_bg` computed with the classes swapped.
pub fn unified_focal_loss(g: &mut Graph, batch: &LabelledBatch, cfg: &LossConfig) -> Result<NodeId> {
    let n = batch.pixels() as f64;
    let (gamma, delta) = (cfg.gamma, cfg.delta);

    let ch = Channels::new(g, batch, 0)?;
    let log_fg = g.log(ch.p_fg)?;
    let rare = g.mul(ch.y_fg, log_fg)?;
    let rare = g.sum(rare);
    let log_bg = g.log(ch.p_bg)?;
    let miss = g.one_minus(ch.p_bg);
    let focus = g.pow(miss, gamma)?;
    let common = g.mul(focus, log_bg)?;
    let common = g.mul(common, ch.y_bg)?;
    let common = g.sum(common);
    let rare = g.scale(rare, -delta / n);
    let common = g.scale(common, -(1.0 - delta) / n);
    let focal = g.add(rare, common)?;

    let exponent = cfg.region_exponent();
    let ti_fg = class_tversky_index(g, batch, 0, delta, 1.0 - delta, exponent, cfg.smooth)?;
    let ti_bg = class_tversky_index(g, batch, 1, delta, 1.0 - delta, exponent, cfg.smooth)?;
    let miss_fg = g.one_minus(ti_fg);
    let miss_fg = g.pow(miss_fg, 1.0 - gamma)?;
    let miss_bg = g.one_minus(ti_bg);
    let tversky = g.add(miss_fg, miss_bg)?;

    let focal = g.scale(focal, cfg.lambda);
    let tversky = g.scale(tversky, 1.0 - cfg.lambda);
    g.add(focal, tversky)
}

/// A configured, differentiable loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Loss {
    cfg: LossConfig,
}

/// Validates `cfg` and returns the loss it selects.
pub fn make_loss(cfg: &LossConfig) -> Result<Loss> {
    cfg.validate()?;
    Ok(Loss { cfg: cfg.clone() })
}

impl Loss {
    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    /// Appends the loss to `g` and returns its scalar node.
    pub fn build(&self, g: &mut Graph, batch: &LabelledBatch) -> Result<NodeId> {
        let cfg = &self.cfg;
        match cfg.kind {
            LossKind::CrossEntropy => ce_loss(g, batch),
            LossKind::Dice | LossKind::DicePlusPlus => {
                let exponent = cfg.region_exponent();
                if exponent == 1.0 {
                    dsc_loss(g, batch, cfg.smooth)
                } else {
                    dscpp_loss(g, batch, exponent, cfg.smooth)
                }
            }
            LossKind::Combo => combo_loss(g, batch, cfg),
            LossKind::Tversky => tversky_loss(g, batch, cfg),
            LossKind::FocalTversky => focal_tversky_loss(g, batch, cfg),
            LossKind::UnifiedFocal => unified_focal_loss(g, batch, cfg),
        }
    }

    /// Loss value of fixed probabilities against a one-hot target.
    pub fn value(&self, probs: &Tensor, onehot: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let p = g.constant(probs.clone());
        let batch = LabelledBatch::new(&g, p, onehot.clone())?;
        let root = self.build(&mut g, &batch)?;
        g.value(root).item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = DEFAULT_SMOOTH;

    /// Foreground probabilities [0.8, 0.3] against truth [1, 0].
    fn standard() -> (Tensor, Tensor) {
        let probs = Tensor::new(vec![2, 2], vec![0.8, 0.3, 0.2, 0.7]).unwrap();
        let onehot = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        (probs, onehot)
    }

    fn value_of(
        probs: &Tensor,
        onehot: &Tensor,
        f: impl Fn(&mut Graph, &LabelledBatch) -> Result<NodeId>,
    ) -> f64 {
        let mut g = Graph::new();
        let p = g.constant(probs.clone());
        let batch = LabelledBatch::new(&g, p, onehot.clone()).unwrap();
        let root = f(&mut g, &batch).unwrap();
        g.value(root).item().unwrap()
    }

    fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Tensor) {
        let fg: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
        y[0] = 1.0;
        let mut p = fg.clone();
        p.extend(fg.iter().map(|v| 1.0 - v));
        let mut oh = y.clone();
        oh.extend(y.iter().map(|v| 1.0 - v));
        (
            Tensor::new(vec![2, n], p).unwrap(),
            Tensor::new(vec![2, n], oh).unwrap(),
        )
    }

    #[test]
    fn ce_standard_case() {
        let (p, y) = standard();
        let oracle = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        let got = value_of(&p, &y, ce_loss);
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.28991).abs() < 1e-5);
    }

    #[test]
    fn ce_uniform_is_ln2_and_perfect_is_zero() {
        let p = Tensor::full(&[2, 3], 0.5);
        let y = onehot_from_mask(&Tensor::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert!((value_of(&p, &y, ce_loss) - 2f64.ln()).abs() < 1e-12);
        assert!(value_of(&y, &y, ce_loss).abs() < 1e-12);
    }

    #[test]
    fn dsc_standard_case() {
        let (p, y) = standard();
        let oracle = 1.0 - (1.6 + EPS) / (2.1 + EPS);
        let got = value_of(&p, &y, |g, b| dsc_loss(g, b, EPS));
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.238095).abs() < 1e-6);
    }

    #[test]
    fn dsc_perfect_and_empty_cases() {
        let y = onehot_from_mask(&Tensor::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        assert!(value_of(&y, &y, |g, b| dsc_loss(g, b, EPS)).abs() < 1e-12);
        let empty = onehot_from_mask(&Tensor::zeros(&[4])).unwrap();
        assert_eq!(value_of(&empty, &empty, |g, b| dsc_loss(g, b, EPS)), 0.0);
    }

    #[test]
    fn dscpp_standard_cases() {
        let (p, y) = standard();
        let g2 = value_of(&p, &y, |g, b| dscpp_loss(g, b, 2.0, EPS));
        assert!((g2 - (1.0 - (1.6 + EPS) / (1.6 + 0.09 + 0.04 + EPS))).abs() < 1e-12);
        assert!((g2 - 0.075145).abs() < 1e-6);
        let g3 = value_of(&p, &y, |g, b| dscpp_loss(g, b, 3.0, EPS));
        assert!((g3 - (1.0 - (1.6 + EPS) / (1.6 + 0.027 + 0.008 + EPS))).abs() < 1e-12);
        assert!((g3 - 0.021407).abs() < 1e-6);
    }

    #[test]
    fn dscpp_rejects_non_positive_gamma() {
        let (p, y) = standard();
        let mut g = Graph::new();
        let pn = g.constant(p);
        let b = LabelledBatch::new(&g, pn, y).unwrap();
        assert!(dscpp_loss(&mut g, &b, 0.0, EPS).is_err());
    }

    #[test]
    fn tversky_standard_cases() {
        let (p, y) = standard();
        let ti = value_of(&p, &y, |g, b| tversky_index(g, b, 0.3, 0.7, 1.0, EPS));
        let oracle = (0.8 + EPS) / (0.8 + 0.3 * 0.3 + 0.7 * 0.2 + EPS);
        assert!((ti - oracle).abs() < 1e-12);
        assert!((ti - 0.776699).abs() < 1e-6);

        let cfg = LossConfig::new(LossKind::Tversky);
        let tl = value_of(&p, &y, |g, b| tversky_loss(g, b, &cfg));
        assert!((tl - 0.223301).abs() < 1e-6);

        let ft_cfg = LossConfig::new(LossKind::FocalTversky);
        let ft = value_of(&p, &y, |g, b| focal_tversky_loss(g, b, &ft_cfg));
        assert!((ft - (1.0 - oracle).powf(0.75)).abs() < 1e-12);
        assert!((ft - 0.324839).abs() < 1e-6);
    }

    #[test]
    fn tversky_index_identities() {
        // Half weights reproduce the Dice score; unit weights reproduce the
        // Jaccard index, i.e. DSC / (2 - DSC).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let (p, y) = random_case(&mut rng, 12);
            let dsc = 1.0 - value_of(&p, &y, |g, b| dsc_loss(g, b, 0.0));
            let half = value_of(&p, &y, |g, b| tversky_index(g, b, 0.5, 0.5, 1.0, 0.0));
            let unit = value_of(&p, &y, |g, b| tversky_index(g, b, 1.0, 1.0, 1.0, 0.0));
            assert!((half - dsc).abs() < 1e-12);
            assert!((unit - dsc / (2.0 - dsc)).abs() < 1e-12);
        }
    }

    #[test]
    fn tversky_perfect_prediction() {
        let y = onehot_from_mask(&Tensor::from_vec(vec![0.0, 1.0, 1.0, 0.0])).unwrap();
        let ti = value_of(&y, &y, |g, b| tversky_index(g, b, 0.3, 0.7, 1.0, EPS));
        assert!((ti - 1.0).abs() < 1e-15);
    }

    #[test]
    fn focal_tversky_gamma_one_is_tversky() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, y) = random_case(&mut rng, 10);
        let tv = LossConfig::new(LossKind::Tversky);
        let ft = LossConfig {
            gamma: 1.0,
            ..LossConfig::new(LossKind::FocalTversky)
        };
        assert_eq!(
            value_of(&p, &y, |g, b| tversky_loss(g, b, &tv)),
            value_of(&p, &y, |g, b| focal_tversky_loss(g, b, &ft))
        );
    }

    #[test]
    fn combo_cases() {
        let (p, y) = standard();
        let cfg = LossConfig::new(LossKind::Combo);
        let mce = -(0.5 * 0.8f64.ln() + 0.5 * 0.7f64.ln()) / 2.0;
        let dsc = (1.6 + EPS) / (2.1 + EPS);
        let oracle = 0.5 * mce - 0.5 * dsc;
        let got = value_of(&p, &y, |g, b| combo_loss(g, b, &cfg));
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert!((got - (-0.308475)).abs() < 1e-6);

        let only_ce = LossConfig { alpha: 1.0, ..cfg.clone() };
        let via_combo = value_of(&p, &y, |g, b| combo_loss(g, b, &only_ce));
        let direct = value_of(&p, &y, |g, b| mce_loss(g, b, 0.5));
        assert_eq!(via_combo, direct);

        let only_dice = LossConfig { alpha: 0.0, ..cfg };
        let perfect = value_of(&y, &y, |g, b| combo_loss(g, b, &only_dice));
        assert!((perfect + 1.0).abs() < 1e-12);
    }

    /// Straight-line transcription of the unified focal loss on the standard
    /// two-pixel case, independent of the graph code.
    fn unified_focal_oracle(gamma: f64, delta: f64, lambda: f64) -> f64 {
        let (p0, p1) = ([0.8f64, 0.3], [0.2f64, 0.7]);
        let n = 2.0;
        // pixel 0 is foreground, pixel 1 background
        let af = -(delta / n) * p0[0].ln() - ((1.0 - delta) / n) * (1.0 - p1[1]).powf(gamma) * p1[1].ln();
        let tp_fg = p0[0];
        let fp_fg = p0[1];
        let fn_fg = p1[0];
        let ti_fg = (tp_fg + EPS) / (tp_fg + delta * fp_fg + (1.0 - delta) * fn_fg + EPS);
        let tp_bg = p1[1];
        let fp_bg = p1[0];
        let fn_bg = p0[1];
        let ti_bg = (tp_bg + EPS) / (tp_bg + delta * fp_bg + (1.0 - delta) * fn_bg + EPS);
        let aft = (1.0 - ti_fg).powf(1.0 - gamma) + (1.0 - ti_bg);
        lambda * af + (1.0 - lambda) * aft
    }

    #[test]
    fn unified_focal_default_matches_transcription() {
        let (p, y) = standard();
        let cfg = LossConfig::new(LossKind::UnifiedFocal);
        let got = value_of(&p, &y, |g, b| unified_focal_loss(g, b, &cfg));
        assert!((got - unified_focal_oracle(0.1, 0.6, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn unified_focal_term_collapses() {
        // All-foreground image, lambda = delta = 1: plain CE of channel 0.
        let y = onehot_from_mask(&Tensor::ones(&[3])).unwrap();
        let p = Tensor::new(vec![2, 3], vec![0.6, 0.9, 0.3, 0.4, 0.1, 0.7]).unwrap();
        let cfg = LossConfig {
            lambda: 1.0,
            delta: 1.0,
            ..LossConfig::new(LossKind::UnifiedFocal)
        };
        let uf = value_of(&p, &y, |g, b| unified_focal_loss(g, b, &cfg));
        let ce = value_of(&p, &y, ce_loss);
        assert!((uf - ce).abs() < 1e-12);

        // lambda = 0, gamma = 0: two plain Tversky complements.
        let (p, y) = standard();
        let cfg = LossConfig {
            lambda: 0.0,
            gamma: 0.0,
            ..LossConfig::new(LossKind::UnifiedFocal)
        };
        let uf = value_of(&p, &y, |g, b| unified_focal_loss(g, b, &cfg));
        assert!((uf - unified_focal_oracle(0.0, 0.6, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn make_loss_plusplus_semantics() {
        let (p, y) = standard();
        let dsc_pp = LossConfig {
            gamma: 2.0,
            ..LossConfig::new(LossKind::Dice)
        }
        .with_plusplus(true);
        let a = make_loss(&dsc_pp).unwrap().value(&p, &y).unwrap();
        let b = make_loss(&LossConfig::dscpp(2.0)).unwrap().value(&p, &y).unwrap();
        assert_eq!(a, b);

        let tv_pp = LossConfig::new(LossKind::Tversky).with_plusplus(true);
        let perfect = make_loss(&tv_pp).unwrap().value(&y, &y).unwrap();
        assert!(perfect.abs() < 1e-12);
        // exponent 2 on FP/FN: 0.8 / (0.8 + 0.3*0.09 + 0.7*0.04)
        let got = make_loss(&tv_pp).unwrap().value(&p, &y).unwrap();
        assert!((got - (1.0 - (0.8 + EPS) / (0.8 + 0.027 + 0.028 + EPS))).abs() < 1e-12);

        assert!(make_loss(&LossConfig::new(LossKind::CrossEntropy).with_plusplus(true)).is_err());
        assert!("nonsense".parse::<LossKind>().is_err());
        for kind in LossKind::ALL {
            assert_eq!(kind.name().parse::<LossKind>().unwrap(), kind);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = LossConfig {
            alpha: 1.5,
            ..LossConfig::new(LossKind::Combo)
        };
        assert!(make_loss(&bad).is_err());
        let bad = LossConfig {
            gamma: 0.0,
            ..LossConfig::new(LossKind::FocalTversky)
        };
        assert!(matches!(make_loss(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn batch_validation() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[2, 3], 0.5));
        assert!(LabelledBatch::new(&g, p, Tensor::full(&[2, 3], 0.5)).is_err());
        assert!(LabelledBatch::new(&g, p, Tensor::zeros(&[2, 2])).is_err());
        let three = g.constant(Tensor::full(&[3, 3], 0.3));
        assert!(LabelledBatch::new(&g, three, Tensor::zeros(&[3, 3])).is_err());
        assert!(onehot_from_mask(&Tensor::from_vec(vec![0.5])).is_err());
    }

    #[test]
    fn dsc_equals_hard_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = 20;
            let truth: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.3)).collect();
            let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
            for (t, p) in truth.iter().zip(&pred) {
                match (t, p) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let counted = 1.0 - 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            let m = |v: &[bool]| Tensor::from_vec(v.iter().map(|b| f64::from(*b as u8)).collect());
            let probs = onehot_from_mask(&m(&pred)).unwrap();
            let onehot = onehot_from_mask(&m(&truth)).unwrap();
            let soft = value_of(&probs, &onehot, |g, b| dsc_loss(g, b, 0.0));
            assert!((soft - counted).abs() < 1e-12, "{soft} vs {counted}");
            // Smoothing moves the value by at most eps / denominator.
            let smoothed = value_of(&probs, &onehot, |g, b| dsc_loss(g, b, EPS));
            let den = (2 * tp + fp + fn_) as f64;
            assert!((smoothed - counted).abs() <= EPS / den);
        }
    }

    #[test]
    fn dscpp_gamma_one_matches_dsc_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (p, y) = random_case(&mut rng, 16);
            let a = value_of(&p, &y, |g, b| dsc_loss(g, b, EPS));
            let b = value_of(&p, &y, |g, b| dscpp_loss(g, b, 1.0, EPS));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plusplus_gradients_check_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Tensor::new(vec![2, 12], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (_, y) = random_case(&mut rng, 12);
        for kind in LossKind::ALL {
            for pp in [false, true] {
                let cfg = LossConfig::new(kind).with_plusplus(pp);
                let Ok(loss) = make_loss(&cfg) else { continue };
                let y = y.clone();
                let err = grad_check(
                    move |g, z| {
                        let p = g.softmax_channels(z)?;
                        let b = LabelledBatch::new(g, p, y.clone())?;
                        loss.build(g, &b)
                    },
                    &logits,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{}: {err}", cfg.label());
            }
        }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..24).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..0.99, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    fn tensors(fg: &[f64], truth: &[bool]) -> (Tensor, Tensor) {
        let mut p = fg.to_vec();
        p.extend(fg.iter().map(|v| 1.0 - v));
        let mask = Tensor::from_vec(truth.iter().map(|b| f64::from(*b as u8)).collect());
        (
            Tensor::new(vec![2, fg.len()], p).unwrap(),
            onehot_from_mask(&mask).unwrap(),
        )
    }

    fn all_losses() -> Vec<Loss> {
        let mut out = Vec::new();
        for kind in LossKind::ALL {
            for pp in [false, true] {
                if let Ok(l) = make_loss(&LossConfig::new(kind).with_plusplus(pp)) {
                    out.push(l);
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn losses_are_permutation_invariant((fg, truth) in arb_case(), seed in any::<u64>()) {
            let mut order: Vec<usize> = (0..fg.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let fg2: Vec<f64> = order.iter().map(|&i| fg[i]).collect();
            let truth2: Vec<bool> = order.iter().map(|&i| truth[i]).collect();
            let (p, y) = tensors(&fg, &truth);
            let (p2, y2) = tensors(&fg2, &truth2);
            for loss in all_losses() {
                let a = loss.value(&p, &y).unwrap();
                let b = loss.value(&p2, &y2).unwrap();
                prop_assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", loss.config().label());
            }
        }

        #[test]
        fn dscpp_decreases_with_gamma((fg, mut truth) in arb_case()) {
            // Need at least one FP or FN term; mixed truth guarantees both.
            truth[0] = true;
            truth[1] = false;
            let (p, y) = tensors(&fg, &truth);
            let vals: Vec<f64> = [1.0, 1.5, 2.0, 3.0]
                .iter()
                .map(|&gm| value_of(&p, &y, |g, b| dscpp_loss(g, b, gm, EPS)))
                .collect();
            for w in vals.windows(2) {
                prop_assert!(w[1] < w[0], "{vals:?}");
            }
        }

        #[test]
        fn gradients_are_finite((fg, truth) in arb_case()) {
            let (p, y) = tensors(&fg, &truth);
            for loss in all_losses() {
                let mut g = Graph::new();
                let pn = g.variable(p.clone());
                let b = LabelledBatch::new(&g, pn, y.clone()).unwrap();
                let root = loss.build(&mut g, &b).unwrap();
                g.backward(root).unwrap();
                prop_assert!(g.grad(pn).all_finite(), "{}", loss.config().label());
                prop_assert!(g.value(root).all_finite());
            }
        }

        #[test]
        fn half_weight_tversky_is_dice((fg, truth) in arb_case()) {
            let (p, y) = tensors(&fg, &truth);
            let dsc = 1.0 - value_of(&p, &y, |g, b| dsc_loss(g, b, 0.0));
            let ti = value_of(&p, &y, |g, b| tversky_index(g, b, 0.5, 0.5, 1.0, 0.0));
            prop_assert!((dsc - ti).abs() < 1e-12);
        }
    }
}
