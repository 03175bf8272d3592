//! Single-image SGD training with plateau learning-rate decay, early
//! stopping and light augmentation.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::losses::{make_loss, LabelledBatch, Loss, LossConfig};
use crate::segnet::{self, BoundParams, NetConfig, ParameterSet};
use crate::synthdata::Sample;
use crate::tensor::Tensor;

/// A validation loss counts as an improvement only if it beats the best so
/// far by more than this.
pub const IMPROVEMENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub aug_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            plateau_patience: 25,
            plateau_factor: 0.1,
            early_stop_patience: 50,
            max_epochs: 100,
            batch_size: 1,
            augment: true,
            aug_prob: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("train.lr0 = {} must be > 0", self.lr0)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config(format!(
                "train.plateau_factor = {} must lie in (0, 1)",
                self.plateau_factor
            )));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::config("patiences must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return Err(Error::config(format!(
                "train.aug_prob = {} must lie in [0, 1]",
                self.aug_prob
            )));
        }
        Ok(())
    }
}

/// Something [`train`] can fit: a parameter initialiser plus a forward pass
/// from a `[C, H, W]` image to `[2, H, W]` probabilities.
pub trait Model {
    fn init_params(&self) -> Result<ParameterSet>;
    fn forward(&self, g: &mut Graph, params: &BoundParams, image: NodeId) -> Result<NodeId>;
}

impl Model for NetConfig {
    fn init_params(&self) -> Result<ParameterSet> {
        segnet::init_params(self)
    }

    fn forward(&self, g: &mut Graph, params: &BoundParams, image: NodeId) -> Result<NodeId> {
        segnet::forward(g, self, params, image)
    }
}

/// `w <- w - lr * g` for every parameter.
pub fn sgd_step(params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.names().ne(grads.names()) {
        return Err(Error::invalid("gradient names do not match parameter names"));
    }
    for (name, g) in grads.iter() {
        let w = params.get_mut(name).expect("names checked above");
        if w.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                w.shape()
            )));
        }
        for (w, g) in w.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * g;
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` whenever `patience` epochs pass
/// without improvement, then starts counting again.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's validation loss; returns whether the rate dropped.
    pub fn step(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best - IMPROVEMENT_TOL {
            self.best = val_loss;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.lr *= self.factor;
            self.wait = 0;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Records one epoch's validation loss; returns whether to stop.
    pub fn step(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best - IMPROVEMENT_TOL {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }
}

/// Per-image z-score followed by min-max rescaling to [0, 1]. A constant
/// image maps to zeros.
pub fn normalize(image: &Tensor) -> Tensor {
    let n = image.numel() as f64;
    let mean = image.sum() / n;
    let var = image.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Tensor::zeros(image.shape());
    }
    let z = image.map(|v| (v - mean) / var.sqrt());
    let (lo, hi) = z
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    z.map(|v| (v - lo) / (hi - lo))
}

/// Mirrors the last two axes of a `[.., H, W]` tensor; `vertical` flips rows.
pub fn flip(t: &Tensor, vertical: bool) -> Tensor {
    let shape = t.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out = t.clone();
    for (src, dst) in t.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = if vertical { (h - 1 - r, c) } else { (r, w - 1 - c) };
                dst[r * w + c] = src[sr * w + sc];
            }
        }
    }
    out
}

/// Multiplies intensities by `factor` and clamps to [0, 1].
pub fn brighten(image: &Tensor, factor: f64) -> Tensor {
    image.map(|v| (v * factor).clamp(0.0, 1.0))
}

/// Independently, each with probability `p`: horizontal flip, vertical
/// flip (both applied to image and mask) and a brightness change by a
/// factor in [0.5, 2] (image only).
pub fn augment<R: Rng>(image: &Tensor, mask: &Tensor, p: f64, rng: &mut R) -> (Tensor, Tensor) {
    let (mut image, mut mask) = (image.clone(), mask.clone());
    for vertical in [false, true] {
        if rng.gen_bool(p) {
            image = flip(&image, vertical);
            mask = flip(&mask, vertical);
        }
    }
    if rng.gen_bool(p) {
        image = brighten(&image, rng.gen_range(0.5..=2.0));
    }
    (image, mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were returned, if any epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,wall_ms\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr, r.wall_ms);
        }
        s
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.stop_reason == other.stop_reason
            && self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }
}

fn image_loss<M: Model>(
    model: &M,
    loss: &Loss,
    g: &mut Graph,
    params: &BoundParams,
    image: &Tensor,
    mask: &Tensor,
) -> Result<NodeId> {
    let x = g.constant(image.clone());
    let probs = model.forward(g, params, x)?;
    let batch = LabelledBatch::from_mask(g, probs, mask)?;
    loss.build(g, &batch)
}

/// Mean loss over `samples` at fixed parameters, with no augmentation.
pub fn evaluate_loss<M: Model>(
    model: &M,
    params: &ParameterSet,
    loss: &Loss,
    samples: &[(Tensor, Tensor)],
) -> Result<f64> {
    let mut total = 0.0;
    for (image, mask) in samples {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let root = image_loss(model, loss, &mut g, &bound, image, mask)?;
        total += g.value(root).item()?;
    }
    Ok(total / samples.len() as f64)
}

/// Fits `model` to `train_set` and returns the parameters with the lowest
/// validation loss together with the epoch log.
///
/// Images are normalised with [`normalize`] before use. Each epoch visits
/// the training images in a seeded random order, taking one SGD step per
/// `batch_size` images on the mean gradient.
pub fn train<M: Model>(
    model: &M,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<(ParameterSet, TrainLog)> {
    cfg.validate()?;
    let loss = make_loss(loss_cfg)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let prep = |s: &[Sample]| -> Vec<(Tensor, Tensor)> {
        s.iter().map(|s| (normalize(&s.image), s.mask.clone())).collect()
    };
    let (train_data, val_data) = (prep(train_set), prep(val_set));

    let mut params = model.init_params()?;
    let mut best = (f64::INFINITY, params.clone(), None);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sched = PlateauScheduler::new(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience);
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut log = TrainLog {
        epochs: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: None,
    };
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<ParameterSet> = None;
            for &i in chunk {
                let (image, mask) = &train_data[i];
                let (image, mask) = if cfg.augment {
                    augment(image, mask, cfg.aug_prob, &mut rng)
                } else {
                    (image.clone(), mask.clone())
                };
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true);
                let root = image_loss(model, &loss, &mut g, &bound, &image, &mask)?;
                let value = g.value(root).item()?;
                if !value.is_finite() {
                    return Err(Error::Domain(format!("training loss became {value} at epoch {epoch}")));
                }
                total += value;
                g.backward(root)?;
                let grads = bound.grads(&g);
                acc = Some(match acc {
                    None => grads,
                    Some(mut a) => {
                        sgd_step(&mut a, &grads, -1.0)?;
                        a
                    }
                });
            }
            let grads = acc.expect("chunks are non-empty");
            sgd_step(&mut params, &grads, lr / chunk.len() as f64)?;
        }
        let train_loss = total / train_data.len() as f64;
        let val_loss = evaluate_loss(model, &params, &loss, &val_data)?;
        if !val_loss.is_finite() {
            return Err(Error::Domain(format!("validation loss became {val_loss} at epoch {epoch}")));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if val_loss < best.0 - IMPROVEMENT_TOL {
            best = (val_loss, params.clone(), Some(epoch));
        }
        sched.step(val_loss);
        if stopper.step(val_loss) {
            log.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    log.best_epoch = best.2;
    let params = if best.2.is_some() { best.1 } else { params };
    Ok((params, log))
}
