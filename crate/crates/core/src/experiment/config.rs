use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::segnet::NetConfig;
use crate::synthdata::{SynthConfig, SynthKind};
use crate::trainer::TrainConfig;

/// Desk-scale grid of focal exponents swept by `sweep-gamma`.
pub const GAMMA_GRID: [f64; 10] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| f64::from(i) * 0.05).collect()
}

/// The losses compared by default: every kind, plus the `++` variant of
/// each compound loss.
pub fn default_loss_list() -> Vec<LossConfig> {
    let mut out = vec![
        LossConfig::new(LossKind::CrossEntropy),
        LossConfig::new(LossKind::Dice),
        LossConfig::dscpp(2.0),
    ];
    for kind in [
        LossKind::Tversky,
        LossKind::FocalTversky,
        LossKind::Combo,
        LossKind::UnifiedFocal,
    ] {
        out.push(LossConfig::new(kind));
        out.push(LossConfig::new(kind).with_plusplus(true));
    }
    out
}

/// Parses one compare-list entry: a loss kind name, optionally suffixed
/// with `++`, using that kind's default hyperparameters.
pub fn parse_loss_spec(spec: &str) -> Result<LossConfig> {
    let spec = spec.trim();
    match spec.strip_suffix("++") {
        Some(kind) if !kind.is_empty() && kind != "dsc" => {
            let cfg = LossConfig::new(kind.parse()?).with_plusplus(true);
            cfg.validate()?;
            Ok(cfg)
        }
        _ => Ok(LossConfig::new(spec.parse()?)),
    }
}

/// Every setting of a run. Each field maps to one `section.key` entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    /// Directory of a dataset written by `gen-data`; when unset, data is
    /// regenerated in memory from the `data.*` keys.
    pub data_dir: Option<PathBuf>,
    pub split_seed: u64,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub threshold: f64,
    pub bootstrap_seed: u64,
    pub hist_bins: usize,
    pub checkpoint: Option<PathBuf>,
    pub overlay_count: usize,
    pub gammas: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub losses: Vec<LossConfig>,
    pub heatmap_input: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: SynthConfig::default(),
            data_dir: None,
            split_seed: 0,
            net: NetConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::new(LossKind::Dice),
            threshold: 0.5,
            bootstrap_seed: 0,
            hist_bins: 20,
            checkpoint: None,
            overlay_count: 4,
            gammas: GAMMA_GRID.to_vec(),
            thresholds: threshold_grid(),
            losses: default_loss_list(),
            heatmap_input: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::config(format!("`{key}` needs at least one value")));
    }
    Ok(out)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn loss_spec(cfg: &LossConfig) -> String {
    if cfg.plusplus {
        format!("{}++", cfg.kind)
    } else {
        cfg.kind.to_string()
    }
}

impl ExperimentConfig {
    /// Applies `key = value` pairs in order. Setting `loss.kind` resets the
    /// loss hyperparameters to that kind's defaults, so later `loss.*` keys
    /// override them.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (key, value) in pairs {
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.kind" => self.data.kind = v.parse::<SynthKind>()?,
            "data.height" => self.data.height = parse(key, v)?,
            "data.width" => self.data.width = parse(key, v)?,
            "data.fg_fraction" => self.data.fg_fraction_target = parse(key, v)?,
            "data.ambiguity_width" => self.data.ambiguity_width = parse(key, v)?,
            "data.noise_sigma" => self.data.noise_sigma = parse(key, v)?,
            "data.contrast" => self.data.contrast = parse(key, v)?,
            "data.count" => self.data.count = parse(key, v)?,
            "data.seed" => self.data.seed = parse(key, v)?,
            "data.dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "split.seed" => self.split_seed = parse(key, v)?,
            "net.depth" => self.net.depth = parse(key, v)?,
            "net.base_channels" => self.net.base_channels = parse(key, v)?,
            "net.kernel" => self.net.kernel = parse(key, v)?,
            "net.seed" => self.net.seed = parse(key, v)?,
            "train.lr0" => self.train.lr0 = parse(key, v)?,
            "train.plateau_patience" => self.train.plateau_patience = parse(key, v)?,
            "train.plateau_factor" => self.train.plateau_factor = parse(key, v)?,
            "train.early_stop_patience" => self.train.early_stop_patience = parse(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.augment" => self.train.augment = parse_bool(key, v)?,
            "train.aug_prob" => self.train.aug_prob = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "loss.kind" => {
                let plusplus = self.loss.plusplus;
                self.loss = LossConfig::new(v.parse::<LossKind>()?).with_plusplus(plusplus);
            }
            "loss.plusplus" => self.loss.plusplus = parse_bool(key, v)?,
            "loss.gamma" => self.loss.gamma = parse(key, v)?,
            "loss.alpha" => self.loss.alpha = parse(key, v)?,
            "loss.beta" => self.loss.beta = parse(key, v)?,
            "loss.delta" => self.loss.delta = parse(key, v)?,
            "loss.lambda" => self.loss.lambda = parse(key, v)?,
            "loss.smooth" => self.loss.smooth = parse(key, v)?,
            "eval.threshold" => self.threshold = parse(key, v)?,
            "eval.seed" => self.bootstrap_seed = parse(key, v)?,
            "eval.hist_bins" => self.hist_bins = parse(key, v)?,
            "eval.checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "eval.overlay_count" => self.overlay_count = parse(key, v)?,
            "sweep.gammas" => self.gammas = parse_list(key, v)?,
            "sweep.thresholds" => self.thresholds = parse_list(key, v)?,
            "compare.losses" => {
                self.losses = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(parse_loss_spec)
                    .collect::<Result<_>>()?;
                if self.losses.is_empty() {
                    return Err(Error::config("`compare.losses` needs at least one loss"));
                }
            }
            "heatmap.input" => self.heatmap_input = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        let unit = 1usize << self.net.depth;
        if self.data.height % unit != 0 || self.data.width % unit != 0 {
            return Err(Error::config(format!(
                "data size {}x{} must be divisible by 2^net.depth = {unit}",
                self.data.height, self.data.width
            )));
        }
        for t in std::iter::once(&self.threshold).chain(&self.thresholds) {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(Error::config(format!("threshold {t} outside (0, 1)")));
            }
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::config(format!("sweep gamma {g} must be > 0")));
        }
        if self.hist_bins < 2 {
            return Err(Error::config("eval.hist_bins must be >= 2"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            pairs.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(pairs)
    }

    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                Self::parse_text(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        let mut cfg = Self::default();
        cfg.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }

    /// Every effective setting as `key = value` lines, in a form that
    /// [`ExperimentConfig::load`] reads back to an equal config.
    pub fn resolved(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let d = &self.data;
        let t = &self.train;
        let l = &self.loss;
        let entries: Vec<(&str, String)> = vec![
            ("data.kind", d.kind.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.fg_fraction", d.fg_fraction_target.to_string()),
            ("data.ambiguity_width", d.ambiguity_width.to_string()),
            ("data.noise_sigma", d.noise_sigma.to_string()),
            ("data.contrast", d.contrast.to_string()),
            ("data.count", d.count.to_string()),
            ("data.seed", d.seed.to_string()),
            ("data.dir", path(&self.data_dir)),
            ("split.seed", self.split_seed.to_string()),
            ("net.depth", self.net.depth.to_string()),
            ("net.base_channels", self.net.base_channels.to_string()),
            ("net.kernel", self.net.kernel.to_string()),
            ("net.seed", self.net.seed.to_string()),
            ("train.lr0", t.lr0.to_string()),
            ("train.plateau_patience", t.plateau_patience.to_string()),
            ("train.plateau_factor", t.plateau_factor.to_string()),
            ("train.early_stop_patience", t.early_stop_patience.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.augment", t.augment.to_string()),
            ("train.aug_prob", t.aug_prob.to_string()),
            ("train.seed", t.seed.to_string()),
            ("loss.kind", l.kind.to_string()),
            ("loss.plusplus", l.plusplus.to_string()),
            ("loss.gamma", l.gamma.to_string()),
            ("loss.alpha", l.alpha.to_string()),
            ("loss.beta", l.beta.to_string()),
            ("loss.delta", l.delta.to_string()),
            ("loss.lambda", l.lambda.to_string()),
            ("loss.smooth", l.smooth.to_string()),
            ("eval.threshold", self.threshold.to_string()),
            ("eval.seed", self.bootstrap_seed.to_string()),
            ("eval.hist_bins", self.hist_bins.to_string()),
            ("eval.checkpoint", path(&self.checkpoint)),
            ("eval.overlay_count", self.overlay_count.to_string()),
            ("sweep.gammas", join(&self.gammas)),
            ("sweep.thresholds", join(&self.thresholds)),
            ("compare.losses", self.losses.iter().map(loss_spec).collect::<Vec<_>>().join(",")),
            ("heatmap.input", path(&self.heatmap_input)),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
