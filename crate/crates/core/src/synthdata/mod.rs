//! Seeded generator of class-imbalanced binary segmentation images.
//!
//! Masks are thin random-walk "vessels" or small elliptical "blobs". Images
//! are the mask blurred by a Gaussian, scaled by a contrast factor and
//! corrupted with Gaussian noise, so pixels near object boundaries carry
//! genuinely ambiguous intensities.

mod dataset;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dataset::{read_dataset, write_dataset, DatasetEntry};
pub use io::{
    decode_pfm, decode_pgm, decode_ppm, encode_pfm, encode_pgm, encode_ppm, read_pfm, read_pgm,
    read_ppm, write_pfm, write_pgm, write_ppm, RgbImage,
};

/// Pixel count of the smallest blob (both radii 2).
const MIN_BLOB_AREA: usize = 13;
const BLOB_RADII: (f64, f64) = (2.0, 6.0);
/// Blobs stop once the mask holds this share of the target, and are
/// rejected if they would push it past the upper share.
const BLOB_ACCEPT: (f64, f64) = (0.9, 1.3);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Vessels,
    Blobs,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Vessels => "vessels",
            SynthKind::Blobs => "blobs",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "vessels" => Ok(SynthKind::Vessels),
            "blobs" => Ok(SynthKind::Blobs),
            other => Err(Error::config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub height: usize,
    pub width: usize,
    pub fg_fraction_target: f64,
    /// Gaussian blur sigma in pixels.
    pub ambiguity_width: f64,
    pub noise_sigma: f64,
    pub contrast: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::Vessels,
            height: 64,
            width: 64,
            fg_fraction_target: 0.04,
            ambiguity_width: 1.5,
            noise_sigma: 0.05,
            contrast: 1.0,
            count: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::config(format!(
                "data size {}x{} must be at least 8x8",
                self.height, self.width
            )));
        }
        if !(self.fg_fraction_target > 0.0 && self.fg_fraction_target < 0.5) {
            return Err(Error::config(format!(
                "data.fg_fraction = {} must lie in (0, 0.5)",
                self.fg_fraction_target
            )));
        }
        for (name, v) in [
            ("ambiguity_width", self.ambiguity_width),
            ("noise_sigma", self.noise_sigma),
            ("contrast", self.contrast),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("data.{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    fn target_pixels(&self) -> usize {
        ((self.fg_fraction_target * (self.height * self.width) as f64).round() as usize).max(1)
    }

    /// Upper bound on the connected components of a blob mask: every
    /// component contains at least one whole ellipse.
    pub fn max_blob_components(&self) -> usize {
        (BLOB_ACCEPT.1 * self.target_pixels() as f64 / MIN_BLOB_AREA as f64).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub index: usize,
    pub kind: SynthKind,
    pub fg_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[1, H, W]` intensities in [0, 1].
    pub image: Tensor,
    /// `[H, W]` binary foreground mask.
    pub mask: Tensor,
    pub meta: SampleMeta,
}

/// Generates `cfg.count` samples. Sample `i` depends only on `(cfg, i)`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| generate_one(cfg, i)).collect()
}

pub fn generate_one(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut mask = vec![false; cfg.height * cfg.width];
    match cfg.kind {
        SynthKind::Vessels => draw_vessels(cfg, &mut mask, &mut rng)?,
        SynthKind::Blobs => draw_blobs(cfg, &mut mask, &mut rng)?,
    }
    let mask = Tensor::new(
        vec![cfg.height, cfg.width],
        mask.iter().map(|b| f64::from(u8::from(*b))).collect(),
    )?;
    let blurred = gaussian_blur(&mask, cfg.ambiguity_width);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let image: Vec<f64> = blurred
        .data()
        .iter()
        .map(|v| {
            let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (cfg.contrast * v + n).clamp(0.0, 1.0)
        })
        .collect();
    let fg_fraction = mask.sum() / mask.numel() as f64;
    Ok(Sample {
        image: Tensor::new(vec![1, cfg.height, cfg.width], image)?,
        mask,
        meta: SampleMeta {
            index,
            kind: cfg.kind,
            fg_fraction,
        },
    })
}

/// Grows random-walk polylines of width 1 or 2 until the target foreground
/// count is reached.
fn draw_vessels(cfg: &SynthConfig, mask: &mut [bool], rng: &mut ChaCha8Rng) -> Result<()> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let target = cfg.target_pixels();
    let mut count = 0;
    let step_budget = 50 * cfg.height * cfg.width;
    let mut steps = 0;
    while count < target {
        let (mut y, mut x) = (rng.gen_range(0.0..h), rng.gen_range(0.0..w));
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let thick = rng.gen_bool(0.5);
        let length = rng.gen_range(20..80);
        for _ in 0..length {
            steps += 1;
            if steps > step_budget {
                return Err(Error::invalid(format!(
                    "could not reach foreground fraction {}",
                    cfg.fg_fraction_target
                )));
            }
            let (r, c) = (y.floor() as isize, x.floor() as isize);
            let cells: &[(isize, isize)] = if thick {
                &[(0, 0), (0, 1), (1, 0), (1, 1)]
            } else {
                &[(0, 0)]
            };
            for (dr, dc) in cells {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < cfg.height && (cc as usize) < cfg.width {
                    let i = rr as usize * cfg.width + cc as usize;
                    if !mask[i] {
                        mask[i] = true;
                        count += 1;
                    }
                }
            }
            if count >= target {
                break;
            }
            heading += rng.gen_range(-0.35..0.35);
            y += heading.sin();
            x += heading.cos();
            if !(0.0..h).contains(&y) || !(0.0..w).contains(&x) {
                break;
            }
        }
    }
    Ok(())
}

/// Adds axis-aligned ellipses, fully inside the image, until the mask holds
/// between 0.9 and 1.3 times the target count.
fn draw_blobs(cfg: &SynthConfig, mask: &mut [bool], rng: &mut ChaCha8Rng) -> Result<()> {
    let target = cfg.target_pixels() as f64;
    let (lo, hi) = (BLOB_ACCEPT.0 * target, BLOB_ACCEPT.1 * target);
    let mut count = 0usize;
    for _ in 0..10_000 {
        if count as f64 >= lo {
            return Ok(());
        }
        let ry = rng.gen_range(BLOB_RADII.0..=BLOB_RADII.1);
        let rx = rng.gen_range(BLOB_RADII.0..=BLOB_RADII.1);
        let (my, mx) = (ry.ceil() as usize, rx.ceil() as usize);
        if 2 * my >= cfg.height || 2 * mx >= cfg.width {
            continue;
        }
        let cy = rng.gen_range(my..cfg.height - my);
        let cx = rng.gen_range(mx..cfg.width - mx);
        let mut added = Vec::new();
        for r in cy - my..=cy + my {
            for c in cx - mx..=cx + mx {
                let dy = (r as f64 - cy as f64) / ry;
                let dx = (c as f64 - cx as f64) / rx;
                let i = r * cfg.width + c;
                if dy * dy + dx * dx <= 1.0 && !mask[i] {
                    added.push(i);
                }
            }
        }
        if (count + added.len()) as f64 > hi {
            continue;
        }
        count += added.len();
        for i in added {
            mask[i] = true;
        }
    }
    if count as f64 >= 0.5 * target {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "could not place blobs for foreground fraction {}",
            cfg.fg_fraction_target
        )))
    }
}

/// Separable Gaussian blur of an `[H, W]` tensor with edge clamping;
/// `sigma = 0` returns the input.
pub fn gaussian_blur(t: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return t.clone();
    }
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let src = t.data();
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            rows[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * src[r * w + clamp(c as isize + j as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * rows[clamp(r as isize + j as isize - radius, h) * w + c])
                .sum();
        }
    }
    Tensor::new(vec![h, w], out).expect("shape preserved")
}

/// Number of 4-connected foreground components of an `[H, W]` mask.
pub fn count_components(mask: &Tensor) -> usize {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let mut seen = vec![false; h * w];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data()[start] == 0.0 {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && mask.data()[j] != 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
    }
    components
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.64, 0.16, 0.20);

/// Sizes of the train/val/test parts of `n` items: train and validation
/// are rounded, test takes the rest.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let train = (a * n as f64).round() as usize;
    let val = (b * n as f64).round() as usize;
    if train == 0 || val == 0 || train + val >= n {
        return Err(Error::invalid(format!("{n} samples are too few to split")));
    }
    Ok((train, val, n - train - val))
}

/// Seeded shuffle followed by a contiguous train/val/test partition.
pub fn split(samples: &[Sample], fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (n_train, n_val, _) = split_sizes(samples.len(), fractions)?;
    let order = split_order(samples.len(), seed);
    let pick = |range: std::ops::Range<usize>| -> Vec<Sample> {
        order[range].iter().map(|&i| samples[i].clone()).collect()
    };
    Ok(Split {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..samples.len()),
    })
}

fn split_order(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}
