//! Heatmap and error-overlay rendering.

use crate::error::{Error, Result};
use crate::synthdata::RgbImage;
use crate::tensor::Tensor;

pub const FALSE_POSITIVE: [u8; 3] = [255, 0, 255];
pub const FALSE_NEGATIVE: [u8; 3] = [0, 255, 0];
pub const TRUE_POSITIVE: [u8; 3] = [255, 255, 255];
pub const TRUE_NEGATIVE: [u8; 3] = [0, 0, 0];

/// The 256-entry heatmap palette: entry `i` is
/// `(i, 0, 255 - i)`, a straight ramp from pure blue to pure red.
pub fn colormap() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let v = i as u8;
        *entry = [v, 0, 255 - v];
    }
    table
}

/// Palette index of a probability: `min(255, floor(256 s))`, so 0 maps to
/// the first entry, 1 to the last and 0.5 to entry 128.
pub fn colormap_index(s: f64) -> usize {
    ((s * 256.0).floor() as usize).min(255)
}

fn plane(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(format!("expected an [H, W] map, got {s:?}"))),
    }
}

/// Colours a probability map through [`colormap`].
pub fn render_heatmap(probs: &Tensor) -> Result<RgbImage> {
    let (height, width) = plane(probs)?;
    if let Some(v) = probs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("heatmap value {v} outside [0, 1]")));
    }
    let table = colormap();
    let pixels = probs.data().iter().map(|s| table[colormap_index(*s)]).collect();
    Ok(RgbImage { width, height, pixels })
}

/// Thresholded prediction against truth: false positives magenta, false
/// negatives green, true positives white, true negatives black.
pub fn render_overlay(probs: &Tensor, truth: &Tensor, threshold: f64) -> Result<RgbImage> {
    let (height, width) = plane(probs)?;
    if plane(truth)? != (height, width) {
        return Err(Error::shape("overlay truth and prediction sizes differ"));
    }
    let pixels = probs
        .data()
        .iter()
        .zip(truth.data())
        .map(|(s, y)| match (*s >= threshold, *y == 1.0) {
            (true, true) => TRUE_POSITIVE,
            (true, false) => FALSE_POSITIVE,
            (false, true) => FALSE_NEGATIVE,
            (false, false) => TRUE_NEGATIVE,
        })
        .collect();
    Ok(RgbImage { width, height, pixels })
}
