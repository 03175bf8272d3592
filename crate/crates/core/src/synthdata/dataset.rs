//! On-disk dataset layout: `images/NNNN.pgm`, `masks/NNNN.pgm` and a
//! `manifest.txt` with one `index split fg_fraction` line per sample.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::io::{read_pgm, write_pgm};
use super::{Sample, SampleMeta, Split, SynthKind};
use crate::error::{Error, Result};

/// A sample read back from disk with the split it was assigned to.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub sample: Sample,
    pub split: String,
}

fn file_name(index: usize) -> String {
    format!("{index:04}.pgm")
}

/// Writes every sample of `split` under `root`. Images are quantised to
/// 8 bits by the PGM encoding.
pub fn write_dataset(root: &Path, split: &Split) -> Result<()> {
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let mut manifest = String::new();
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for s in part {
            let file = file_name(s.meta.index);
            write_pgm(root.join("images").join(&file), &s.image)?;
            write_pgm(root.join("masks").join(&file), &s.mask)?;
            let _ = writeln!(manifest, "{} {name} {}", s.meta.index, s.meta.fg_fraction);
        }
    }
    fs::write(root.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], in manifest order, and
/// regroups it into its splits.
pub fn read_dataset(root: &Path, kind: SynthKind) -> Result<(Split, Vec<DatasetEntry>)> {
    let manifest = fs::read_to_string(root.join("manifest.txt"))?;
    let mut entries = Vec::new();
    let mut split = Split::default();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("manifest line {}: `{line}`", lineno + 1));
        let mut fields = line.split_whitespace();
        let index: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        let part = fields.next().ok_or_else(bad)?.to_owned();
        let fg_fraction: f64 = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        let file = file_name(index);
        let image = read_pgm(root.join("images").join(&file))?;
        let mask = read_pgm(root.join("masks").join(&file))?;
        if let Some(v) = mask.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::invalid(format!("mask {file} holds non-binary value {v}")));
        }
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let sample = Sample {
            image: image.reshape(vec![1, h, w])?,
            mask,
            meta: SampleMeta {
                index,
                kind,
                fg_fraction,
            },
        };
        match part.as_str() {
            "train" => split.train.push(sample.clone()),
            "val" => split.val.push(sample.clone()),
            "test" => split.test.push(sample.clone()),
            _ => return Err(bad()),
        }
        entries.push(DatasetEntry { sample, split: part });
    }
    Ok((split, entries))
}
