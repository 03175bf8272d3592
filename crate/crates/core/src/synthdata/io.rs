//! Binary PGM (P5), PPM (P6) and grayscale PFM (Pf) readers and writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit RGB pixels in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

/// Header tokenizer for the netpbm family: whitespace separated fields with
/// `#` comments running to end of line.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start, format!("{what} is not ASCII")))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let at = self.pos;
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| Error::format(at, format!("bad {what} `{tok}`")))
    }

    /// Consumes the single whitespace byte that ends every header.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::format(self.pos, "header not terminated by whitespace")),
        }
    }
}

fn plane(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(format!("expected an [H, W] or [1, H, W] image, got {s:?}"))),
    }
}

fn netpbm_header(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize, usize)> {
    let mut h = Header { bytes, pos: 0 };
    let m = h.token("magic")?;
    if m != magic {
        return Err(Error::format(0, format!("expected magic {magic}, found `{m}`")));
    }
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let at = h.pos;
    let maxval: usize = h.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(3, "zero image dimension"));
    }
    let start = h.end()?;
    Ok((width, height, maxval, start))
}

fn payload<'a>(bytes: &'a [u8], start: usize, dims: &[usize]) -> Result<&'a [u8]> {
    let len = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d));
    match len.and_then(|len| start.checked_add(len)) {
        Some(end) if end <= bytes.len() => Ok(&bytes[start..end]),
        _ => Err(Error::format(bytes.len(), format!("truncated payload for dimensions {dims:?}"))),
    }
}

/// Parses a binary PGM into an `[H, W]` tensor with values `v / maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let (w, h, maxval, start) = netpbm_header(bytes, "P5")?;
    let data = payload(bytes, start, &[w, h])?
        .iter()
        .map(|b| f64::from(*b) / maxval as f64)
        .collect();
    Tensor::new(vec![h, w], data)
}

/// 8-bit P5 encoding of values in [0, 1], rounded to the nearest level.
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = plane(t)?;
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("PGM value {v} outside [0, 1]")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|v| (v * 255.0).round() as u8));
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(t)?)?;
    Ok(())
}

/// Parses a grayscale PFM into an `[H, W]` tensor. Rows are stored bottom
/// to top; a negative scale means little-endian samples.
pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor> {
    let mut hd = Header { bytes, pos: 0 };
    let m = hd.token("magic")?;
    if m != "Pf" {
        return Err(Error::format(0, format!("expected magic Pf, found `{m}`")));
    }
    let w: usize = hd.number("width")?;
    let h: usize = hd.number("height")?;
    let at = hd.pos;
    let scale: f64 = hd.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(at, "scale must be non-zero"));
    }
    let start = hd.end()?;
    let raw = payload(bytes, start, &[w, h, 4])?;
    let little = scale < 0.0;
    let mut data = vec![0.0; w * h];
    for (i, b) in raw.chunks_exact(4).enumerate() {
        let b: [u8; 4] = b.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, c) = (i / w, i % w);
        data[(h - 1 - file_row) * w + c] = f64::from(v);
    }
    Tensor::new(vec![h, w], data)
}

/// Little-endian PFM encoding. Values are stored as `f32`.
pub fn encode_pfm(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = plane(t)?;
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in t.data().chunks(w).rev() {
        for v in row {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pfm(&fs::read(path)?)
}

pub fn write_pfm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_pfm(t)?)?;
    Ok(())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (width, height, maxval, start) = netpbm_header(bytes, "P6")?;
    if maxval != 255 {
        return Err(Error::format(0, "only 8-bit PPM is supported"));
    }
    let pixels = payload(bytes, start, &[width, height, 3])?
        .chunks_exact(3)
        .map(|p| [p[0], p[1], p[2]])
        .collect();
    Ok(RgbImage { width, height, pixels })
}

pub fn encode_ppm(img: &RgbImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::shape(format!(
            "{} pixels for a {}x{} image",
            img.pixels.len(),
            img.width,
            img.height
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.write_all(img.pixels.as_flattened())?;
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)?)?;
    Ok(())
}
