//! Image-shaped operations on `[C, H, W]` tensors.

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(format!(
            "{what} expects [C, H, W], got {:?}",
            t.shape()
        ))),
    }
}

/// Valid output range `lo..hi` along one axis of length `n` for kernel tap
/// `tap` with padding `pad`: positions whose source `pos + tap - pad` is in
/// bounds.
fn tap_range(n: usize, tap: usize, pad: usize) -> (usize, usize) {
    (pad.saturating_sub(tap), (n + pad).saturating_sub(tap).min(n))
}

struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvDims {
    fn pad(&self) -> usize {
        self.k / 2
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.k + ky) * self.k + kx
    }
}

impl Graph {
    /// Stride-1, zero "same"-padded 2-D cross-correlation plus bias.
    ///
    /// `input` is `[Cin, H, W]`, `kernel` is `[Cout, Cin, k, k]` with odd
    /// `k`, `bias` is `[Cout]`; the output is `[Cout, H, W]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, kt, bt) = (self.value(input), self.value(kernel), self.value(bias));
        let (cin, h, w) = chw(x, "conv2d input")?;
        let (cout, kcin, k) = match *kt.shape() {
            [co, ci, ky, kx] if ky == kx => (co, ci, ky),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d kernel must be [Cout, Cin, k, k], got {:?}",
                    kt.shape()
                )))
            }
        };
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernel size {k} must be odd")));
        }
        if bt.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{cout}], got {:?}",
                bt.shape()
            )));
        }
        let d = ConvDims { cin, cout, h, w, k };
        let (pad, plane) = (d.pad(), d.plane());
        let (src, weights) = (x.data(), kt.data());

        let mut out = vec![0.0; cout * plane];
        for co in 0..cout {
            let dst = &mut out[co * plane..(co + 1) * plane];
            dst.fill(bt.data()[co]);
            for ci in 0..cin {
                let chan = &src[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    let (y0, y1) = tap_range(h, ky, pad);
                    for kx in 0..k {
                        let (x0, x1) = tap_range(w, kx, pad);
                        let wv = weights[d.weight_index(co, ci, ky, kx)];
                        for y in y0..y1 {
                            let sy = y + ky - pad;
                            let drow = &mut dst[y * w + x0..y * w + x1];
                            let srow = &chan[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                            for (o, s) in drow.iter_mut().zip(srow) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![cout, h, w], out)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            value,
        ))
    }

    /// Per-channel normalization over the spatial extent:
    /// `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
    pub fn instance_norm(&mut self, input: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let (c, h, w) = chw(x, "instance_norm")?;
        let plane = h * w;
        if plane < 2 {
            return Err(Error::shape("instance_norm needs at least 2 pixels"));
        }
        let (gt, bt) = (self.value(gain), self.value(bias));
        if gt.shape() != [c] || bt.shape() != [c] {
            return Err(Error::shape(format!(
                "instance_norm gain/bias must be [{c}], got {:?} and {:?}",
                gt.shape(),
                bt.shape()
            )));
        }

        let mut normalized = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; x.numel()];
        for ch in 0..c {
            let span = ch * plane..(ch + 1) * plane;
            let vals = &x.data()[span.clone()];
            let mean = vals.iter().sum::<f64>() / plane as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let is = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            inv_std[ch] = is;
            let (gv, bv) = (gt.data()[ch], bt.data()[ch]);
            for ((n, o), v) in normalized[span.clone()]
                .iter_mut()
                .zip(&mut out[span])
                .zip(vals)
            {
                *n = (v - mean) * is;
                *o = gv * *n + bv;
            }
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(
            Op::InstanceNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            },
            value,
        ))
    }

    /// 2x2 average pooling; height and width must be even.
    pub fn downsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let (c, h, w) = chw(t, "downsample2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "downsample2 needs even height and width, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = t.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out[(ch * oh + y) * ow + xx] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::Downsample2(x), value))
    }

    /// Nearest-neighbour doubling of height and width.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let (c, h, w) = chw(t, "upsample2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = t.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::Upsample2(x), value))
    }

    /// Stacks the channels of `a` followed by those of `b`.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ca, ha, wa) = chw(ta, "concat_channels")?;
        let (cb, hb, wb) = chw(tb, "concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(format!(
                "concat_channels spatial mismatch {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        Ok(self.push(Op::Concat(a, b), value))
    }
}

pub(super) fn conv2d_backward(
    g: &Graph,
    input: NodeId,
    kernel: NodeId,
    bias: NodeId,
    gout: &[f64],
) -> Vec<(NodeId, Vec<f64>)> {
    let (x, kt) = (g.value(input), g.value(kernel));
    let s = kt.shape();
    let d = ConvDims {
        cout: s[0],
        cin: s[1],
        k: s[2],
        h: x.shape()[1],
        w: x.shape()[2],
    };
    let (pad, plane, w, k) = (d.pad(), d.plane(), d.w, d.k);
    let (src, weights) = (x.data(), kt.data());
    let want_input = g.requires_grad(input);

    let mut g_in = vec![0.0; if want_input { src.len() } else { 0 }];
    let mut g_k = vec![0.0; weights.len()];
    let mut g_b = vec![0.0; d.cout];

    for co in 0..d.cout {
        let go = &gout[co * plane..(co + 1) * plane];
        g_b[co] = go.iter().sum();
        for ci in 0..d.cin {
            let chan = &src[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = tap_range(d.h, ky, pad);
                for kx in 0..k {
                    let (x0, x1) = tap_range(w, kx, pad);
                    let wi = d.weight_index(co, ci, ky, kx);
                    let wv = weights[wi];
                    let len = x1 - x0;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let grow = &go[y * w + x0..y * w + x1];
                        let off = (y + ky - pad) * w + x0 + kx - pad;
                        let srow = &chan[off..off + len];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        if want_input {
                            let lo = ci * plane + off;
                            for (gi, gv) in g_in[lo..lo + len].iter_mut().zip(grow) {
                                *gi += wv * gv;
                            }
                        }
                    }
                    g_k[wi] += acc;
                }
            }
        }
    }
    let mut grads = vec![(kernel, g_k), (bias, g_b)];
    if want_input {
        grads.push((input, g_in));
    }
    grads
}

pub(super) fn instance_norm_backward(
    g: &Graph,
    input: NodeId,
    gain: NodeId,
    bias: NodeId,
    normalized: &[f64],
    inv_std: &[f64],
    gout: &[f64],
) -> Vec<(NodeId, Vec<f64>)> {
    let gains = g.value(gain).data();
    let c = gains.len();
    let plane = normalized.len() / c;
    let mut g_in = vec![0.0; normalized.len()];
    let mut g_gain = vec![0.0; c];
    let mut g_bias = vec![0.0; c];
    for ch in 0..c {
        let span = ch * plane..(ch + 1) * plane;
        let (xh, go) = (&normalized[span.clone()], &gout[span.clone()]);
        g_bias[ch] = go.iter().sum();
        g_gain[ch] = go.iter().zip(xh).map(|(a, b)| a * b).sum();
        // dL/dxhat = gout * gain
        let mean_d = gains[ch] * g_bias[ch] / plane as f64;
        let mean_dx = gains[ch] * g_gain[ch] / plane as f64;
        for ((gi, gv), xv) in g_in[span].iter_mut().zip(go).zip(xh) {
            *gi = inv_std[ch] * (gains[ch] * gv - mean_d - xv * mean_dx);
        }
    }
    vec![(input, g_in), (gain, g_gain), (bias, g_bias)]
}

pub(super) fn downsample2_backward(input: &Tensor, gout: &[f64]) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut g = vec![0.0; input.numel()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                g[(ch * h + y) * w + x] = 0.25 * gout[(ch * oh + y / 2) * ow + x / 2];
            }
        }
    }
    g
}

pub(super) fn upsample2_backward(input: &Tensor, gout: &[f64]) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![0.0; input.numel()];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                g[(ch * h + y / 2) * w + x / 2] += gout[(ch * oh + y) * ow + x];
            }
        }
    }
    g
}
