use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::tensor::{strides, Tensor};

/// Lower clamp applied to the base of a fractional power in its derivative.
pub const POW_FLOOR: f64 = 1e-12;
/// Clamp range of the logarithm argument.
pub const LOG_FLOOR: f64 = 1e-7;
pub const LOG_CEIL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

fn is_integral(exponent: f64) -> bool {
    exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64
}

impl Graph {
    /// Elementwise `a op b`. Shapes must match, or one side must hold a
    /// single element, which is broadcast.
    pub fn binary(&mut self, kind: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (shape, data): (&[usize], Vec<f64>) = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data());
            (va.shape(), data.map(|(x, y)| kind.apply(*x, *y)).collect())
        } else if vb.numel() == 1 {
            let y = vb.data()[0];
            (va.shape(), va.data().iter().map(|x| kind.apply(*x, y)).collect())
        } else if va.numel() == 1 {
            let x = va.data()[0];
            (vb.shape(), vb.data().iter().map(|y| kind.apply(x, *y)).collect())
        } else {
            return Err(Error::shape(format!(
                "{kind:?} of {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        };
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(Op::Binary { kind, a, b }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { input: x, scale }, value)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 0.0)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.affine(x, factor, 0.0)
    }

    pub fn shift(&mut self, x: NodeId, offset: f64) -> NodeId {
        self.affine(x, 1.0, offset)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 1.0)
    }

    /// `x^exponent` for a constant exponent.
    ///
    /// Integral exponents use repeated multiplication and accept any base.
    /// Fractional exponents need a non-negative base; zero maps to zero, and
    /// the derivative evaluates the base no lower than [`POW_FLOOR`] so it
    /// stays finite where the exponent is below one.
    pub fn pow(&mut self, x: NodeId, exponent: f64) -> Result<NodeId> {
        let v = self.value(x);
        let value = if is_integral(exponent) {
            let e = exponent as i32;
            v.map(|b| b.powi(e))
        } else {
            if let Some(bad) = v.data().iter().find(|b| !(**b >= 0.0)) {
                return Err(Error::Domain(format!(
                    "fractional power {exponent} of negative base {bad}"
                )));
            }
            v.map(|b| if b == 0.0 { 0.0 } else { b.powf(exponent) })
        };
        Ok(self.push(Op::Pow { input: x, exponent }, value))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), value)
    }

    /// Natural log of the argument clamped to `[LOG_FLOOR, LOG_CEIL]`.
    /// Negative or NaN arguments are rejected rather than clamped.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if let Some(bad) = v.data().iter().find(|b| !(**b >= 0.0)) {
            return Err(Error::Domain(format!("log of {bad}")));
        }
        let value = v.map(|b| b.clamp(LOG_FLOOR, LOG_CEIL).ln());
        Ok(self.push(Op::Log(x), value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    /// Sum over `axes`; the reduced axes are removed from the shape.
    pub fn reduce_sum(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.reduce(x, axes, false)
    }

    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.reduce(x, axes, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let all: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce(x, &all, false).expect("all axes are valid")
    }

    /// Mean of every element, as a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let all: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce(x, &all, true).expect("all axes are valid")
    }

    fn reduce(&mut self, x: NodeId, axes: &[usize], mean: bool) -> Result<NodeId> {
        let v = self.value(x);
        let shape = v.shape();
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        for &axis in axes {
            if axis >= rank {
                return Err(Error::Axis { axis, rank });
            }
            reduced[axis] = true;
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|&d| !reduced[d])
            .map(|d| shape[d])
            .collect();
        let out_strides = strides(&out_shape);
        // Stride of each input axis within the output (0 when reduced).
        let mut axis_out_stride = vec![0; rank];
        let mut k = 0;
        for d in 0..rank {
            if !reduced[d] {
                axis_out_stride[d] = out_strides[k];
                k += 1;
            }
        }

        let count: usize = (0..rank).filter(|&d| reduced[d]).map(|d| shape[d]).product();
        let weight = if mean { 1.0 / count as f64 } else { 1.0 };
        let out_len: usize = out_shape.iter().product();
        let mut index_map = Vec::with_capacity(v.numel());
        let mut coord = vec![0usize; rank];
        for _ in 0..v.numel() {
            index_map.push(coord.iter().zip(&axis_out_stride).map(|(c, s)| c * s).sum());
            for d in (0..rank).rev() {
                coord[d] += 1;
                if coord[d] < shape[d] {
                    break;
                }
                coord[d] = 0;
            }
        }

        let mut out = vec![0.0; out_len];
        for (val, &o) in v.data().iter().zip(&index_map) {
            out[o] += val;
        }
        if mean {
            out.iter_mut().for_each(|o| *o *= weight);
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            Op::Reduce {
                input: x,
                index_map,
                weight,
                mean,
            },
            value,
        ))
    }

    /// Slice `index` of the leading axis.
    pub fn channel(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let value = self.value(x).channel(index)?;
        Ok(self.push(Op::Channel { input: x, index }, value))
    }

    /// Softmax across the leading (channel) axis, independently for every
    /// trailing position. Needs at least two channels.
    pub fn softmax_channels(&mut self, logits: NodeId) -> Result<NodeId> {
        let v = self.value(logits);
        let channels = v.shape().first().copied().unwrap_or(0);
        if channels < 2 {
            return Err(Error::shape(format!(
                "softmax needs at least 2 channels, shape is {:?}",
                v.shape()
            )));
        }
        let plane = v.numel() / channels;
        let x = v.data();
        let mut out = vec![0.0; x.len()];
        for j in 0..plane {
            let max = (0..channels)
                .map(|c| x[c * plane + j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for c in 0..channels {
                let e = (x[c * plane + j] - max).exp();
                out[c * plane + j] = e;
                total += e;
            }
            for c in 0..channels {
                out[c * plane + j] /= total;
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax(logits), value))
    }
}

pub(super) fn binary_backward(
    g: &Graph,
    kind: BinaryOp,
    a: NodeId,
    b: NodeId,
    gout: &[f64],
) -> Vec<(NodeId, Vec<f64>)> {
    let (va, vb) = (g.value(a), g.value(b));
    let n = gout.len();
    let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };

    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    for i in 0..n {
        let (x, y) = (at(va, i), at(vb, i));
        let (da, db) = match kind {
            BinaryOp::Add => (1.0, 1.0),
            BinaryOp::Sub => (1.0, -1.0),
            BinaryOp::Mul => (y, x),
            BinaryOp::Div => (1.0 / y, -x / (y * y)),
        };
        ga[i] = gout[i] * da;
        gb[i] = gout[i] * db;
    }
    let fold = |grad: Vec<f64>, t: &Tensor| {
        if t.numel() == 1 && n != 1 {
            vec![grad.iter().sum()]
        } else {
            grad
        }
    };
    vec![(a, fold(ga, va)), (b, fold(gb, vb))]
}

pub(super) fn pow_backward(base: &Tensor, exponent: f64, gout: &[f64]) -> Vec<f64> {
    let integral = is_integral(exponent);
    gout.iter()
        .zip(base.data())
        .map(|(g, &b)| {
            let d = if exponent == 0.0 {
                0.0
            } else if integral {
                exponent * b.powi(exponent as i32 - 1)
            } else {
                exponent * b.max(POW_FLOOR).powf(exponent - 1.0)
            };
            g * d
        })
        .collect()
}

pub(super) fn log_backward(arg: &Tensor, gout: &[f64]) -> Vec<f64> {
    gout.iter()
        .zip(arg.data())
        .map(|(g, &x)| {
            if (LOG_FLOOR..=LOG_CEIL).contains(&x) {
                g / x
            } else {
                0.0
            }
        })
        .collect()
}

pub(super) fn softmax_backward(out: &Tensor, gout: &[f64]) -> Vec<f64> {
    let channels = out.shape()[0];
    let plane = out.numel() / channels;
    let y = out.data();
    let mut gin = vec![0.0; y.len()];
    for j in 0..plane {
        let dot: f64 = (0..channels)
            .map(|c| y[c * plane + j] * gout[c * plane + j])
            .sum();
        for c in 0..channels {
            let k = c * plane + j;
            gin[k] = y[k] * (gout[k] - dot);
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, v: &[f64]) -> NodeId {
        g.variable(Tensor::from_vec(v.to_vec()))
    }

    #[test]
    fn pow_squares() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[0.3, 0.2]);
        let p = g.pow(x, 2.0).unwrap();
        let got = g.value(p).data();
        assert!((got[0] - 0.09).abs() < 1e-15 && (got[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn pow_exponent_one_is_exact_identity() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[0.0, 0.123456789, 0.7]);
        let p = g.pow(x, 1.0).unwrap();
        assert_eq!(g.value(p), g.value(x));
    }

    #[test]
    fn fractional_pow_of_zero_has_finite_gradient() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[0.0, 0.25]);
        let p = g.pow(x, 0.5).unwrap();
        assert_eq!(g.value(p).data(), &[0.0, 0.5]);
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(x).all_finite());
        assert!((g.grad(x).data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fractional_pow_rejects_negative_base() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[-0.5]);
        assert!(matches!(g.pow(x, 0.5), Err(Error::Domain(_))));
        assert!(g.pow(x, 2.0).is_ok());
    }

    #[test]
    fn log_of_one_is_zero_and_clamps_small_values() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1.0, 0.0]);
        let l = g.log(x).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
        assert!((g.value(l).data()[1] - LOG_FLOOR.ln()).abs() < 1e-12);
        let bad = leaf(&mut g, &[-1.0]);
        assert!(g.log(bad).is_err());
    }

    #[test]
    fn mul_backward_with_seed_ones() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[0.8, 0.3]);
        let b = g.constant(Tensor::from_vec(vec![1.0, 0.0]));
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[0.8, 0.0]);
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1.0, 2.0]);
        let b = leaf(&mut g, &[1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn scalar_broadcast_folds_gradient() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1.0, 2.0, 3.0]);
        let s = g.variable(Tensor::scalar(2.0));
        let m = g.mul(s, a).unwrap();
        assert_eq!(g.value(m).shape(), &[3]);
        let r = g.sum(m);
        g.backward(r).unwrap();
        assert_eq!(g.grad(s).data(), &[6.0]);
        assert_eq!(g.grad(a).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[0.8, 0.3]);
        let s = g.sum(a);
        assert!((g.value(s).item().unwrap() - 1.1).abs() < 1e-15);

        let m = g.variable(Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let mean = g.reduce_mean(m, &[0, 1]).unwrap();
        assert_eq!(g.value(mean).item().unwrap(), 4.0);

        let rows = g.reduce_sum(m, &[1]).unwrap();
        assert_eq!(g.value(rows).data(), &[4.0, 12.0]);
        let cols = g.reduce_sum(m, &[0]).unwrap();
        assert_eq!(g.value(cols).data(), &[6.0, 10.0]);

        assert!(matches!(
            g.reduce_sum(m, &[2]),
            Err(Error::Axis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn sum_backward_is_all_ones_and_mean_divides() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap());
        let s = g.sum(a);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0; 6]);

        let mut g = Graph::new();
        let a = g.variable(Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap());
        let cols = g.reduce_mean(a, &[1]).unwrap();
        let s = g.sum(cols);
        g.backward(s).unwrap();
        assert!(g.grad(a).data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_values() {
        let mut g = Graph::new();
        let z = g.variable(Tensor::new(vec![2, 1, 2], vec![0.0, 2f64.ln(), 0.0, 0.0]).unwrap());
        let p = g.softmax_channels(z).unwrap();
        let v = g.value(p).data();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[2] - 0.5).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15 && (v[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_needs_two_channels() {
        let mut g = Graph::new();
        let z = g.variable(Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap());
        assert!(g.softmax_channels(z).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut g = Graph::new();
        let z = g.variable(Tensor::new(vec![2, 1], vec![1000.0, -1000.0]).unwrap());
        let p = g.softmax_channels(z).unwrap();
        assert!(g.value(p).all_finite());
        assert_eq!(g.value(p).data(), &[1.0, 0.0]);
    }
}
