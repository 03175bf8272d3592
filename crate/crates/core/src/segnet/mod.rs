//! A small U-Net style encoder/decoder producing two-class softmax maps.
//!
//! Each encoder level runs two `conv -> instance_norm -> relu` blocks and
//! halves the resolution; a bottleneck block runs at the lowest level; each
//! decoder level upsamples by nearest neighbour, concatenates the matching
//! encoder activation and runs two more blocks. A 1x1 convolution maps to
//! two channels followed by a channel softmax.

mod checkpoint;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            kernel: 3,
            input_channels: 1,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("net.depth must be >= 1"));
        }
        if self.depth > 8 {
            return Err(Error::config(format!("net.depth {} is unreasonably deep", self.depth)));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::config("channel counts must be >= 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("net.kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Checks that an `[input_channels, h, w]` image fits the network.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let unit = 1usize << self.depth;
        match shape {
            [c, h, w] if *c == self.input_channels => {
                if h % unit != 0 || w % unit != 0 || *h == 0 || *w == 0 {
                    Err(Error::shape(format!(
                        "image {h}x{w} is not divisible by 2^{} = {unit}",
                        self.depth
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::shape(format!(
                "expected [{}, H, W] image, got {shape:?}",
                self.input_channels
            ))),
        }
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Name and `(in, out, kernel)` of every convolution, in forward order.
    fn convs(&self) -> Vec<(String, usize, usize, usize)> {
        let k = self.kernel;
        let mut out = Vec::new();
        let mut block = |name: String, cin: usize, cout: usize| {
            out.push((format!("{name}.conv1"), cin, cout, k));
            out.push((format!("{name}.conv2"), cout, cout, k));
        };
        let mut cin = self.input_channels;
        for l in 0..self.depth {
            block(format!("enc{l}"), cin, self.width(l));
            cin = self.width(l);
        }
        block("mid".into(), cin, self.width(self.depth));
        for l in (0..self.depth).rev() {
            block(format!("dec{l}"), self.width(l + 1) + self.width(l), self.width(l));
        }
        out.push(("head".into(), self.width(0), 2, 1));
        out
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.convs()
            .iter()
            .map(|(name, cin, cout, k)| {
                let norm = if name == "head" { 0 } else { 2 * cout };
                cout * cin * k * k + cout + norm
            })
            .sum()
    }
}

/// Named network parameters, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Verifies that the names and shapes are exactly those of `cfg`.
    pub fn check_against(&self, cfg: &NetConfig) -> Result<()> {
        let expected = expected_shapes(cfg);
        if expected.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "parameter set has {} tensors, network needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::shape(format!("missing parameter `{name}`"))),
            }
        }
        Ok(())
    }

    /// Adds every parameter to `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let nodes = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let id = if trainable {
                    g.variable(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), id)
            })
            .collect();
        BoundParams { nodes }
    }
}

/// Graph nodes of a [`ParameterSet`] bound into one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of every bound parameter after `g.backward`.
    pub fn grads(&self, g: &Graph) -> ParameterSet {
        let tensors = self.nodes.iter().map(|(k, id)| (k.clone(), g.grad(*id))).collect();
        ParameterSet { tensors }
    }
}

fn expected_shapes(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (name, cin, cout, k) in cfg.convs() {
        out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
        out.push((format!("{name}.bias"), vec![cout]));
        if name != "head" {
            let norm = name.replace("conv", "norm");
            out.push((format!("{norm}.gain"), vec![cout]));
            out.push((format!("{norm}.bias"), vec![cout]));
        }
    }
    out
}

/// Xavier-uniform kernels, zero biases, unit norm gains; deterministic per
/// `cfg.seed`.
pub fn init_params(cfg: &NetConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParameterSet::new();
    for (name, cin, cout, k) in cfg.convs() {
        let bound = (6.0 / ((k * k * cin + k * k * cout) as f64)).sqrt();
        let n = cout * cin * k * k;
        let w = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        params.insert(format!("{name}.weight"), Tensor::new(vec![cout, cin, k, k], w)?);
        params.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
        if name != "head" {
            let norm = name.replace("conv", "norm");
            params.insert(format!("{norm}.gain"), Tensor::ones(&[cout]));
            params.insert(format!("{norm}.bias"), Tensor::zeros(&[cout]));
        }
    }
    Ok(params)
}

fn conv_block(g: &mut Graph, p: &BoundParams, name: &str, x: NodeId) -> Result<NodeId> {
    let mut h = x;
    for i in 1..=2 {
        h = conv_norm(g, p, &format!("{name}.conv{i}"), &format!("{name}.norm{i}"), h)?;
        h = g.relu(h);
    }
    Ok(h)
}

fn conv_norm(g: &mut Graph, p: &BoundParams, conv: &str, norm: &str, x: NodeId) -> Result<NodeId> {
    let y = g.conv2d(x, p.node(&format!("{conv}.weight"))?, p.node(&format!("{conv}.bias"))?)?;
    g.instance_norm(y, p.node(&format!("{norm}.gain"))?, p.node(&format!("{norm}.bias"))?)
}

/// Appends the network to `g` and returns the `[2, H, W]` probability node.
pub fn forward(g: &mut Graph, cfg: &NetConfig, params: &BoundParams, image: NodeId) -> Result<NodeId> {
    cfg.check_input(g.value(image).shape())?;
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut h = image;
    for l in 0..cfg.depth {
        let a = conv_block(g, params, &format!("enc{l}"), h)?;
        skips.push(a);
        h = g.downsample2(a)?;
    }
    h = conv_block(g, params, "mid", h)?;
    for l in (0..cfg.depth).rev() {
        let up = g.upsample2(h)?;
        let cat = g.concat_channels(up, skips[l])?;
        h = conv_block(g, params, &format!("dec{l}"), cat)?;
    }
    let logits = g.conv2d(h, params.node("head.weight")?, params.node("head.bias")?)?;
    g.softmax_channels(logits)
}

/// Foreground/background probabilities of one image without gradients.
pub fn predict(cfg: &NetConfig, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let out = forward(&mut g, cfg, &bound, x)?;
    Ok(g.value(out).clone())
}
