//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push a gradient back to its inputs. A tape belongs to one
//! forward/backward pass; build a fresh one per step.

mod gradcheck;
mod norm;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use norm::{normalize, Center, NormSaved, Spread};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward_data, conv2d_backward_weight, conv2d_raw, transposed_conv2d_raw,
    ConvGeometry, Padding, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

/// Largest f64 strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

impl Activation {
    /// Element-wise map. Tanh and sigmoid saturate strictly inside their open
    /// ranges, so |tanh| < 1 and 0 < sigmoid < 1 hold even for huge inputs.
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh().clamp(-BELOW_ONE, BELOW_ONE),
            Activation::Sigmoid => (1.0 / (1.0 + (-v).exp())).clamp(f64::MIN_POSITIVE, BELOW_ONE),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(format!("unknown activation '{s}'")),
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeometry,
    },
    TransposedConv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    Normalize {
        x: Var,
        saved: NormSaved,
    },
    /// bias is [B, C] (per sample) or [C] (shared).
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    ScaleShift {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        b_trans: bool,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    MaskMul {
        x: Var,
        mask: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    Replicate {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Sum {
        x: Var,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    MeanSquaredToConst {
        x: Var,
        label: f64,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by tape variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn per_channel_index(bias_shape: &[usize], b: usize, c: usize, channels: usize) -> usize {
    if bias_shape.len() == 2 {
        b * channels + c
    } else {
        c
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeometry) -> Result<Var> {
        let out = conv2d_raw(self.value(x), self.value(w), geom)?;
        Ok(self.push(out, Op::Conv2d { x, w, geom }, &[x, w]))
    }

    pub fn transposed_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = transposed_conv2d_raw(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(out, Op::TransposedConv2d { x, w, stride, pad }, &[x, w]))
    }

    /// (x - center) / (spread + eps) per channel; see [`normalize`].
    pub fn normalize(&mut self, x: Var, center: Center, spread: Spread, eps: f64) -> Result<Var> {
        let (out, saved) = normalize(self.value(x), center, spread, eps)?;
        Ok(self.push(out, Op::Normalize { x, saved }, &[x]))
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, h, w) = xv.dims4()?;
        let bs = self.value(bias).shape().to_vec();
        let ok = bs == [b, c] || bs == [c];
        if !ok {
            return Err(Error::Shape(format!(
                "channel bias {bs:?} does not fit {:?}",
                xv.shape()
            )));
        }
        let bv = self.value(bias).data();
        let mut out = xv.clone();
        for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            let add = bv[per_channel_index(&bs, i / c, i % c, c)];
            plane.iter_mut().for_each(|v| *v += add);
        }
        Ok(self.push(out, Op::AddChannelBias { x, bias }, &[x, bias]))
    }

    pub fn scale_shift(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, c, h, w) = xv.dims4()?;
        let (g, bt) = (self.value(gamma), self.value(beta));
        if g.shape() != [c] || bt.shape() != [c] {
            return Err(Error::Dimension {
                expected: c,
                got: g.len(),
            });
        }
        let mut out = xv.clone();
        for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            let (s, t) = (g.data()[i % c], bt.data()[i % c]);
            plane.iter_mut().for_each(|v| *v = s * *v + t);
        }
        Ok(self.push(out, Op::ScaleShift { x, gamma, beta }, &[x, gamma, beta]))
    }

    /// [n, k] x [k, m], or [n, k] x [m, k]^T when `b_trans`.
    pub fn matmul(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (b0, b1) = self.value(b).dims2()?;
        let (bk, m) = if b_trans { (b1, b0) } else { (b0, b1) };
        if bk != k {
            return Err(Error::Dimension {
                expected: k,
                got: bk,
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = (0..k)
                    .map(|t| {
                        let bij = if b_trans { bv[j * k + t] } else { bv[t * m + j] };
                        av[i * k + t] * bij
                    })
                    .sum();
            }
        }
        let out = Tensor::new(&[n, m], out)?;
        Ok(self.push(out, Op::MatMul { a, b, b_trans }, &[a, b]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Act { x, kind }, &[x])
    }

    /// Element-wise product with a fixed mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::Dimension {
                expected: xv.len(),
                got: mask.len(),
            });
        }
        let out = Tensor::new(
            xv.shape(),
            xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        )?;
        Ok(self.push(out, Op::MaskMul { x, mask }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::Shape("empty concat".into()))?)
            .dims4()?;
        let (b, _, h, w) = first;
        let mut channels = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {:?} vs {:?}",
                    self.value(parts[0]).shape(),
                    self.value(p).shape()
                )));
            }
            channels += pc;
        }
        let mut data = Vec::with_capacity(b * channels * h * w);
        for s in 0..b {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * h * w;
                data.extend_from_slice(&t.data()[s * per..(s + 1) * per]);
            }
        }
        let out = Tensor::new(&[b, channels, h, w], data)?;
        Ok(self.push(
            out,
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// [B, S] codes to [B, S, H, W] constant planes.
    pub fn replicate(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (b, s) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * s * h * w);
        for &v in src {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let out = Tensor::new(&[b, s, h, w], data)?;
        Ok(self.push(out, Op::Replicate { x }, &[x]))
    }

    /// [B, C, H, W] to [B, C] spatial means.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).spatial_means()?;
        Ok(self.push(out, Op::GlobalAvgPool { x }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    /// mean |a - b|
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).sub(self.value(b))?;
        let out = Tensor::scalar(d.data().iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64);
        Ok(self.push(out, Op::MeanAbsDiff { a, b }, &[a, b]))
    }

    /// mean (x - label)^2
    pub fn mean_squared_to(&mut self, x: Var, label: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::scalar(
            xv.data().iter().map(|v| (v - label) * (v - label)).sum::<f64>() / xv.len() as f64,
        );
        self.push(out, Op::MeanSquaredToConst { x, label }, &[x])
    }

    /// Σ w_i · s_i over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::NonScalarLoss(t.shape().to_vec()));
            }
            total += w * t.data()[0];
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            &inputs,
        ))
    }

    /// Back-propagate from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (_, _, m, n) = xv.dims4()?;
                let (_, _, k, l) = wv.dims4()?;
                if self.wants(*x) {
                    let gx = conv2d_backward_data(g, wv, *geom, (m, n))?;
                    self.accumulate(grads, *x, gx)?;
                }
                if self.wants(*w) {
                    let gw = conv2d_backward_weight(xv, g, *geom, (k, l))?;
                    self.accumulate(grads, *w, gw)?;
                }
            }
            Op::TransposedConv2d { x, w, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (_, _, k, l) = wv.dims4()?;
                let geom = ConvGeometry::new(*stride, *pad, Padding::Zero);
                if self.wants(*x) {
                    let gx = conv2d_raw(g, wv, geom)?;
                    self.accumulate(grads, *x, gx)?;
                }
                if self.wants(*w) {
                    let gw = conv2d_backward_weight(g, xv, geom, (k, l))?;
                    self.accumulate(grads, *w, gw)?;
                }
            }
            Op::Normalize { x, saved } => {
                let gx = saved.backward(self.value(*x), g)?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::AddChannelBias { x, bias } => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.clone())?;
                }
                if self.wants(*bias) {
                    let (_, c, h, w) = g.dims4()?;
                    let bs = self.value(*bias).shape().to_vec();
                    let mut gb = Tensor::zeros(&bs);
                    for (i, plane) in g.data().chunks(h * w).enumerate() {
                        gb.data_mut()[per_channel_index(&bs, i / c, i % c, c)] +=
                            plane.iter().sum::<f64>();
                    }
                    self.accumulate(grads, *bias, gb)?;
                }
            }
            Op::ScaleShift { x, gamma, beta } => {
                let xv = self.value(*x);
                let (_, c, h, w) = xv.dims4()?;
                let gam = self.value(*gamma).data();
                let mut gx = g.clone();
                let mut gg = vec![0.0; c];
                let mut gbt = vec![0.0; c];
                for (i, (gp, xp)) in gx
                    .data_mut()
                    .chunks_mut(h * w)
                    .zip(xv.data().chunks(h * w))
                    .enumerate()
                {
                    let ch = i % c;
                    for (gv, xv) in gp.iter_mut().zip(xp) {
                        gg[ch] += *gv * xv;
                        gbt[ch] += *gv;
                        *gv *= gam[ch];
                    }
                }
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *gamma, Tensor::new(&[c], gg)?)?;
                self.accumulate(grads, *beta, Tensor::new(&[c], gbt)?)?;
            }
            Op::MatMul { a, b, b_trans } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.dims2()?;
                let m = g.shape()[1];
                let gd = g.data();
                let bij = |t: usize, j: usize| {
                    if *b_trans {
                        bv.data()[j * k + t]
                    } else {
                        bv.data()[t * m + j]
                    }
                };
                if self.wants(*a) {
                    let ga = Tensor::from_fn(&[n, k], |idx| {
                        let (i, t) = (idx / k, idx % k);
                        (0..m).map(|j| gd[i * m + j] * bij(t, j)).sum()
                    });
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for i in 0..n {
                        for t in 0..k {
                            let at = av.data()[i * k + t];
                            for j in 0..m {
                                let idx = if *b_trans { j * k + t } else { t * m + j };
                                gb.data_mut()[idx] += at * gd[i * m + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x);
                let gx = Tensor::new(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .zip(node.value.data())
                        .map(|((gv, &xi), &yi)| gv * kind.derivative(xi, yi))
                        .collect(),
                )?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::MaskMul { x, mask } => {
                let gx = Tensor::new(
                    g.shape(),
                    g.data().iter().zip(mask).map(|(a, m)| a * m).collect(),
                )?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y)?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y)?)?;
                }
            }
            Op::ConcatChannels { parts } => {
                let (b, _, h, w) = g.dims4()?;
                let mut offset = 0;
                let total = g.shape()[1] * h * w;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.wants(p) {
                        let per = pc * h * w;
                        let mut data = Vec::with_capacity(b * per);
                        for s in 0..b {
                            let start = s * total + offset;
                            data.extend_from_slice(&g.data()[start..start + per]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[b, pc, h, w], data)?)?;
                    }
                    offset += pc * h * w;
                }
            }
            Op::Replicate { x } => {
                let (b, c, h, w) = g.dims4()?;
                let sums = g.data().chunks(h * w).map(|p| p.iter().sum()).collect();
                self.accumulate(grads, *x, Tensor::new(&[b, c], sums)?)?;
            }
            Op::GlobalAvgPool { x } => {
                let (b, c, h, w) = self.value(*x).dims4()?;
                let scale = 1.0 / (h * w) as f64;
                let mut out = Vec::with_capacity(b * c * h * w);
                for &gv in g.data() {
                    out.extend(std::iter::repeat_n(gv * scale, h * w));
                }
                self.accumulate(grads, *x, Tensor::new(&[b, c, h, w], out)?)?;
            }
            Op::Sum { x } => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.data()[0]))?;
            }
            Op::MeanAbsDiff { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = g.data()[0] / av.len() as f64;
                let ga = av.zip_map(bv, |x, y| {
                    if x > y {
                        k
                    } else if x < y {
                        -k
                    } else {
                        0.0
                    }
                })?;
                if self.wants(*b) {
                    self.accumulate(grads, *b, ga.scale(-1.0))?;
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::MeanSquaredToConst { x, label } => {
                let xv = self.value(*x);
                let k = 2.0 * g.data()[0] / xv.len() as f64;
                self.accumulate(grads, *x, xv.map(|v| k * (v - label)))?;
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    let shape = self.value(v).shape().to_vec();
                    self.accumulate(grads, v, Tensor::full(&shape, w * g.data()[0]))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let w = tape.param(Tensor::new(&[3], vec![0.3, 0.1, 0.9]).unwrap());
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, -2.0, 0.5]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn bounded_activations() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        let t = Activation::Tanh.apply(100.0);
        assert!(t < 1.0 && 1.0 - t < 1e-9);
        assert!(Activation::Tanh.apply(-100.0) > -1.0);
        let s = Activation::Sigmoid.apply(1000.0);
        assert!(s < 1.0 && s > 0.0 && Activation::Sigmoid.apply(-1000.0) > 0.0);
    }

    #[test]
    fn activations_preserve_order() {
        let mut rng = Prng::new(12);
        for kind in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            for _ in 0..1000 {
                let a = 4.0 * rng.normal();
                let b = a + rng.uniform() * 3.0;
                assert!(kind.apply(a) <= kind.apply(b));
            }
        }
    }

    #[test]
    fn concat_then_split_gradients() {
        let mut rng = Prng::new(4);
        let mut tape = Tape::new();
        let a = tape.param(Tensor::randn(&[2, 1, 2, 2], 1.0, &mut rng));
        let b = tape.param(Tensor::randn(&[2, 2, 2, 2], 1.0, &mut rng));
        let cat = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 3, 2, 2]);
        assert_eq!(tape.value(cat).plane(1, 0), tape.value(a).plane(1, 0));
        assert_eq!(tape.value(cat).plane(1, 2), tape.value(b).plane(1, 1));
        let loss = tape.sum(cat);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(b).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
