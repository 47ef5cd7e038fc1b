use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KernelBank, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zero,
    Reflection,
}

impl std::str::FromStr for Padding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zero" | "zp" => Ok(Padding::Zero),
            "reflection" | "reflect" | "rp" => Ok(Padding::Reflection),
            _ => Err(format!("unknown padding '{s}' (zero | reflection)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize, padding: Padding) -> Self {
        Self {
            stride,
            pad,
            padding,
        }
    }
}

pub fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    let padded = n + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "kernel {k} does not fit padded extent {padded}"
        )));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::Shape(format!(
            "stride {stride} does not divide {padded} - {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

pub fn transposed_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || n == 0 {
        return Err(Error::Shape("stride and extent must be positive".into()));
    }
    let full = (n - 1) * stride + k;
    if full <= 2 * pad {
        return Err(Error::Shape(format!(
            "transposed output {full} fully cropped by pad {pad}"
        )));
    }
    Ok(full - 2 * pad)
}

/// Index maps from output/tap coordinates to source rows and columns.
struct Plan {
    q: usize,
    m: usize,
    n: usize,
    k: usize,
    l: usize,
    om: usize,
    on: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

fn source_index(i: isize, n: usize, padding: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflection => {
            let last = n as isize - 1;
            let r = if i < 0 { -i } else { 2 * last - i };
            debug_assert!((0..n as isize).contains(&r));
            Some(r as usize)
        }
    }
}

impl Plan {
    fn new(q: usize, m: usize, n: usize, k: usize, l: usize, g: ConvGeometry) -> Result<Self> {
        if g.padding == Padding::Reflection && (g.pad >= m || g.pad >= n) {
            return Err(Error::ReflectionPad {
                pad: g.pad,
                height: m,
                width: n,
            });
        }
        let om = conv_out_extent(m, k, g.stride, g.pad)?;
        let on = conv_out_extent(n, l, g.stride, g.pad)?;
        let axis = |taps: usize, out: usize, extent: usize| {
            let mut map = Vec::with_capacity(taps * out);
            for t in 0..taps {
                for o in 0..out {
                    let i = (o * g.stride + t) as isize - g.pad as isize;
                    map.push(source_index(i, extent, g.padding));
                }
            }
            map
        };
        Ok(Self {
            q,
            m,
            n,
            k,
            l,
            om,
            on,
            rows: axis(k, om, m),
            cols: axis(l, on, n),
        })
    }

    fn patch_len(&self) -> usize {
        self.q * self.k * self.l
    }

    fn out_len(&self) -> usize {
        self.om * self.on
    }

    /// cols[(q, ki, kj), (oi, oj)] = padded_src[q, oi*s + ki - p, oj*s + kj - p]
    fn im2col(&self, src: &[f64], cols: &mut [f64]) {
        let p = self.out_len();
        let mut row = 0;
        for q in 0..self.q {
            let plane = &src[q * self.m * self.n..(q + 1) * self.m * self.n];
            for ki in 0..self.k {
                let rmap = &self.rows[ki * self.om..(ki + 1) * self.om];
                for kj in 0..self.l {
                    let cmap = &self.cols[kj * self.on..(kj + 1) * self.on];
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for (oi, r) in rmap.iter().enumerate() {
                        let out = &mut dst[oi * self.on..(oi + 1) * self.on];
                        match r {
                            None => out.fill(0.0),
                            Some(r) => {
                                let src_row = &plane[r * self.n..(r + 1) * self.n];
                                for (o, c) in out.iter_mut().zip(cmap) {
                                    *o = c.map_or(0.0, |c| src_row[c]);
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatter-add columns back onto the source grid.
    fn col2im(&self, cols: &[f64], dst: &mut [f64]) {
        let p = self.out_len();
        let mut row = 0;
        for q in 0..self.q {
            let plane = &mut dst[q * self.m * self.n..(q + 1) * self.m * self.n];
            for ki in 0..self.k {
                let rmap = &self.rows[ki * self.om..(ki + 1) * self.om];
                for kj in 0..self.l {
                    let cmap = &self.cols[kj * self.on..(kj + 1) * self.on];
                    let src = &cols[row * p..(row + 1) * p];
                    for (oi, r) in rmap.iter().enumerate() {
                        let Some(r) = r else { continue };
                        let vals = &src[oi * self.on..(oi + 1) * self.on];
                        for (v, c) in vals.iter().zip(cmap) {
                            if let Some(c) = c {
                                plane[r * self.n + c] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// C[m x n] = op(A)[m x k] * op(B)[k x n] + beta * C, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the declared strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_weight(weight: &Tensor, in_channels: usize) -> Result<(usize, usize, usize)> {
    let (r, q, k, l) = weight.dims4()?;
    if q != in_channels {
        return Err(Error::Shape(format!(
            "kernels expect {q} input channels, input has {in_channels}"
        )));
    }
    Ok((r, k, l))
}

/// Plain convolution (cross-correlation) without bias.
pub fn conv2d_raw(input: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (b, q, m, n) = input.dims4()?;
    let (r, k, l) = check_weight(weight, q)?;
    let plan = Plan::new(q, m, n, k, l, geom)?;
    let (plen, olen) = (plan.patch_len(), plan.out_len());
    let mut out = Tensor::zeros(&[b, r, plan.om, plan.on]);
    let w = weight.data();
    out.data_mut()
        .par_chunks_mut(r * olen)
        .zip(input.data().par_chunks(q * m * n))
        .for_each(|(dst, src)| {
            let mut cols = vec![0.0; plen * olen];
            plan.im2col(src, &mut cols);
            gemm(r, plen, olen, w, false, &cols, false, 0.0, dst);
        });
    Ok(out)
}

/// Gradient of `conv2d_raw` with respect to its input, for an input of
/// spatial extent `in_hw`.
pub fn conv2d_backward_data(
    gout: &Tensor,
    weight: &Tensor,
    geom: ConvGeometry,
    in_hw: (usize, usize),
) -> Result<Tensor> {
    let (b, r, gm, gn) = gout.dims4()?;
    let (wr, q, k, l) = weight.dims4()?;
    if wr != r {
        return Err(Error::Shape(format!(
            "gradient has {r} channels, kernels produce {wr}"
        )));
    }
    let plan = Plan::new(q, in_hw.0, in_hw.1, k, l, geom)?;
    if (plan.om, plan.on) != (gm, gn) {
        return Err(Error::Shape(format!(
            "geometry maps {in_hw:?} to {}x{}, gradient is {gm}x{gn}",
            plan.om, plan.on
        )));
    }
    let (plen, olen) = (plan.patch_len(), plan.out_len());
    let (m, n) = in_hw;
    let mut out = Tensor::zeros(&[b, q, m, n]);
    let w = weight.data();
    out.data_mut()
        .par_chunks_mut(q * m * n)
        .zip(gout.data().par_chunks(r * olen))
        .for_each(|(dst, g)| {
            let mut cols = vec![0.0; plen * olen];
            gemm(plen, r, olen, w, true, g, false, 0.0, &mut cols);
            plan.col2im(&cols, dst);
        });
    Ok(out)
}

/// Gradient of `conv2d_raw` with respect to its kernels. Per-sample
/// contributions are summed in batch order so the result does not depend on
/// the thread count.
pub fn conv2d_backward_weight(
    input: &Tensor,
    gout: &Tensor,
    geom: ConvGeometry,
    kernel_hw: (usize, usize),
) -> Result<Tensor> {
    let (b, q, m, n) = input.dims4()?;
    let (gb, r, gm, gn) = gout.dims4()?;
    if gb != b {
        return Err(Error::Shape(format!("batch {b} vs gradient batch {gb}")));
    }
    let (k, l) = kernel_hw;
    let plan = Plan::new(q, m, n, k, l, geom)?;
    if (plan.om, plan.on) != (gm, gn) {
        return Err(Error::Shape(format!(
            "geometry maps {m}x{n} to {}x{}, gradient is {gm}x{gn}",
            plan.om, plan.on
        )));
    }
    let (plen, olen) = (plan.patch_len(), plan.out_len());
    let partials: Vec<Vec<f64>> = input
        .data()
        .par_chunks(q * m * n)
        .zip(gout.data().par_chunks(r * olen))
        .map(|(src, g)| {
            let mut cols = vec![0.0; plen * olen];
            plan.im2col(src, &mut cols);
            let mut gw = vec![0.0; r * plen];
            gemm(r, olen, plen, g, false, &cols, true, 0.0, &mut gw);
            gw
        })
        .collect();
    let mut total = vec![0.0; r * plen];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Tensor::new(&[r, q, k, l], total)
}

/// Convolution with a kernel bank; adds the bank's bias when present.
pub fn conv2d(
    input: &Tensor,
    kernels: &KernelBank,
    stride: usize,
    padding: Padding,
    pad_amount: usize,
) -> Result<Tensor> {
    let mut out = conv2d_raw(
        input,
        kernels.weight(),
        ConvGeometry::new(stride, pad_amount, padding),
    )?;
    if let Some(bias) = kernels.bias() {
        add_channel_bias(&mut out, bias)?;
    }
    Ok(out)
}

/// Transposed convolution: the adjoint of a zero-padded `conv2d_raw` with the
/// same kernels. `weight` is laid out [R, Q, K, L] and maps R input channels
/// to Q output channels.
pub fn transposed_conv2d_raw(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (_, r, m, n) = input.dims4()?;
    let (wr, _, k, l) = weight.dims4()?;
    if wr != r {
        return Err(Error::Shape(format!(
            "transposed kernels expect {wr} input channels, input has {r}"
        )));
    }
    let om = transposed_out_extent(m, k, stride, pad)?;
    let on = transposed_out_extent(n, l, stride, pad)?;
    conv2d_backward_data(
        input,
        weight,
        ConvGeometry::new(stride, pad, Padding::Zero),
        (om, on),
    )
}

pub fn transposed_conv2d(
    input: &Tensor,
    kernels: &KernelBank,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let mut out = transposed_conv2d_raw(input, kernels.weight(), stride, pad)?;
    if let Some(bias) = kernels.bias() {
        // Bias of a transposed bank is indexed by its output (= Q) channels.
        add_channel_bias(&mut out, bias)?;
    }
    Ok(out)
}

fn add_channel_bias(t: &mut Tensor, bias: &[f64]) -> Result<()> {
    let (_, c, h, w) = t.dims4()?;
    if bias.len() != c {
        return Err(Error::Dimension {
            expected: c,
            got: bias.len(),
        });
    }
    for (i, plane) in t.data_mut().chunks_mut(h * w).enumerate() {
        let b = bias[i % c];
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatScope {
    Instance,
    Batch,
}

/// Per-channel means and population standard deviations.
/// Instance scope yields [B, C] tensors; batch scope yields [C].
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub means: Tensor,
    pub stds: Tensor,
}

pub fn channel_stats(t: &Tensor, scope: StatScope) -> Result<ChannelStats> {
    let (b, c, h, w) = t.dims4()?;
    if t.is_empty() {
        return Err(Error::Shape("statistics of an empty tensor".into()));
    }
    let p = h * w;
    match scope {
        StatScope::Instance => {
            let mut means = Vec::with_capacity(b * c);
            let mut stds = Vec::with_capacity(b * c);
            for plane in t.data().chunks(p) {
                let mu = plane.iter().sum::<f64>() / p as f64;
                let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / p as f64;
                means.push(mu);
                stds.push(var.sqrt());
            }
            Ok(ChannelStats {
                means: Tensor::new(&[b, c], means)?,
                stds: Tensor::new(&[b, c], stds)?,
            })
        }
        StatScope::Batch => {
            let count = (b * p) as f64;
            let mut means = vec![0.0; c];
            for (i, plane) in t.data().chunks(p).enumerate() {
                means[i % c] += plane.iter().sum::<f64>();
            }
            means.iter_mut().for_each(|m| *m /= count);
            let mut vars = vec![0.0; c];
            for (i, plane) in t.data().chunks(p).enumerate() {
                let mu = means[i % c];
                vars[i % c] += plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            let stds = vars.iter().map(|v| (v / count).sqrt()).collect();
            Ok(ChannelStats {
                means: Tensor::new(&[c], means)?,
                stds: Tensor::new(&[c], stds)?,
            })
        }
    }
}
