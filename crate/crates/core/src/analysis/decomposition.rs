use serde::Serialize;

use super::{replicate_latent, LatentCode};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, KernelBank, Padding, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    #[serde(skip)]
    pub y: Tensor,
    #[serde(skip)]
    pub o: Tensor,
    #[serde(skip)]
    pub z: Tensor,
    /// max |z - (y + o)|
    pub residual: f64,
    /// Per output channel max - min of o over the whole map (worst sample).
    pub o_spread_full: Vec<f64>,
    /// Same, restricted to outputs whose window never touches the padding.
    pub o_spread_interior: Vec<f64>,
}

fn spread(vals: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Stride-1 convolution of (x; replicated c) with (W, V), plus the separate
/// y = W * x and o = V * c under the same padding.
pub fn lci_conv(
    x: &Tensor,
    c: &LatentCode,
    w: &KernelBank,
    v: &KernelBank,
    padding: Padding,
    pad: usize,
) -> Result<DecompositionReport> {
    let (b, q, m, n) = x.dims4()?;
    let (r, s) = (w.out_channels(), c.dim());
    if w.in_channels() != q || v.in_channels() != s || v.out_channels() != r {
        return Err(Error::Shape(format!(
            "W is {r}x{} and V is {}x{} for {q} input and {s} latent channels",
            w.in_channels(),
            v.out_channels(),
            v.in_channels()
        )));
    }
    if w.kernel_size() != v.kernel_size() {
        return Err(Error::Shape("W and V kernel sizes differ".into()));
    }
    let (k, l) = w.kernel_size();

    let planes = replicate_latent(c, m, n).reshape(&[1, s, m, n])?;
    let cb = Tensor::stack(&vec![planes; b])?;
    let mut xc = Vec::with_capacity(b * (q + s) * m * n);
    for i in 0..b {
        xc.extend_from_slice(x.select(i).data());
        xc.extend_from_slice(cb.select(i).data());
    }
    let xc = Tensor::new(&[b, q + s, m, n], xc)?;

    let mut wv = Vec::with_capacity(r * (q + s) * k * l);
    for ro in 0..r {
        wv.extend_from_slice(&w.weight().data()[ro * q * k * l..(ro + 1) * q * k * l]);
        wv.extend_from_slice(&v.weight().data()[ro * s * k * l..(ro + 1) * s * k * l]);
    }
    let wv = KernelBank::new(Tensor::new(&[r, q + s, k, l], wv)?, None)?;

    let z = conv2d(&xc, &wv, 1, padding, pad)?;
    let y = conv2d(x, w, 1, padding, pad)?;
    let o = conv2d(&cb, v, 1, padding, pad)?;
    let residual = z.max_abs_diff(&y.add(&o)?)?;

    let (_, _, om, on) = o.dims4()?;
    // Output (i, j) reads padded rows i..i+k-1, which avoid the pad iff
    // pad <= i <= m + pad - k.
    let rows = pad..(m + pad + 1).saturating_sub(k);
    let cols = pad..(n + pad + 1).saturating_sub(l);
    let mut full = vec![0.0f64; r];
    let mut interior = vec![0.0f64; r];
    for bi in 0..b {
        for ch in 0..r {
            let p = o.plane(bi, ch);
            full[ch] = full[ch].max(spread(p.iter().copied()));
            let inner = rows
                .clone()
                .filter(|&i| i < om)
                .flat_map(|i| cols.clone().filter(|&j| j < on).map(move |j| p[i * on + j]));
            interior[ch] = interior[ch].max(spread(inner));
        }
    }
    Ok(DecompositionReport {
        y,
        o,
        z,
        residual,
        o_spread_full: full,
        o_spread_interior: interior,
    })
}
