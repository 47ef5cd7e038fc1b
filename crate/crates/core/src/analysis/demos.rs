use serde::Serialize;

use super::{codes_tensor, lci_conv, LatentCode};
use crate::autograd::{normalize, Center, Spread};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::{channel_stats, KernelBank, Padding, Prng, StatScope, Tensor};

/// Smallest batch std accepted by the exact-normalization demos.
pub const MIN_DEMO_STD: f64 = 1e-3;

const Q: usize = 3;
const S: usize = 2;
const R: usize = 4;
const EXTENT: usize = 8;

struct Draw {
    w: KernelBank,
    v: KernelBank,
}

impl Draw {
    fn new(rng: &mut Prng) -> Self {
        Self {
            w: KernelBank::randn(R, Q, 3, 3, 0.5, rng),
            v: KernelBank::randn(R, S, 3, 3, 0.5, rng),
        }
    }

    fn z(&self, x: &Tensor, c: &LatentCode) -> Result<(Tensor, Tensor)> {
        let d = lci_conv(x, c, &self.w, &self.v, Padding::Reflection, 1)?;
        Ok((d.z, d.y))
    }
}

/// Batch normalization with exact statistics (no epsilon).
fn bn_exact(z: &Tensor) -> Result<Tensor> {
    check_std(z)?;
    Ok(normalize(z, Center::Batch, Spread::Batch, 0.0)?.0)
}

fn check_std(z: &Tensor) -> Result<()> {
    let st = channel_stats(z, StatScope::Batch)?;
    if let Some((ch, s)) = st.stds.data().iter().enumerate().find(|(_, &s)| s < MIN_DEMO_STD) {
        return Err(Error::DegenerateBatch(format!("channel {ch} has batch std {s:e}")));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct IntraBatchGap {
    /// Worst channel of max_i E[BN(z_i)] - min_i E[BN(z_i)].
    pub spread: f64,
    /// The same quantity from E[y_i] and std(Z) alone.
    pub formula: f64,
}

/// One batch of instances sharing code `c`, normalized together.
pub fn intra_batch_gap(xs: &[Tensor], c: &LatentCode, w: &KernelBank, v: &KernelBank) -> Result<IntraBatchGap> {
    let mut zs = Vec::new();
    let mut ys = Vec::new();
    for x in xs {
        let d = lci_conv(x, c, w, v, Padding::Reflection, 1)?;
        zs.push(d.z.select(0));
        ys.push(d.y.select(0));
    }
    let z = Tensor::stack(&zs)?;
    let y = Tensor::stack(&ys)?;
    let std = channel_stats(&z, StatScope::Batch)?.stds;
    let (b, ch, _, _) = z.dims4()?;
    let means = if std.data().iter().all(|&s| s == 0.0) {
        Tensor::zeros(&[b, ch])
    } else {
        bn_exact(&z)?.spatial_means()?
    };
    let y_means = y.spatial_means()?;
    let mut spread = 0.0f64;
    let mut formula = 0.0f64;
    for r in 0..ch {
        let col = |t: &Tensor| (0..b).map(|i| t.get(&[i, r])).collect::<Vec<_>>();
        let range = |v: Vec<f64>| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        spread = spread.max(range(col(&means)));
        if std.data()[r] > 0.0 {
            formula = formula.max(range(col(&y_means)) / std.data()[r]);
        }
    }
    Ok(IntraBatchGap { spread, formula })
}

#[derive(Clone, Debug, Serialize)]
pub struct IntraBatchReport {
    pub trials: usize,
    pub worst_spread: f64,
    /// Largest |spread - formula| over trials.
    pub formula_error: f64,
}

pub fn demo_intra_batch_inconsistency(rng: &mut Prng, trials: usize) -> Result<IntraBatchReport> {
    let c = LatentCode::one_hot(0, S)?;
    let mut worst = 0.0f64;
    let mut err = 0.0f64;
    for t in 0..trials {
        let mut r = rng.split(t as u64);
        let d = Draw::new(&mut r);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[1, Q, EXTENT, EXTENT], 1.0, &mut r)).collect();
        let g = intra_batch_gap(&xs, &c, &d.w, &d.v)?;
        worst = worst.max(g.spread);
        err = err.max((g.spread - g.formula).abs());
    }
    Ok(IntraBatchReport {
        trials,
        worst_spread: worst,
        formula_error: err,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InterBatchTrial {
    /// Mean of BN(z1), BN(z2) within batch (z1, z2, z4).
    pub lhs: Vec<f64>,
    /// -1/2 of the mean of z4 normalized with that batch's statistics.
    pub rhs: Vec<f64>,
    /// Mean of BN over the all-c1 batch (z1, z2, z3).
    pub same_code_mean: Vec<f64>,
}

impl InterBatchTrial {
    pub fn max_error(&self) -> f64 {
        self.lhs
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Batch Z1 = (z1, z2, z3) under code c1, then Z2 = (z1, z2, z4) with z4
/// built from x3 and code c2.
pub fn inter_batch_trial(
    xs: [&Tensor; 3],
    c1: &LatentCode,
    c2: &LatentCode,
    w: &KernelBank,
    v: &KernelBank,
) -> Result<InterBatchTrial> {
    let d = Draw { w: w.clone(), v: v.clone() };
    let z1 = d.z(xs[0], c1)?.0.select(0);
    let z2 = d.z(xs[1], c1)?.0.select(0);
    let z3 = d.z(xs[2], c1)?.0.select(0);
    let z4 = d.z(xs[2], c2)?.0.select(0);

    let batch1 = Tensor::stack(&[z1.clone(), z2.clone(), z3])?;
    let m1 = bn_exact(&batch1)?.spatial_means()?;
    let (_, ch, _, _) = batch1.dims4()?;
    let same_code_mean = (0..ch)
        .map(|r| (0..3).map(|i| m1.get(&[i, r])).sum::<f64>() / 3.0)
        .collect();

    let batch2 = Tensor::stack(&[z1, z2, z4])?;
    let m2 = bn_exact(&batch2)?.spatial_means()?;
    let lhs = (0..ch).map(|r| 0.5 * (m2.get(&[0, r]) + m2.get(&[1, r]))).collect();
    let rhs = (0..ch).map(|r| -0.5 * m2.get(&[2, r])).collect();
    Ok(InterBatchTrial {
        lhs,
        rhs,
        same_code_mean,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InterBatchReport {
    pub trials: usize,
    pub max_error: f64,
    /// Largest |mean BN| of the all-same-code batch.
    pub max_same_code_mean: f64,
    /// Largest |lhs|: how far the c1 mapping moves between batches.
    pub max_shift: f64,
}

pub fn demo_inter_batch_identity(rng: &mut Prng, trials: usize) -> Result<InterBatchReport> {
    let c1 = LatentCode::one_hot(0, S)?;
    let c2 = LatentCode::one_hot(1, S)?;
    let mut rep = InterBatchReport {
        trials,
        max_error: 0.0,
        max_same_code_mean: 0.0,
        max_shift: 0.0,
    };
    for t in 0..trials {
        let mut r = rng.split(t as u64);
        let d = Draw::new(&mut r);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[1, Q, EXTENT, EXTENT], 1.0, &mut r)).collect();
        let tr = inter_batch_trial([&xs[0], &xs[1], &xs[2]], &c1, &c2, &d.w, &d.v)?;
        rep.max_error = rep.max_error.max(tr.max_error());
        rep.max_same_code_mean = rep
            .max_same_code_mean
            .max(tr.same_code_mean.iter().fold(0.0, |a: f64, v| a.max(v.abs())));
        rep.max_shift = rep.max_shift.max(tr.lhs.iter().fold(0.0, |a: f64, v| a.max(v.abs())));
    }
    Ok(rep)
}

/// Largest output pixel gap when the same `x` is translated under each code
/// pair. Runs in inference mode.
pub fn demo_in_elimination(g: &Generator, x: &Tensor, pairs: &[(LatentCode, LatentCode)]) -> Result<f64> {
    let (b, _, _, _) = x.dims4()?;
    let mut gap = 0.0f64;
    for (c1, c2) in pairs {
        let k1 = codes_tensor(&vec![c1; b])?;
        let k2 = codes_tensor(&vec![c2; b])?;
        let y1 = g.generate(x, &k1)?;
        let y2 = g.generate(x, &k2)?;
        gap = gap.max(y1.max_abs_diff(&y2)?);
    }
    Ok(gap)
}

/// Random code pairs of the requested kind.
pub fn random_code_pairs(dim: usize, n: usize, one_hot: bool, rng: &mut Prng) -> Result<Vec<(LatentCode, LatentCode)>> {
    (0..n)
        .map(|_| {
            if one_hot {
                let a = rng.below(dim);
                let b = (a + 1 + rng.below(dim - 1)) % dim;
                Ok((LatentCode::one_hot(a, dim)?, LatentCode::one_hot(b, dim)?))
            } else {
                let mut draw = || LatentCode::continuous((0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
                Ok((draw(), draw()))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_have_no_gap() {
        let mut rng = Prng::new(0);
        let d = Draw::new(&mut rng);
        let x = Tensor::randn(&[1, Q, EXTENT, EXTENT], 1.0, &mut rng);
        let g = intra_batch_gap(&[x.clone(), x.clone(), x], &LatentCode::one_hot(0, S).unwrap(), &d.w, &d.v).unwrap();
        assert!(g.spread < 1e-9);
    }

    #[test]
    fn degenerate_batch_rejected() {
        let w = KernelBank::new(Tensor::zeros(&[R, Q, 3, 3]), None).unwrap();
        let v = KernelBank::new(Tensor::zeros(&[R, S, 3, 3]), None).unwrap();
        let x = Tensor::zeros(&[1, Q, EXTENT, EXTENT]);
        let c1 = LatentCode::one_hot(0, S).unwrap();
        let c2 = LatentCode::one_hot(1, S).unwrap();
        assert!(matches!(
            inter_batch_trial([&x, &x, &x], &c1, &c2, &w, &v),
            Err(Error::DegenerateBatch(_))
        ));
    }
}
