use serde::Serialize;

use super::{codes_tensor, LatentCode};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::layers::Mode;
use crate::tensor::{Padding, Prng, Tensor};

pub const PCA_TOL: f64 = 1e-9;
pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors, largest eigenvalue first.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    pub fn explained(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|v| v.iter().zip(p).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }
}

fn matvec(a: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| (0..d).map(|j| a[i * d + j] * v[j]).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Covariance eigendecomposition by power iteration with deflation, keeping
/// leading components until `keep` of the variance is explained.
pub fn pca(points: &[Vec<f64>], keep: f64) -> Pca {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x / n as f64);
    }
    let mut cov = vec![0.0; d * d];
    for p in points {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += di * (p[j] - mean[j]) / n as f64;
            }
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let mut out = Pca {
        mean,
        components: Vec::new(),
        eigenvalues: Vec::new(),
        total_variance: total,
    };
    if total <= 0.0 {
        return out;
    }
    let mut acc = 0.0;
    while out.components.len() < d && acc < keep * total - 1e-12 * total {
        // Deterministic start, nudged off any symmetric subspace.
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
        let n0 = norm(&v);
        v.iter_mut().for_each(|x| *x /= n0);
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let av = matvec(&cov, d, &v);
            let nv = norm(&av);
            if nv == 0.0 {
                lambda = 0.0;
                break;
            }
            let next: Vec<f64> = av.iter().map(|x| x / nv).collect();
            let l: f64 = next.iter().zip(matvec(&cov, d, &next)).map(|(a, b)| a * b).sum();
            let done = (l - lambda).abs() <= PCA_TOL * l.abs().max(1.0)
                && next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= PCA_TOL.sqrt();
            v = next;
            lambda = l;
            if done {
                break;
            }
        }
        if lambda <= PCA_TOL * total {
            break;
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        acc += lambda;
        out.eigenvalues.push(lambda);
        out.components.push(v);
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(vals: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in vals.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// k-means with k-means++ seeding. Stops when assignments stop changing.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if n < k || k == 0 {
        return Err(Error::TooFewSamples { samples: n, k });
    }
    let mut rng = Prng::new(seed);
    let mut centers = vec![points[rng.below(n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.uniform() * total;
            let mut idx = n - 1;
            for (i, v) in d.iter().enumerate() {
                if t < *v {
                    idx = i;
                    break;
                }
                t -= v;
            }
            idx
        } else {
            // All points coincide with a center.
            centers.len()
        };
        centers.push(points[pick].clone());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = points
            .iter()
            .map(|p| argmin(centers.iter().map(|c| dist2(p, c))))
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (ci, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == ci).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in c.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    Ok(assign)
}

/// Fraction of points whose label is their cluster's majority label.
pub fn purity(assign: &[usize], labels: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &l) in assign.iter().zip(labels) {
        *counts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hit: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hit as f64 / assign.len().max(1) as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub layer: usize,
    pub ring: usize,
    pub samples: usize,
    pub k: usize,
    pub retained_dims: usize,
    pub explained_variance: f64,
    pub assignments: Vec<usize>,
    pub labels: Vec<usize>,
    pub purity: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeOptions {
    pub layer: Option<usize>,
    /// Boundary ring excluded from the means. By default the cumulative
    /// padding under zero padding and nothing under reflection padding,
    /// which adds no boundary offset.
    pub ring: Option<usize>,
    pub keep_variance: f64,
    pub seed: u64,
    pub batch: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            layer: None,
            ring: None,
            keep_variance: 0.96,
            seed: 12,
            batch: 16,
        }
    }
}

/// Interior per-channel means of `t` [B, C, H, W], one vector per sample.
pub fn interior_means(t: &Tensor, ring: usize) -> Result<Vec<Vec<f64>>> {
    let (b, c, h, w) = t.dims4()?;
    let ry = ring.min((h - 1) / 2);
    let rx = ring.min((w - 1) / 2);
    Ok((0..b)
        .map(|i| {
            (0..c)
                .map(|ch| {
                    let p = t.plane(i, ch);
                    let mut s = 0.0;
                    for y in ry..h - ry {
                        s += p[y * w + rx..y * w + w - rx].iter().sum::<f64>();
                    }
                    s / ((h - 2 * ry) * (w - 2 * rx)) as f64
                })
                .collect()
        })
        .collect())
}

/// Translate every sample under every code, cluster the interior feature
/// means at one normalized layer and score the clusters against the codes.
pub fn feature_stat_probe(
    g: &Generator,
    samples: &Tensor,
    codes: &[LatentCode],
    k: usize,
    opts: ProbeOptions,
) -> Result<ProbeReport> {
    let (n, _, _, _) = samples.dims4()?;
    let total = n * codes.len();
    if total < k {
        return Err(Error::TooFewSamples { samples: total, k });
    }
    if k < codes.len() {
        return Err(Error::InvalidSpec(format!("k = {k} is below the {} codes", codes.len())));
    }
    let layer = opts.layer.unwrap_or_else(|| g.last_stage_norm_unit());
    let ring = opts.ring.unwrap_or_else(|| match g.spec.padding {
        Padding::Zero => g.cumulative_pad(layer),
        Padding::Reflection => 0,
    });
    let mut feats = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (ci, c) in codes.iter().enumerate() {
        for start in (0..n).step_by(opts.batch.max(1)) {
            let end = (start + opts.batch.max(1)).min(n);
            let x = Tensor::stack(&(start..end).map(|i| samples.select(i)).collect::<Vec<_>>())?;
            let (_, taps) = g.run(&x, &codes_tensor(&vec![c; end - start])?, Mode::Eval)?;
            let (_, t) = taps
                .into_iter()
                .find(|(i, _)| *i == layer)
                .ok_or_else(|| Error::InvalidSpec(format!("unit {layer} has no normalization")))?;
            feats.extend(interior_means(&t, ring)?);
            labels.extend(std::iter::repeat_n(ci, end - start));
        }
    }
    let p = pca(&feats, opts.keep_variance);
    let projected: Vec<Vec<f64>> = feats.iter().map(|f| p.project(f)).collect();
    let assignments = kmeans(&projected, k, opts.seed)?;
    Ok(ProbeReport {
        layer,
        ring,
        samples: total,
        k,
        retained_dims: p.components.len(),
        explained_variance: p.explained(),
        purity: purity(&assignments, &labels),
        assignments,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_isotropic_keeps_enough_dims() {
        for d in [5usize, 10, 25] {
            let mut pts = Vec::new();
            for i in 0..d {
                for s in [-1.0, 1.0] {
                    let mut p = vec![0.0; d];
                    p[i] = s;
                    pts.push(p);
                }
            }
            let p = pca(&pts, 0.96);
            let expect = (0.96 * d as f64 - 1e-9).ceil() as usize;
            assert_eq!(p.components.len(), expect, "d = {d}");
            assert!(p.explained() >= 0.96 - 1e-12);
        }
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 0.01 * ((i * 7) % 5) as f64]).collect();
        let p = pca(&pts, 0.96);
        assert_eq!(p.components.len(), 1);
        assert!((p.components[0][0].abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kmeans_separates_blobs_and_is_deterministic() {
        let mut rng = Prng::new(3);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for l in 0..3 {
            for _ in 0..20 {
                pts.push(vec![10.0 * l as f64 + 0.1 * rng.normal(), 0.1 * rng.normal()]);
                labels.push(l);
            }
        }
        let a = kmeans(&pts, 3, 7).unwrap();
        assert_eq!(a, kmeans(&pts, 3, 7).unwrap());
        assert_eq!(purity(&a, &labels), 1.0);
    }

    #[test]
    fn kmeans_needs_k_points() {
        assert!(matches!(kmeans(&[vec![0.0]], 2, 0), Err(Error::TooFewSamples { samples: 1, k: 2 })));
    }

    #[test]
    fn coincident_points_fall_in_cluster_zero() {
        let pts = vec![vec![1.0, 1.0]; 8];
        let a = kmeans(&pts, 4, 0).unwrap();
        assert!(a.iter().all(|&c| c == 0));
        assert_eq!(purity(&a, &[0, 1, 2, 3, 0, 1, 2, 3]), 0.25);
    }

    #[test]
    fn interior_ring_is_clamped() {
        let t = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let m = interior_means(&t, 5).unwrap();
        assert_eq!(m[0][0], (5.0 + 6.0 + 9.0 + 10.0) / 4.0);
    }
}
