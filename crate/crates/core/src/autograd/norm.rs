//! Fused per-channel normalization kernel shared by BN, IN, CBBN and CBIN.
//!
//! out = (z - center) / (spread + eps), where the center is an instance mean,
//! a batch mean or a fixed per-channel value, and the spread is an instance
//! std, a batch std or a fixed per-channel value. Stds are population stds
//! taken around the mean of their own scope.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Center {
    Instance,
    Batch,
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Spread {
    Instance,
    Batch,
    Fixed(Vec<f64>),
}

/// Forward-pass bookkeeping needed by the backward pass.
#[derive(Clone, Debug)]
pub struct NormSaved {
    dims: (usize, usize, usize, usize),
    center: Center,
    spread: Spread,
    /// Effective denominator per (sample, channel).
    denom: Vec<f64>,
    /// Mean and std of each spread group (empty for a fixed spread).
    spread_mean: Vec<f64>,
    spread_std: Vec<f64>,
    out: Vec<f64>,
}

fn instance_moments(z: &Tensor, p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for plane in z.data().chunks(p) {
        let m = plane.iter().sum::<f64>() / p as f64;
        let v = plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / p as f64;
        means.push(m);
        stds.push(v.sqrt());
    }
    (means, stds)
}

fn batch_moments(z: &Tensor, b: usize, c: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (b * p) as f64;
    let mut means = vec![0.0; c];
    for (i, plane) in z.data().chunks(p).enumerate() {
        means[i % c] += plane.iter().sum::<f64>();
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0.0; c];
    for (i, plane) in z.data().chunks(p).enumerate() {
        let m = means[i % c];
        vars[i % c] += plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    (means, vars.into_iter().map(|v| (v / n).sqrt()).collect())
}

fn check_fixed(v: &[f64], c: usize) -> Result<()> {
    if v.len() != c {
        return Err(Error::Dimension {
            expected: c,
            got: v.len(),
        });
    }
    Ok(())
}

pub fn normalize(z: &Tensor, center: Center, spread: Spread, eps: f64) -> Result<(Tensor, NormSaved)> {
    let (b, c, h, w) = z.dims4()?;
    let p = h * w;
    let groups = b * c;

    let mu: Vec<f64> = match &center {
        Center::Instance => instance_moments(z, p).0,
        Center::Batch => {
            let (m, _) = batch_moments(z, b, c, p);
            (0..groups).map(|i| m[i % c]).collect()
        }
        Center::Fixed(v) => {
            check_fixed(v, c)?;
            (0..groups).map(|i| v[i % c]).collect()
        }
    };
    let (spread_mean, spread_std, denom): (Vec<f64>, Vec<f64>, Vec<f64>) = match &spread {
        Spread::Instance => {
            let (m, s) = instance_moments(z, p);
            let d = s.iter().map(|s| s + eps).collect();
            (m, s, d)
        }
        Spread::Batch => {
            let (m, s) = batch_moments(z, b, c, p);
            let d = (0..groups).map(|i| s[i % c] + eps).collect();
            (m, s, d)
        }
        Spread::Fixed(v) => {
            check_fixed(v, c)?;
            let d = (0..groups).map(|i| v[i % c] + eps).collect();
            (Vec::new(), Vec::new(), d)
        }
    };

    let mut out = Vec::with_capacity(z.len());
    for (i, plane) in z.data().chunks(p).enumerate() {
        let (m, d) = (mu[i], denom[i]);
        out.extend(plane.iter().map(|x| (x - m) / d));
    }
    let tensor = Tensor::new(z.shape(), out.clone())?;
    Ok((
        tensor,
        NormSaved {
            dims: (b, c, h, w),
            center,
            spread,
            denom,
            spread_mean,
            spread_std,
            out,
        },
    ))
}

impl NormSaved {
    pub fn backward(&self, z: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = self.dims;
        let p = h * w;
        let groups = b * c;
        z.same_shape(g)?;

        // t = g / d
        let mut gx: Vec<f64> = g
            .data()
            .chunks(p)
            .enumerate()
            .flat_map(|(i, plane)| {
                let d = self.denom[i];
                plane.iter().map(move |v| v / d)
            })
            .collect();

        // Spread term uses t before the centering correction is applied.
        let spread_coef: Option<Vec<f64>> = match self.spread {
            Spread::Fixed(_) => None,
            _ => {
                let mut per_plane = vec![0.0; groups];
                for (i, (tp, up)) in gx.chunks(p).zip(self.out.chunks(p)).enumerate() {
                    per_plane[i] = tp.iter().zip(up).map(|(t, u)| t * u).sum();
                }
                Some(per_plane)
            }
        };

        match self.center {
            Center::Fixed(_) => {}
            Center::Instance => {
                for plane in gx.chunks_mut(p) {
                    let m = plane.iter().sum::<f64>() / p as f64;
                    plane.iter_mut().for_each(|v| *v -= m);
                }
            }
            Center::Batch => {
                let mut sums = vec![0.0; c];
                for (i, plane) in gx.chunks(p).enumerate() {
                    sums[i % c] += plane.iter().sum::<f64>();
                }
                let n = (b * p) as f64;
                for (i, plane) in gx.chunks_mut(p).enumerate() {
                    let m = sums[i % c] / n;
                    plane.iter_mut().for_each(|v| *v -= m);
                }
            }
        }

        if let Some(per_plane) = spread_coef {
            // K_S summed over each spread group, then d sigma_S / d z_i.
            let (k, n): (Vec<f64>, f64) = match self.spread {
                Spread::Instance => (per_plane, p as f64),
                _ => {
                    let mut k = vec![0.0; c];
                    for (i, v) in per_plane.iter().enumerate() {
                        k[i % c] += v;
                    }
                    (k, (b * p) as f64)
                }
            };
            let group_of = |i: usize| match self.spread {
                Spread::Instance => i,
                _ => i % c,
            };
            for (i, (gp, zp)) in gx.chunks_mut(p).zip(z.data().chunks(p)).enumerate() {
                let s = group_of(i);
                let sigma = self.spread_std[s];
                if sigma <= 0.0 {
                    continue;
                }
                let coef = k[s] / (n * sigma);
                let m = self.spread_mean[s];
                for (gv, zv) in gp.iter_mut().zip(zp) {
                    *gv -= coef * (zv - m);
                }
            }
        }
        Tensor::new(z.shape(), gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_example() {
        let z = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let (u, _) = normalize(&z, Center::Instance, Spread::Instance, 0.0).unwrap();
        assert_eq!(u.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn batch_example() {
        let z = Tensor::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (u, _) = normalize(&z, Center::Batch, Spread::Batch, 0.0).unwrap();
        assert_eq!(u.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn fixed_length_is_checked() {
        let z = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(normalize(&z, Center::Fixed(vec![0.0]), Spread::Instance, 1e-5).is_err());
    }
}
