//! Diversity (perceptual distance through a fixed random network),
//! consistency score and oracle domain accuracy.

mod surrogate;

pub use surrogate::{SurrogateNet, STAGE_WIDTHS};

use serde::Serialize;

use crate::analysis::{codes_tensor, LatentCode};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::synth::{apply_hue, hue_oracle, Batch, Dataset, TaskKind};
use crate::tensor::{Prng, Tensor};

const CHUNK: usize = 32;

fn cos_sim(a: &[f64], b: &[f64], stage: usize) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if a == b { Ok(1.0) } else { Err(Error::ZeroNormFeature(stage)) };
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// 5 - sum of stage-wise cosine similarities between pooled features.
pub fn feature_distance(fa: &[Vec<f64>], fb: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    for (i, (a, b)) in fa.iter().zip(fb).enumerate() {
        s += cos_sim(a, b, i)?;
    }
    Ok(fa.len() as f64 - s)
}

/// Distance between two images of shape [3, E, E] or [1, 3, E, E].
pub fn perceptual_distance(a: &Tensor, b: &Tensor, net: &SurrogateNet) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let fa = net.features(&as_batch(a)?)?;
    let fb = net.features(&as_batch(b)?)?;
    feature_distance(&fa[0], &fb[0])
}

fn as_batch(t: &Tensor) -> Result<Tensor> {
    match t.rank() {
        3 => t.clone().reshape(&[1, t.shape()[0], t.shape()[1], t.shape()[2]]),
        _ => Ok(t.clone()),
    }
}

/// Mean distance over row pairs of two equally sized batches.
pub fn mean_pair_distance(a: &Tensor, b: &Tensor, net: &SurrogateNet) -> Result<f64> {
    let fa = net.features(a)?;
    let fb = net.features(b)?;
    let mut total = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        total += feature_distance(x, y)?;
    }
    Ok(total / fa.len().max(1) as f64)
}

fn draw_code_pair(kind: TaskKind, dim: usize, rng: &mut Prng) -> Result<(LatentCode, LatentCode)> {
    Ok(match kind {
        TaskKind::Discrete => {
            let a = rng.below(dim);
            let b = (a + 1 + rng.below(dim - 1)) % dim;
            (LatentCode::one_hot(a, dim)?, LatentCode::one_hot(b, dim)?)
        }
        TaskKind::Continuous => {
            let mut c = || LatentCode::continuous((0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
            (c(), c())
        }
    })
}

struct PairDraw {
    input: usize,
    c1: LatentCode,
    c2: LatentCode,
}

fn draw_pairs(n_inputs: usize, kind: TaskKind, dim: usize, pairs: usize, rng: &mut Prng) -> Result<Vec<PairDraw>> {
    (0..pairs)
        .map(|_| {
            let input = rng.below(n_inputs);
            let (c1, c2) = draw_code_pair(kind, dim, rng)?;
            Ok(PairDraw { input, c1, c2 })
        })
        .collect()
}

/// Mean perceptual distance between translations of one input under two
/// random codes, over `pairs` draws.
pub fn diversity_score(
    g: &Generator,
    data: &Dataset,
    indices: &[usize],
    net: &SurrogateNet,
    rng: &mut Prng,
    pairs: usize,
) -> Result<f64> {
    let draws = draw_pairs(indices.len(), data.spec.kind, g.spec.latent_dim, pairs, rng)?;
    let mut total = 0.0;
    for chunk in draws.chunks(CHUNK) {
        let idx: Vec<usize> = chunk.iter().map(|d| indices[d.input]).collect();
        let x = data.batch(&idx)?.x;
        let c1 = codes_tensor(&chunk.iter().map(|d| &d.c1).collect::<Vec<_>>())?;
        let c2 = codes_tensor(&chunk.iter().map(|d| &d.c2).collect::<Vec<_>>())?;
        let a = g.generate(&x, &c1)?;
        let b = g.generate(&x, &c2)?;
        total += mean_pair_distance(&a, &b, net)? * chunk.len() as f64;
    }
    Ok(total / pairs.max(1) as f64)
}

/// The same protocol applied to ground-truth translations.
pub fn reference_diversity(data: &Dataset, indices: &[usize], net: &SurrogateNet, rng: &mut Prng, pairs: usize) -> Result<f64> {
    let dim = data.spec.code_dim();
    let draws = draw_pairs(indices.len(), data.spec.kind, dim, pairs, rng)?;
    let mut total = 0.0;
    for chunk in draws.chunks(CHUNK) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for d in chunk {
            let s = &data.samples[indices[d.input]];
            let e = data.spec.extent;
            a.push(apply_hue(&s.x, &s.mask, &d.c1, data.spec.kind)?.reshape(&[1, 3, e, e])?);
            b.push(apply_hue(&s.x, &s.mask, &d.c2, data.spec.kind)?.reshape(&[1, 3, e, e])?);
        }
        total += mean_pair_distance(&Tensor::stack(&a)?, &Tensor::stack(&b)?, net)? * chunk.len() as f64;
    }
    Ok(total / pairs.max(1) as f64)
}

/// Codes recovered from the targets of a batch: the hue oracle's domain for
/// the discrete task. Abstentions give an all-zero code.
pub fn oracle_codes(batch: &Batch, domains: usize) -> Result<Tensor> {
    let (n, ch, h, w) = batch.y.dims4()?;
    let mut out = Vec::with_capacity(n * domains);
    for i in 0..n {
        let img = batch.y.select(i).reshape(&[ch, h, w])?;
        let mask = batch.masks.select(i).reshape(&[h, w])?;
        let mut c = vec![0.0; domains];
        if let Some(d) = hue_oracle(&img, &mask, domains)? {
            c[d] = 1.0;
        }
        out.extend(c);
    }
    Tensor::new(&[n, domains], out)
}

/// 1 - mean |G(Enc(y), x) - y| with images mapped to [0, 1]. Not clamped.
pub fn consistency_score(
    g: &Generator,
    encode: impl Fn(&Batch) -> Result<Tensor>,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    let mut err = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(CHUNK) {
        let b = data.batch(chunk)?;
        let codes = encode(&b)?;
        let out = g.generate(&b.x, &codes)?;
        err += out.data().iter().zip(b.y.data()).map(|(p, t)| 0.5 * (p - t).abs()).sum::<f64>();
        count += out.len();
    }
    Ok(1.0 - err / count.max(1) as f64)
}

/// Translate each input to every domain and ask the hue oracle which domain
/// it sees. Abstentions count as errors.
pub fn domain_accuracy(g: &Generator, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if data.spec.kind != TaskKind::Discrete {
        return Err(Error::InvalidSpec("domain accuracy needs the discrete task".into()));
    }
    let k = data.spec.domains;
    let e = data.spec.extent;
    let mut hits = 0usize;
    let mut total = 0usize;
    for chunk in indices.chunks(CHUNK) {
        let b = data.batch(chunk)?;
        for d in 0..k {
            let c = LatentCode::one_hot(d, k)?;
            let out = g.generate(&b.x, &codes_tensor(&vec![&c; chunk.len()])?)?;
            for (j, &i) in chunk.iter().enumerate() {
                let img = out.select(j).reshape(&[3, e, e])?;
                if hue_oracle(&img, &data.samples[i].mask, k)? == Some(d) {
                    hits += 1;
                }
                total += 1;
            }
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricReport {
    pub diversity: f64,
    pub reference_diversity: f64,
    pub consistency: f64,
    pub domain_accuracy: Option<f64>,
    pub samples: usize,
    pub pairs: usize,
    pub surrogate_seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, TaskSpec};

    #[test]
    fn identical_and_orthogonal() {
        let net = SurrogateNet::new(42);
        let mut rng = Prng::new(1);
        let a = Tensor::rand_uniform(&[3, 16, 16], -1.0, 1.0, &mut rng);
        assert_eq!(perceptual_distance(&a, &a, &net).unwrap(), 0.0);
        let fa: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 0.0]).collect();
        let fb: Vec<Vec<f64>> = (0..5).map(|_| vec![0.0, 2.0]).collect();
        assert_eq!(feature_distance(&fa, &fb).unwrap(), 5.0);
    }

    #[test]
    fn zero_norm_rules() {
        let z = vec![vec![0.0, 0.0]];
        assert_eq!(feature_distance(&z, &z).unwrap(), 0.0);
        assert!(matches!(feature_distance(&z, &[vec![1.0, 0.0]]), Err(Error::ZeroNormFeature(0))));
    }

    #[test]
    fn symmetric_and_bounded() {
        let net = SurrogateNet::new(42);
        let mut rng = Prng::new(2);
        for _ in 0..5 {
            let a = Tensor::rand_uniform(&[3, 16, 16], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(&[3, 16, 16], -1.0, 1.0, &mut rng);
            let d = perceptual_distance(&a, &b, &net).unwrap();
            assert_eq!(d, perceptual_distance(&b, &a, &net).unwrap());
            assert!((0.0..=5.0).contains(&d));
        }
    }

    #[test]
    fn analytic_generator_metrics() {
        let d = gen_dataset(&TaskSpec {
            extent: 16,
            samples: 12,
            ..Default::default()
        })
        .unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let b = d.batch(&idx).unwrap();
        assert_eq!(oracle_codes(&b, 4).unwrap(), b.codes);
        let net = SurrogateNet::new(42);
        let r = reference_diversity(&d, &idx, &net, &mut Prng::new(0), 20).unwrap();
        assert!(r > 0.0);
    }
}
