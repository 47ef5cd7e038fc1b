use super::Mode;
use crate::tensor::{Prng, Tensor};

/// Inverted-dropout mask: 0 with probability `rate`, else 1 / (1 - rate).
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Prng) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect()
}

pub fn dropout(t: &Tensor, rate: f64, rng: &mut Prng, mode: Mode) -> Tensor {
    if mode == Mode::Eval || rate == 0.0 {
        return t.clone();
    }
    let mask = dropout_mask(t.len(), rate, rng);
    let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(t.shape(), data).expect("mask matches tensor")
}
