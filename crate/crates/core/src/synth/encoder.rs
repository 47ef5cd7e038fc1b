use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Tape, Var};
use crate::error::Result;
use crate::layers::{Bound, ParamId, ParamStore};
use crate::tensor::{ConvGeometry, Padding, Prng, Tensor};

/// Two stride-2 convs, global average pool, linear map, tanh.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StyleEncoder {
    pub conv1: ParamId,
    pub conv2: ParamId,
    pub linear: ParamId,
    pub width: usize,
    pub code_dim: usize,
}

impl StyleEncoder {
    pub fn new(store: &mut ParamStore, in_channels: usize, width: usize, code_dim: usize, std: f64, rng: &mut Prng) -> Self {
        let conv1 = store.add("enc.conv1", Tensor::randn(&[width, in_channels, 4, 4], std, rng));
        let conv2 = store.add("enc.conv2", Tensor::randn(&[2 * width, width, 4, 4], std, rng));
        let linear = store.add("enc.linear", Tensor::randn(&[code_dim, 2 * width], std, rng));
        Self {
            conv1,
            conv2,
            linear,
            width,
            code_dim,
        }
    }

    /// [B, C, E, E] images to [B, S] codes in (-1, 1).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, images: Var) -> Result<Var> {
        let g = ConvGeometry::new(2, 1, Padding::Zero);
        let h = tape.conv2d(images, bound[self.conv1], g)?;
        let h = tape.activation(h, Activation::Relu);
        let h = tape.conv2d(h, bound[self.conv2], g)?;
        let h = tape.activation(h, Activation::Relu);
        let pooled = tape.global_avg_pool(h)?;
        let raw = tape.matmul(pooled, bound[self.linear], true)?;
        Ok(tape.activation(raw, Activation::Tanh))
    }

    pub fn encode(&self, store: &ParamStore, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad_check, GradCheckOptions};

    #[test]
    fn shape_and_range() {
        let mut store = ParamStore::new();
        let mut rng = Prng::new(0);
        let enc = StyleEncoder::new(&mut store, 3, 4, 5, 1.0, &mut rng);
        let x = Tensor::randn(&[2, 3, 8, 8], 3.0, &mut rng);
        let c = enc.encode(&store, &x).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert!(c.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = Prng::new(1);
        let enc = StyleEncoder::new(&mut store, 3, 2, 3, 0.5, &mut rng);
        let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
        let target = Tensor::rand_uniform(&[2, 3], -0.5, 0.5, &mut rng);
        let rep = grad_check(store.tensors(), &GradCheckOptions::default(), |tape, vars| {
            let bound = crate::layers::Bound::from_vars(vars.to_vec());
            let xv = tape.constant(x.clone());
            let c = enc.forward(tape, &bound, xv)?;
            let t = tape.constant(target.clone());
            tape.mean_abs_diff(c, t)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
