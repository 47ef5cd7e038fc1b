use crate::autograd::{Activation, Tape, Var};
use crate::error::Result;
use crate::layers::{Bound, ParamId, ParamStore};
use crate::tensor::{ConvGeometry, Padding, Prng, Tensor};

/// Small code-conditioned critic: (image; code planes) through two stride-2
/// convs, global average pool and a linear score.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub store: ParamStore,
    conv1: ParamId,
    conv2: ParamId,
    linear: ParamId,
}

impl Discriminator {
    pub fn new(in_channels: usize, code_dim: usize, width: usize, std: f64, rng: &mut Prng) -> Self {
        let mut store = ParamStore::new();
        let conv1 = store.add("disc.conv1", Tensor::randn(&[width, in_channels + code_dim, 4, 4], std, rng));
        let conv2 = store.add("disc.conv2", Tensor::randn(&[2 * width, width, 4, 4], std, rng));
        let linear = store.add("disc.linear", Tensor::randn(&[1, 2 * width], std, rng));
        Self {
            store,
            conv1,
            conv2,
            linear,
        }
    }

    /// [B, C, E, E] images and [B, S] codes to [B, 1] scores.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, images: Var, codes: Var) -> Result<Var> {
        let (_, _, h, w) = tape.value(images).dims4()?;
        let planes = tape.replicate(codes, h, w)?;
        let x = tape.concat_channels(&[images, planes])?;
        let g = ConvGeometry::new(2, 1, Padding::Zero);
        let x = tape.conv2d(x, bound[self.conv1], g)?;
        let x = tape.activation(x, Activation::Relu);
        let x = tape.conv2d(x, bound[self.conv2], g)?;
        let x = tape.activation(x, Activation::Relu);
        let x = tape.global_avg_pool(x)?;
        tape.matmul(x, bound[self.linear], true)
    }
}
