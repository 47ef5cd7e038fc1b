use serde::{Deserialize, Serialize};

use super::{Bound, ParamId, ParamStore};
use crate::autograd::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Prng, Tensor};

/// Range constraint applied to the raw bias f(c).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasConstraint {
    Tanh,
    Sigmoid,
    None,
}

impl BiasConstraint {
    fn activation(self) -> Activation {
        match self {
            BiasConstraint::Tanh => Activation::Tanh,
            BiasConstraint::Sigmoid => Activation::Sigmoid,
            BiasConstraint::None => Activation::Identity,
        }
    }
}

impl std::str::FromStr for BiasConstraint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tanh" => Ok(BiasConstraint::Tanh),
            "sigmoid" => Ok(BiasConstraint::Sigmoid),
            "none" => Ok(BiasConstraint::None),
            _ => Err(format!("unknown bias constraint '{s}' (tanh | sigmoid | none)")),
        }
    }
}

/// b(c) = constraint(F c) with F an [R, S] matrix and no additive term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasNet {
    pub weight: ParamId,
    pub latent_dim: usize,
    pub channels: usize,
    pub constraint: BiasConstraint,
}

impl BiasNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        latent_dim: usize,
        channels: usize,
        init_std: f64,
        constraint: BiasConstraint,
        rng: &mut Prng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.bias_net"),
            Tensor::randn(&[channels, latent_dim], init_std, rng),
        );
        Self {
            weight,
            latent_dim,
            channels,
            constraint,
        }
    }

    pub fn param_count(&self) -> usize {
        self.latent_dim * self.channels
    }

    /// [B, S] codes to [B, R] biases.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, codes: Var) -> Result<Var> {
        let (_, s) = tape.value(codes).dims2()?;
        if s != self.latent_dim {
            return Err(Error::Dimension {
                expected: self.latent_dim,
                got: s,
            });
        }
        let raw = tape.matmul(codes, bound[self.weight], true)?;
        Ok(tape.activation(raw, self.constraint.activation()))
    }
}

/// Bias vector b for a single code.
pub fn bias_net_forward(net: &BiasNet, store: &ParamStore, code: &[f64]) -> Result<Vec<f64>> {
    if code.len() != net.latent_dim {
        return Err(Error::Dimension {
            expected: net.latent_dim,
            got: code.len(),
        });
    }
    let w = store.get(net.weight).data();
    let act = net.constraint.activation();
    Ok((0..net.channels)
        .map(|r| {
            let dot: f64 = code
                .iter()
                .zip(&w[r * net.latent_dim..(r + 1) * net.latent_dim])
                .map(|(c, f)| c * f)
                .sum();
            act.apply(dot)
        })
        .collect())
}
