use serde::{Deserialize, Serialize};

use super::{BiasConstraint, BiasNet, Bound, Mode, ParamId, ParamStore};
use crate::autograd::{Center, Spread, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{channel_stats, Prng, StatScope, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Bn,
    In,
    /// Central biasing over batch statistics.
    Cbbn,
    /// Central biasing over instance statistics.
    Cbin,
}

impl NormKind {
    pub fn is_central_biasing(self) -> bool {
        matches!(self, NormKind::Cbbn | NormKind::Cbin)
    }

    pub fn uses_batch_stats(self) -> bool {
        matches!(self, NormKind::Bn | NormKind::Cbbn)
    }

    /// The central-biasing counterpart of a plain normalization.
    pub fn central_biasing(self) -> NormKind {
        match self {
            NormKind::Bn | NormKind::Cbbn => NormKind::Cbbn,
            NormKind::In | NormKind::Cbin => NormKind::Cbin,
        }
    }

    fn name(self) -> &'static str {
        match self {
            NormKind::Bn => "BN",
            NormKind::In => "IN",
            NormKind::Cbbn => "CBBN",
            NormKind::Cbin => "CBIN",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bn" | "batch" => Ok(NormKind::Bn),
            "in" | "instance" => Ok(NormKind::In),
            "cbbn" => Ok(NormKind::Cbbn),
            "cbin" => Ok(NormKind::Cbin),
            _ => Err(format!("unknown norm '{s}' (bn | in | cbbn | cbin)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// Running per-channel statistics for inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub momentum: f64,
    pub updates: u64,
}

impl MovingStats {
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            momentum,
            updates: 0,
        }
    }

    pub fn update(&mut self, u: &StatUpdate) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(&u.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.std.iter_mut().zip(&u.std) {
            *r = m * *r + (1.0 - m) * b;
        }
        self.updates += 1;
    }
}

/// Batch statistics observed in a training-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StatUpdate {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormOptions {
    pub eps: f64,
    /// Learnable scale/shift on central-biasing layers (off by default).
    pub cbn_affine: bool,
    pub constraint: BiasConstraint,
    pub bias_init_std: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            cbn_affine: false,
            constraint: BiasConstraint::Tanh,
            bias_init_std: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormLayer {
    pub kind: NormKind,
    pub channels: usize,
    pub eps: f64,
    pub affine: Option<AffineParams>,
    pub moving: Option<MovingStats>,
    pub bias_net: Option<BiasNet>,
}

pub struct NormOutput {
    pub out: Var,
    pub update: Option<StatUpdate>,
}

impl NormLayer {
    /// `latent_dim` is required for central-biasing kinds.
    pub fn new(
        kind: NormKind,
        channels: usize,
        latent_dim: Option<usize>,
        store: &mut ParamStore,
        name: &str,
        opts: NormOptions,
        rng: &mut Prng,
    ) -> Result<Self> {
        let affine = if !kind.is_central_biasing() || opts.cbn_affine {
            Some(AffineParams {
                gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
                beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            })
        } else {
            None
        };
        let bias_net = if kind.is_central_biasing() {
            let s = latent_dim.ok_or_else(|| {
                Error::InvalidSpec(format!("{} layer needs a latent dimension", kind.name()))
            })?;
            Some(BiasNet::new(
                store,
                name,
                s,
                channels,
                opts.bias_init_std,
                opts.constraint,
                rng,
            ))
        } else {
            None
        };
        Ok(Self {
            kind,
            channels,
            eps: opts.eps,
            affine,
            moving: kind
                .uses_batch_stats()
                .then(|| MovingStats::new(channels, BN_MOMENTUM)),
            bias_net,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        z: Var,
        codes: Option<Var>,
        mode: Mode,
    ) -> Result<NormOutput> {
        let (b, c, _, _) = tape.value(z).dims4()?;
        if c != self.channels {
            return Err(Error::Dimension {
                expected: self.channels,
                got: c,
            });
        }
        let train = mode == Mode::Train;
        if train && self.kind.uses_batch_stats() && b < 2 {
            return Err(Error::BatchSizeOne(self.kind.name()));
        }
        let moving = || {
            self.moving
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec(format!("{} layer without moving stats", self.kind.name())))
        };

        let mut update = None;
        if train && self.kind.uses_batch_stats() {
            let st = channel_stats(tape.value(z), StatScope::Batch)?;
            update = Some(StatUpdate {
                mean: st.means.into_data(),
                std: st.stds.into_data(),
            });
        }
        let (center, spread) = match (self.kind, train) {
            (NormKind::Bn, true) => (Center::Batch, Spread::Batch),
            (NormKind::Bn, false) => {
                let m = moving()?;
                (Center::Fixed(m.mean.clone()), Spread::Fixed(m.std.clone()))
            }
            (NormKind::Cbbn, true) => (Center::Instance, Spread::Batch),
            (NormKind::Cbbn, false) => (Center::Instance, Spread::Fixed(moving()?.std.clone())),
            (NormKind::In | NormKind::Cbin, _) => (Center::Instance, Spread::Instance),
        };
        let mut out = tape.normalize(z, center, spread, self.eps)?;
        if let Some(a) = &self.affine {
            out = tape.scale_shift(out, bound[a.gamma], bound[a.beta])?;
        }
        if self.kind.is_central_biasing() {
            let net = self
                .bias_net
                .as_ref()
                .ok_or(Error::MissingBiasNet(self.kind.name()))?;
            let codes = codes.ok_or_else(|| {
                Error::InvalidSpec(format!("{} layer needs latent codes", self.kind.name()))
            })?;
            let bias = net.forward(tape, bound, codes)?;
            out = tape.add_channel_bias(out, bias)?;
        }
        Ok(NormOutput { out, update })
    }

    pub fn apply_update(&mut self, u: &StatUpdate) {
        if let Some(m) = &mut self.moving {
            m.update(u);
        }
    }

    pub fn param_count(&self) -> usize {
        self.affine.as_ref().map_or(0, |_| 2 * self.channels)
            + self.bias_net.as_ref().map_or(0, BiasNet::param_count)
    }
}

fn run_standalone(
    z: &Tensor,
    codes: Option<&Tensor>,
    layer: &mut NormLayer,
    store: &ParamStore,
    mode: Mode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let cv = codes.map(|c| tape.constant(c.clone()));
    let out = layer.forward(&mut tape, &bound, zv, cv, mode)?;
    if let Some(u) = &out.update {
        layer.apply_update(u);
    }
    Ok(tape.value(out.out).clone())
}

fn expect_kind(layer: &NormLayer, ok: &[NormKind], what: &str) -> Result<()> {
    if !ok.contains(&layer.kind) {
        return Err(Error::InvalidSpec(format!(
            "{what} called on a {} layer",
            layer.kind.name()
        )));
    }
    Ok(())
}

/// Batch normalization; training mode updates the layer's moving stats.
pub fn batch_norm(z: &Tensor, layer: &mut NormLayer, store: &ParamStore, mode: Mode) -> Result<Tensor> {
    expect_kind(layer, &[NormKind::Bn], "batch_norm")?;
    run_standalone(z, None, layer, store, mode)
}

pub fn instance_norm(z: &Tensor, layer: &NormLayer, store: &ParamStore) -> Result<Tensor> {
    expect_kind(layer, &[NormKind::In], "instance_norm")?;
    let mut scratch = layer.clone();
    run_standalone(z, None, &mut scratch, store, Mode::Eval)
}

/// CBBN / CBIN on a conv output computed without latent channels.
/// `codes` is [B, S].
pub fn central_biasing_norm(
    y: &Tensor,
    codes: &Tensor,
    layer: &mut NormLayer,
    store: &ParamStore,
    mode: Mode,
) -> Result<Tensor> {
    expect_kind(layer, &[NormKind::Cbbn, NormKind::Cbin], "central_biasing_norm")?;
    if layer.bias_net.is_none() {
        return Err(Error::MissingBiasNet(layer.kind.name()));
    }
    run_standalone(y, Some(codes), layer, store, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::bias_net_forward;

    fn layer(kind: NormKind, c: usize, s: Option<usize>, seed: u64) -> (NormLayer, ParamStore) {
        let mut store = ParamStore::new();
        let l = NormLayer::new(
            kind,
            c,
            s,
            &mut store,
            "n",
            NormOptions::default(),
            &mut Prng::new(seed),
        )
        .unwrap();
        (l, store)
    }

    #[test]
    fn bn_constant_batch_is_zero() {
        let (mut l, store) = layer(NormKind::Bn, 2, None, 0);
        let out = batch_norm(&Tensor::full(&[3, 2, 2, 2], 4.0), &mut l, &store, Mode::Train).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn bn_two_constant_instances() {
        let (mut l, mut store) = layer(NormKind::Bn, 1, None, 0);
        let z = Tensor::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let out = batch_norm(&z, &mut l.clone(), &store, Mode::Train).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-4 && (out.data()[1] - 1.0).abs() < 1e-4);

        let a = l.affine.clone().unwrap();
        store.get_mut(a.gamma).data_mut()[0] = 2.0;
        store.get_mut(a.beta).data_mut()[0] = 1.0;
        let out = batch_norm(&z, &mut l, &store, Mode::Train).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-4 && (out.data()[1] - 3.0).abs() < 1e-4);
        let m = l.moving.as_ref().unwrap();
        assert!((m.mean[0] - 0.2).abs() < 1e-12 && (m.std[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.updates, 1);
    }

    #[test]
    fn bn_rejects_single_sample_training() {
        let (mut l, store) = layer(NormKind::Bn, 1, None, 0);
        let z = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            batch_norm(&z, &mut l, &store, Mode::Train),
            Err(Error::BatchSizeOne(_))
        ));
        assert!(batch_norm(&z, &mut l, &store, Mode::Eval).is_ok());
    }

    #[test]
    fn bn_eval_uses_moving_stats() {
        let (mut l, store) = layer(NormKind::Bn, 1, None, 0);
        let z = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let out = batch_norm(&z, &mut l, &store, Mode::Eval).unwrap();
        // Initial moving stats are mean 0, std 1.
        assert!((out.data()[0] - 1.0 / (1.0 + DEFAULT_EPS)).abs() < 1e-15);
    }

    #[test]
    fn in_examples() {
        let (l, store) = layer(NormKind::In, 1, None, 0);
        let z = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let out = instance_norm(&z, &l, &store).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-4 && (out.data()[1] - 1.0).abs() < 1e-4);
        assert_eq!(instance_norm(&Tensor::full(&[1, 1, 3, 3], 2.0), &l, &store).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn in_ignores_per_channel_offsets() {
        let mut rng = Prng::new(8);
        let (l, store) = layer(NormKind::In, 3, None, 0);
        let z = Tensor::randn(&[2, 3, 5, 5], 1.0, &mut rng);
        let mut shifted = z.clone();
        for (i, plane) in shifted.data_mut().chunks_mut(25).enumerate() {
            let o = (i as f64 - 2.0) * 3.7;
            plane.iter_mut().for_each(|v| *v += o);
        }
        let a = instance_norm(&z, &l, &store).unwrap();
        let b = instance_norm(&shifted, &l, &store).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
    }

    #[test]
    fn cbin_example() {
        let (mut l, mut store) = layer(NormKind::Cbin, 1, Some(1), 0);
        let w = l.bias_net.as_ref().unwrap().weight;
        store.get_mut(w).data_mut()[0] = 0.5f64.atanh();
        let y = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let c = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let out = central_biasing_norm(&y, &c, &mut l, &store, Mode::Train).unwrap();
        assert!((out.data()[0] + 0.5).abs() < 1e-4 && (out.data()[1] - 1.5).abs() < 1e-4);
    }

    #[test]
    fn cbin_mean_is_bias_for_any_input() {
        let mut rng = Prng::new(21);
        let (mut l, store) = layer(NormKind::Cbin, 4, Some(3), 5);
        let code = [0.3, -0.8, 0.1];
        let b = bias_net_forward(l.bias_net.as_ref().unwrap(), &store, &code).unwrap();
        let y = Tensor::randn(&[3, 4, 6, 6], 2.0, &mut rng);
        let codes = Tensor::new(&[3, 3], code.repeat(3)).unwrap();
        let out = central_biasing_norm(&y, &codes, &mut l, &store, Mode::Train).unwrap();
        let means = out.spatial_means().unwrap();
        for (i, m) in means.data().iter().enumerate() {
            assert!((m - b[i % 4]).abs() < 1e-9);
        }
    }

    #[test]
    fn cbbn_removes_instance_mean_and_tracks_std() {
        let mut rng = Prng::new(3);
        let (mut l, store) = layer(NormKind::Cbbn, 2, Some(2), 1);
        let y = Tensor::randn(&[4, 2, 5, 5], 1.5, &mut rng);
        let codes = Tensor::new(&[4, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = central_biasing_norm(&y, &codes, &mut l, &store, Mode::Train).unwrap();
        let net = l.bias_net.clone().unwrap();
        let b0 = bias_net_forward(&net, &store, &[1.0, 0.0]).unwrap();
        let means = out.spatial_means().unwrap();
        assert!((means.get(&[0, 1]) - b0[1]).abs() < 1e-9);
        assert!((means.get(&[1, 0]) - b0[0]).abs() < 1e-9);
        assert_eq!(l.moving.as_ref().unwrap().updates, 1);

        let single = y.select(0);
        let mut fresh = l.clone();
        assert!(matches!(
            central_biasing_norm(&single, &codes.select(0), &mut fresh, &store, Mode::Train),
            Err(Error::BatchSizeOne(_))
        ));
        assert!(central_biasing_norm(&single, &codes.select(0), &mut fresh, &store, Mode::Eval).is_ok());
    }

    #[test]
    fn cbn_without_bias_net_is_an_error() {
        let (mut l, store) = layer(NormKind::Cbin, 1, Some(1), 0);
        l.bias_net = None;
        let y = Tensor::zeros(&[1, 1, 2, 2]);
        let c = Tensor::zeros(&[1, 1]);
        assert!(matches!(
            central_biasing_norm(&y, &c, &mut l, &store, Mode::Eval),
            Err(Error::MissingBiasNet(_))
        ));
    }
}
