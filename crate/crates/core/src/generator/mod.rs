//! Encoder/residual/decoder generator with either central-biasing
//! normalization or latent channels concatenated at the input.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
pub use params::{count_params, format_units, LayerParams, ParamCount};

use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    dropout_mask, BiasConstraint, Bound, Mode, NormKind, NormLayer, NormOptions, ParamId,
    ParamStore, StatUpdate, DEFAULT_EPS,
};
use crate::tensor::{ConvGeometry, Padding, Prng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Injection {
    Cbn,
    Lci,
}

impl std::str::FromStr for Injection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cbn" => Ok(Injection::Cbn),
            "lci" | "concat" => Ok(Injection::Lci),
            _ => Err(format!("unknown injection '{s}' (cbn | lci)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub extent: usize,
    pub latent_dim: usize,
    pub injection: Injection,
    /// Norm family for the stem, downsampling and residual stages (BN or IN);
    /// the CBN variant uses its central-biasing counterpart there.
    pub base_norm: NormKind,
    pub up_norm: NormKind,
    pub padding: Padding,
    pub res_blocks: usize,
    pub dropout: f64,
    pub bias_constraint: BiasConstraint,
    pub cbn_affine: bool,
    pub init_std: f64,
    pub eps: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            base_width: 64,
            extent: 32,
            latent_dim: 4,
            injection: Injection::Cbn,
            base_norm: NormKind::In,
            up_norm: NormKind::In,
            padding: Padding::Reflection,
            res_blocks: 6,
            dropout: 0.0,
            bias_constraint: BiasConstraint::Tanh,
            cbn_affine: false,
            init_std: 0.02,
            eps: DEFAULT_EPS,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.extent % 4 != 0 || self.extent < 8 {
            return bad(format!("extent {} must be a multiple of 4 and at least 8", self.extent));
        }
        if self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.latent_dim == 0 {
            return bad("latent dimension must be positive".into());
        }
        for k in [self.base_norm, self.up_norm] {
            if k.is_central_biasing() {
                return bad(format!("{k:?} is not a base norm; choose bn or in and set injection"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Norm used in the stem, downsampling and residual stages.
    pub fn stage_norm(&self) -> NormKind {
        match self.injection {
            Injection::Cbn => self.base_norm.central_biasing(),
            Injection::Lci => self.base_norm,
        }
    }

    pub fn uses_batch_stats(&self) -> bool {
        self.base_norm == NormKind::Bn || self.up_norm == NormKind::Bn
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let w = self.base_width;
        let stage = Some(self.stage_norm());
        let stem_in = match self.injection {
            Injection::Lci => self.in_channels + self.latent_dim,
            Injection::Cbn => self.in_channels,
        };
        let conv = |name: String, cin, cout, k, stride, pad| LayerShape {
            name,
            op: UnitOp::Conv { stride, pad },
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            norm: stage,
            act: Activation::Relu,
        };
        let mut v = vec![
            conv("stem".into(), stem_in, w, 7, 1, 3),
            conv("down1".into(), w, 2 * w, 4, 2, 1),
            conv("down2".into(), 2 * w, 4 * w, 4, 2, 1),
        ];
        for b in 0..self.res_blocks {
            for u in 0..2 {
                let mut l = conv(format!("res{}.{}", b + 1, u + 1), 4 * w, 4 * w, 3, 1, 1);
                if u == 1 {
                    // ReLU then skip-add; the block output is the sum.
                    l.act = Activation::Identity;
                }
                v.push(l);
            }
        }
        let up = |name: &str, cin, cout| LayerShape {
            name: name.into(),
            op: UnitOp::Transposed { stride: 2, pad: 1 },
            in_channels: cin,
            out_channels: cout,
            kernel: 4,
            norm: Some(self.up_norm),
            act: Activation::Relu,
        };
        v.push(up("up1", 4 * w, 2 * w));
        v.push(up("up2", 2 * w, w));
        v.push(LayerShape {
            name: "out".into(),
            op: UnitOp::Transposed { stride: 1, pad: 3 },
            in_channels: w,
            out_channels: self.out_channels,
            kernel: 7,
            norm: None,
            act: Activation::Tanh,
        });
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitOp {
    Conv { stride: usize, pad: usize },
    Transposed { stride: usize, pad: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub op: UnitOp,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub norm: Option<NormKind>,
    pub act: Activation,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub shape: LayerShape,
    pub weight: ParamId,
    pub norm: Option<NormLayer>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub store: ParamStore,
    pub units: Vec<Unit>,
}

/// Result of a tape forward pass.
pub struct Forward {
    pub out: Var,
    /// Post-normalization features (before activation) by unit index.
    pub taps: Vec<(usize, Var)>,
    pub updates: Vec<(usize, StatUpdate)>,
}

pub fn build_generator(spec: &GeneratorSpec, rng: &mut Prng) -> Result<Generator> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let opts = NormOptions {
        eps: spec.eps,
        cbn_affine: spec.cbn_affine,
        constraint: spec.bias_constraint,
        bias_init_std: spec.init_std,
    };
    let mut units = Vec::new();
    for shape in spec.layout() {
        let dims = match shape.op {
            UnitOp::Conv { .. } => [shape.out_channels, shape.in_channels, shape.kernel, shape.kernel],
            UnitOp::Transposed { .. } => [shape.in_channels, shape.out_channels, shape.kernel, shape.kernel],
        };
        let weight = store.add(format!("{}.weight", shape.name), Tensor::randn(&dims, spec.init_std, rng));
        let norm = match shape.norm {
            Some(kind) => Some(NormLayer::new(
                kind,
                shape.out_channels,
                kind.is_central_biasing().then_some(spec.latent_dim),
                &mut store,
                &shape.name,
                opts,
                rng,
            )?),
            None => None,
        };
        units.push(Unit { shape, weight, norm });
    }
    Ok(Generator {
        spec: spec.clone(),
        store,
        units,
    })
}

impl Generator {
    pub fn first_res_unit(&self) -> usize {
        3
    }

    /// Index of the last normalized unit before upsampling (the last CBN
    /// layer in the CBN variant); the default probe layer.
    pub fn last_stage_norm_unit(&self) -> usize {
        2 + 2 * self.spec.res_blocks
    }

    pub fn norm_units(&self) -> Vec<usize> {
        (0..self.units.len())
            .filter(|&i| self.units[i].norm.is_some())
            .collect()
    }

    /// Padding accumulated in front of a unit's output, counted in that
    /// unit's own pixels.
    pub fn cumulative_pad(&self, unit: usize) -> usize {
        let mut pad = 0usize;
        for u in &self.units[..=unit] {
            match u.shape.op {
                UnitOp::Conv { stride, pad: p } => pad = pad.div_ceil(stride) + p,
                UnitOp::Transposed { stride, pad: p } => pad = pad * stride + p,
            }
        }
        pad
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        codes: Var,
        mode: Mode,
        mut rng: Option<&mut Prng>,
    ) -> Result<Forward> {
        let spec = &self.spec;
        let (b, c, h, w) = tape.value(x).dims4()?;
        if c != spec.in_channels {
            return Err(Error::Dimension {
                expected: spec.in_channels,
                got: c,
            });
        }
        let (cb, s) = tape.value(codes).dims2()?;
        if cb != b || s != spec.latent_dim {
            return Err(Error::Shape(format!(
                "codes {:?} do not match batch {b} and latent dim {}",
                tape.value(codes).shape(),
                spec.latent_dim
            )));
        }
        let mut cur = match spec.injection {
            Injection::Lci => {
                let planes = tape.replicate(codes, h, w)?;
                tape.concat_channels(&[x, planes])?
            }
            Injection::Cbn => x,
        };
        let mut taps = Vec::new();
        let mut updates = Vec::new();
        let first_res = self.first_res_unit();
        let res_end = first_res + 2 * spec.res_blocks;
        let mut skip = None;
        for (i, u) in self.units.iter().enumerate() {
            let in_res = (first_res..res_end).contains(&i);
            let first_of_block = in_res && (i - first_res) % 2 == 0;
            if first_of_block {
                skip = Some(cur);
            }
            cur = match u.shape.op {
                UnitOp::Conv { stride, pad } => {
                    tape.conv2d(cur, bound[u.weight], ConvGeometry::new(stride, pad, spec.padding))?
                }
                UnitOp::Transposed { stride, pad } => {
                    tape.transposed_conv2d(cur, bound[u.weight], stride, pad)?
                }
            };
            if let Some(norm) = &u.norm {
                let o = norm.forward(tape, bound, cur, Some(codes), mode)?;
                if let Some(up) = o.update {
                    updates.push((i, up));
                }
                cur = o.out;
                taps.push((i, cur));
            }
            cur = tape.activation(cur, u.shape.act);
            if first_of_block && mode == Mode::Train && spec.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let mask = dropout_mask(tape.value(cur).len(), spec.dropout, r);
                    cur = tape.mask_mul(cur, mask)?;
                }
            }
            if in_res && !first_of_block {
                let s = skip.take().expect("skip set at block start");
                cur = tape.add(cur, s)?;
            }
        }
        Ok(Forward { out: cur, taps, updates })
    }

    /// Forward pass on plain tensors. Training-mode statistic updates are
    /// discarded; dropout is not applied.
    pub fn run(&self, x: &Tensor, codes: &Tensor, mode: Mode) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(codes.clone());
        let f = self.forward_tape(&mut tape, &bound, xv, cv, mode, None)?;
        let taps = f
            .taps
            .iter()
            .map(|&(i, v)| (i, tape.value(v).clone()))
            .collect();
        Ok((tape.value(f.out).clone(), taps))
    }

    /// Inference-mode translation.
    pub fn generate(&self, x: &Tensor, codes: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, codes, Mode::Eval)?.0)
    }

    pub fn apply_updates(&mut self, updates: &[(usize, StatUpdate)]) {
        for (i, u) in updates {
            if let Some(n) = &mut self.units[*i].norm {
                n.apply_update(u);
            }
        }
    }

    /// All bias-net weight ids (empty for the LCI variant).
    pub fn bias_net_params(&self) -> Vec<ParamId> {
        self.units
            .iter()
            .filter_map(|u| u.norm.as_ref()?.bias_net.as_ref().map(|b| b.weight))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(injection: Injection, base: NormKind) -> GeneratorSpec {
        GeneratorSpec {
            base_width: 4,
            extent: 8,
            latent_dim: 2,
            injection,
            base_norm: base,
            up_norm: base,
            res_blocks: 2,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_range() {
        let g = build_generator(&small(Injection::Cbn, NormKind::In), &mut Prng::new(1)).unwrap();
        let mut rng = Prng::new(2);
        let x = Tensor::rand_uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
        let c = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (y, taps) = g.run(&x, &c, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 3, 8, 8]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
        assert_eq!(taps.len(), 3 + 4 + 2);
        assert_eq!(taps[0].1.shape(), &[2, 4, 8, 8]);
        assert_eq!(taps[3].1.shape(), &[2, 16, 2, 2]);
    }

    #[test]
    fn rejects_bad_extent() {
        let spec = GeneratorSpec {
            extent: 30,
            ..small(Injection::Cbn, NormKind::In)
        };
        assert!(matches!(build_generator(&spec, &mut Prng::new(0)), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn cumulative_pad_counts() {
        let g = build_generator(&small(Injection::Lci, NormKind::In), &mut Prng::new(1)).unwrap();
        assert_eq!(g.cumulative_pad(0), 3);
        assert_eq!(g.cumulative_pad(1), 3);
        assert_eq!(g.cumulative_pad(2), 3);
        assert_eq!(g.cumulative_pad(3), 4);
    }
}
