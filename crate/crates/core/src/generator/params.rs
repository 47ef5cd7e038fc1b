use serde::Serialize;

use super::{GeneratorSpec, Injection};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerParams {
    pub name: String,
    /// Conv weights that exist without any latent code.
    pub conv_weights: usize,
    /// Weights added for the latent code: bias-net rows or latent input taps.
    pub injection: usize,
    /// Learnable scale/shift entries.
    pub affine: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub base_conv_weights: usize,
    pub injection_added: usize,
    pub affine: usize,
    pub layers: Vec<LayerParams>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.base_conv_weights + self.injection_added + self.affine
    }
}

/// Parameter accounting straight from the layout, without allocating weights.
pub fn count_params(spec: &GeneratorSpec) -> ParamCount {
    let s = spec.latent_dim;
    let layers: Vec<LayerParams> = spec
        .layout()
        .into_iter()
        .map(|l| {
            let k2 = l.kernel * l.kernel;
            let latent_in = match (spec.injection, l.name.as_str()) {
                (Injection::Lci, "stem") => s,
                _ => 0,
            };
            let conv_weights = (l.in_channels - latent_in) * l.out_channels * k2;
            let mut injection = latent_in * l.out_channels * k2;
            let mut affine = 0;
            if let Some(kind) = l.norm {
                if kind.is_central_biasing() {
                    injection += s * l.out_channels;
                    if spec.cbn_affine {
                        affine = 2 * l.out_channels;
                    }
                } else {
                    affine = 2 * l.out_channels;
                }
            }
            LayerParams {
                name: l.name,
                conv_weights,
                injection,
                affine,
            }
        })
        .collect();
    ParamCount {
        base_conv_weights: layers.iter().map(|l| l.conv_weights).sum(),
        injection_added: layers.iter().map(|l| l.injection).sum(),
        affine: layers.iter().map(|l| l.affine).sum(),
        layers,
    }
}

/// Compact size with 1024-based K/M units and one decimal ("27.5K", "8M").
pub fn format_units(n: usize) -> String {
    let (v, unit) = if n >= 1 << 20 {
        (n as f64 / (1u64 << 20) as f64, "M")
    } else if n >= 1 << 10 {
        (n as f64 / 1024.0, "K")
    } else {
        return n.to_string();
    };
    let s = format!("{v:.1}");
    let s = s.strip_suffix(".0").unwrap_or(&s);
    format!("{s}{unit}")
}
