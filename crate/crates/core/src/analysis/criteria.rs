use serde::Serialize;

use super::{codes_tensor, LatentCode};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::layers::Mode;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriterionThresholds {
    pub consistency: f64,
    pub diversity: f64,
}

impl Default for CriterionThresholds {
    fn default() -> Self {
        Self {
            consistency: 1e-4,
            diversity: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub layer: usize,
    /// max over codes, input pairs and channels of the feature-mean gap.
    pub consistency_gap: f64,
    /// min over inputs and code pairs of the largest channel-mean gap.
    pub diversity_gap: f64,
    pub thresholds: CriterionThresholds,
    pub consistency_pass: bool,
    pub diversity_pass: bool,
}

/// Per-sample channel means [N, C] of the post-normalization features at
/// `layer` when every input is paired with code `c` in one training batch.
fn layer_means(g: &Generator, inputs: &Tensor, c: &LatentCode, layer: usize) -> Result<Tensor> {
    let (n, _, _, _) = inputs.dims4()?;
    let codes = codes_tensor(&vec![c; n])?;
    let (_, taps) = g.run(inputs, &codes, Mode::Train)?;
    let (_, t) = taps
        .into_iter()
        .find(|(i, _)| *i == layer)
        .ok_or_else(|| Error::InvalidSpec(format!("unit {layer} has no normalization")))?;
    t.spatial_means()
}

/// Consistency and diversity of feature means at a normalized unit (the
/// first one when `layer` is None). Inputs are batched together per code.
pub fn check_criteria(
    g: &Generator,
    inputs: &Tensor,
    codes: &[LatentCode],
    layer: Option<usize>,
    thresholds: CriterionThresholds,
) -> Result<CriterionReport> {
    let (n, _, _, _) = inputs.dims4()?;
    if n < 2 || codes.len() < 2 {
        return Err(Error::InvalidSpec("criteria need at least two inputs and two codes".into()));
    }
    let layer = match layer {
        Some(l) => l,
        None => *g
            .norm_units()
            .first()
            .ok_or_else(|| Error::InvalidSpec("generator has no normalization".into()))?,
    };
    let means: Vec<Tensor> = codes
        .iter()
        .map(|c| layer_means(g, inputs, c, layer))
        .collect::<Result<_>>()?;
    let ch = means[0].shape()[1];

    let mut consistency = 0.0f64;
    for m in &means {
        for r in 0..ch {
            let col: Vec<f64> = (0..n).map(|i| m.get(&[i, r])).collect();
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            consistency = consistency.max(hi - lo);
        }
    }
    let mut diversity = f64::INFINITY;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            for i in 0..n {
                let gap = (0..ch)
                    .map(|r| (means[a].get(&[i, r]) - means[b].get(&[i, r])).abs())
                    .fold(0.0, f64::max);
                diversity = diversity.min(gap);
            }
        }
    }
    Ok(CriterionReport {
        layer,
        consistency_gap: consistency,
        diversity_gap: diversity,
        thresholds,
        consistency_pass: consistency < thresholds.consistency,
        diversity_pass: diversity > thresholds.diversity,
    })
}
