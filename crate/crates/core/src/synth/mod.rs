//! Synthetic multi-mapping translation tasks: gray shapes recolored by a
//! hue (discrete domains) or by a style vector (hue plus brightness).

mod encoder;
mod oracle;

pub use encoder::StyleEncoder;
pub use oracle::{domain_hue, hue_angle, hue_oracle, ABSTAIN_CHROMA};

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::LatentCode;
use crate::error::{Error, Result};
use crate::tensor::io::{read_file, write_file, DType};
use crate::tensor::{Prng, Tensor};

pub const SATURATION: f64 = 0.4;
pub const BRIGHTNESS_SCALE: f64 = 0.2;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Discrete,
    Continuous,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "discrete" | "domain" => Ok(TaskKind::Discrete),
            "continuous" | "style" => Ok(TaskKind::Continuous),
            _ => Err(format!("unknown task '{s}' (discrete | continuous)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// K for the discrete task.
    pub domains: usize,
    /// S for the continuous task.
    pub style_dim: usize,
    pub extent: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Discrete,
            domains: 4,
            style_dim: 8,
            extent: 32,
            samples: 2048 + 256,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent % 4 != 0 || self.extent == 0 {
            return Err(Error::InvalidSpec(format!("extent {} is not a positive multiple of 4", self.extent)));
        }
        match self.kind {
            TaskKind::Discrete if self.domains < 2 => Err(Error::InvalidSpec("need at least 2 domains".into())),
            TaskKind::Continuous if self.style_dim < 2 => Err(Error::InvalidSpec("style dim must be at least 2".into())),
            _ => Ok(()),
        }
    }

    pub fn code_dim(&self) -> usize {
        match self.kind {
            TaskKind::Discrete => self.domains,
            TaskKind::Continuous => self.style_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// [3, E, E] gray rendering in [-1, 1].
    pub x: Tensor,
    /// [3, E, E] recolored target.
    pub y: Tensor,
    /// [E, E] foreground coverage in [0, 1].
    pub mask: Tensor,
    pub code: LatentCode,
    pub domain: Option<usize>,
}

/// Recolor the foreground of `x` according to `code`.
///
/// Each channel gains coverage * SATURATION * cos(h - 2*pi*ch/3); the
/// continuous task also adds coverage * BRIGHTNESS_SCALE * s1.
pub fn apply_hue(x: &Tensor, mask: &Tensor, code: &LatentCode, kind: TaskKind) -> Result<Tensor> {
    let (hue, bright) = match kind {
        TaskKind::Discrete => {
            let k = code
                .domain()
                .ok_or_else(|| Error::InvalidSpec("discrete task needs a one-hot code".into()))?;
            (domain_hue(k, code.dim()), 0.0)
        }
        TaskKind::Continuous => {
            let v = code.values();
            if v.len() < 2 {
                return Err(Error::Dimension { expected: 2, got: v.len() });
            }
            (PI * v[0], BRIGHTNESS_SCALE * v[1])
        }
    };
    let p = mask.len();
    if x.len() != 3 * p {
        return Err(Error::Shape(format!("image {:?} vs mask {:?}", x.shape(), mask.shape())));
    }
    let mut out = x.clone();
    for ch in 0..3 {
        let shift = SATURATION * (hue - 2.0 * PI * ch as f64 / 3.0).cos() + bright;
        for (o, a) in out.data_mut()[ch * p..(ch + 1) * p].iter_mut().zip(mask.data()) {
            *o += a * shift;
        }
    }
    Ok(out)
}

/// Anti-aliased coverage of a random rectangle or disc.
fn render_mask(e: usize, rng: &mut Prng) -> Tensor {
    let ef = e as f64;
    let disc = rng.uniform() < 0.5;
    let cx = rng.uniform_range(0.3, 0.7) * ef;
    let cy = rng.uniform_range(0.3, 0.7) * ef;
    let (hw, hh) = (rng.uniform_range(0.15, 0.3) * ef, rng.uniform_range(0.15, 0.3) * ef);
    let radius = rng.uniform_range(0.15, 0.3) * ef;
    let inside = |px: f64, py: f64| {
        if disc {
            (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius
        } else {
            (px - cx).abs() <= hw && (py - cy).abs() <= hh
        }
    };
    let ss = SUPERSAMPLE as f64;
    Tensor::from_fn(&[e, e], |i| {
        let (row, col) = ((i / e) as f64, (i % e) as f64);
        let mut hits = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let px = col + (sx as f64 + 0.5) / ss;
                let py = row + (sy as f64 + 0.5) / ss;
                hits += inside(px, py) as usize;
            }
        }
        hits as f64 / (ss * ss)
    })
}

pub fn gen_sample(spec: &TaskSpec, index: usize) -> Result<SyntheticSample> {
    let mut rng = Prng::new(spec.seed).split(index as u64);
    let e = spec.extent;
    let mask = render_mask(e, &mut rng);
    let bg = rng.uniform_range(-0.65, -0.55);
    let fg = rng.uniform_range(0.05, 0.15);
    let plane: Vec<f64> = mask.data().iter().map(|a| bg + a * (fg - bg)).collect();
    let x = Tensor::new(&[3, e, e], plane.repeat(3))?;
    let (code, domain) = match spec.kind {
        TaskKind::Discrete => {
            let k = index % spec.domains;
            (LatentCode::one_hot(k, spec.domains)?, Some(k))
        }
        TaskKind::Continuous => (
            LatentCode::continuous((0..spec.style_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()),
            None,
        ),
    };
    let y = apply_hue(&x, &mask, &code, spec.kind)?;
    Ok(SyntheticSample { x, y, mask, code, domain })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub samples: Vec<SyntheticSample>,
}

/// A batch of samples as stacked tensors.
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub codes: Tensor,
    pub masks: Tensor,
}

pub fn gen_dataset(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.samples)
        .into_par_iter()
        .map(|i| gen_sample(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Disjoint index ranges: the first `train` samples, then the rest.
    pub fn split(&self, train: usize) -> (Vec<usize>, Vec<usize>) {
        let train = train.min(self.len());
        ((0..train).collect(), (train..self.len()).collect())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let e = self.spec.extent;
        let pick = |f: &dyn Fn(&SyntheticSample) -> Tensor, shape: &[usize]| -> Result<Tensor> {
            let parts: Vec<Tensor> = indices
                .iter()
                .map(|&i| f(&self.samples[i]).reshape(shape))
                .collect::<Result<_>>()?;
            Tensor::stack(&parts)
        };
        let s = self.spec.code_dim();
        Ok(Batch {
            x: pick(&|s| s.x.clone(), &[1, 3, e, e])?,
            y: pick(&|s| s.y.clone(), &[1, 3, e, e])?,
            codes: pick(&|smp| Tensor::new(&[s], smp.code.values().to_vec()).expect("code"), &[1, s])?,
            masks: pick(&|s| s.mask.clone(), &[1, e, e])?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let all: Vec<usize> = (0..self.len()).collect();
        let b = self.batch(&all)?;
        write_file(dir.join("x.cbnt"), &b.x, DType::F64)?;
        write_file(dir.join("y.cbnt"), &b.y, DType::F64)?;
        write_file(dir.join("codes.cbnt"), &b.codes, DType::F64)?;
        write_file(dir.join("masks.cbnt"), &b.masks, DType::F64)?;
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&self.spec)?)?;
        Ok(())
    }

    /// Regenerate from the stored spec and check the stored tensors agree.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec: TaskSpec = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
        let d = gen_dataset(&spec)?;
        let y = read_file(dir.join("y.cbnt"))?;
        let all: Vec<usize> = (0..d.len()).collect();
        if d.batch(&all)?.y != y {
            return Err(Error::Format("stored targets differ from the regenerated dataset".into()));
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            extent: 16,
            samples: 24,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = gen_dataset(&small(TaskKind::Discrete)).unwrap();
        let b = gen_dataset(&small(TaskKind::Discrete)).unwrap();
        assert_eq!(a.samples, b.samples);
        let seq: Vec<_> = (0..24).map(|i| gen_sample(&a.spec, i).unwrap()).collect();
        assert_eq!(a.samples, seq);
    }

    #[test]
    fn values_in_range() {
        for kind in [TaskKind::Discrete, TaskKind::Continuous] {
            let d = gen_dataset(&small(kind)).unwrap();
            for s in &d.samples {
                assert!(s.x.data().iter().chain(s.y.data()).all(|v| v.abs() < 1.0));
                assert!(s.mask.data().iter().any(|&a| a == 1.0));
            }
        }
    }

    #[test]
    fn batch_shapes() {
        let d = gen_dataset(&small(TaskKind::Continuous)).unwrap();
        let b = d.batch(&[0, 3, 5]).unwrap();
        assert_eq!(b.x.shape(), &[3, 3, 16, 16]);
        assert_eq!(b.codes.shape(), &[3, 8]);
        assert_eq!(b.masks.shape(), &[3, 16, 16]);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_dataset(&small(TaskKind::Discrete)).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap().samples, d.samples);
    }
}
