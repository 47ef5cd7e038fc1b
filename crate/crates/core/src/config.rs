//! Experiment configuration: TOML-style `key = value` lines grouped under
//! `[task]`, `[generator]`, `[train]`, `[train.adam]` and `[metrics]`.
//! Every key is optional and falls back to its default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::metrics::STAGE_WIDTHS;
use crate::synth::TaskSpec;
use crate::train::TrainConfig;

/// Name of the config echo written into every run directory.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Code pairs drawn for the diversity score.
    pub pairs: usize,
    pub surrogate_seed: u64,
    /// Held-out samples taken from the end of the dataset.
    pub eval_samples: usize,
    /// Inputs shown in the image grid.
    pub grid_inputs: usize,
    pub probe_samples: usize,
    pub probe_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            pairs: 500,
            surrogate_seed: 42,
            eval_samples: 256,
            grid_inputs: 4,
            probe_samples: 64,
            probe_seed: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed for weight init and training. The dataset has its own seed
    /// under `[task]`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskSpec,
    pub generator: GeneratorSpec,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            task: TaskSpec::default(),
            generator: GeneratorSpec::default(),
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

fn has_key(table: &toml::Table, section: &str, key: &str) -> bool {
    table
        .get(section)
        .and_then(|v| v.as_table())
        .is_some_and(|t| t.contains_key(key))
}

impl ExperimentConfig {
    /// Parse config text. Generator extent and latent size follow the task
    /// unless set explicitly.
    pub fn parse(src: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(src, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        let raw: toml::Table = toml::from_str(src).map_err(|e| Error::Config {
            line: 0,
            msg: e.message().to_string(),
        })?;
        if !has_key(&raw, "generator", "extent") {
            cfg.generator.extent = cfg.task.extent;
        }
        if !has_key(&raw, "generator", "latent_dim") {
            cfg.generator.latent_dim = cfg.task.code_dim();
        }
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Full text of the resolved config; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn write_echo(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(dir.as_ref().join(ECHO_FILE), self.to_text())?;
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seed();
        self
    }

    fn sync_seed(&mut self) {
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        self.task.validate()?;
        self.generator.validate()?;
        if self.generator.extent != self.task.extent {
            return bad(format!("generator extent {} differs from task extent {}", self.generator.extent, self.task.extent));
        }
        if self.generator.latent_dim != self.task.code_dim() {
            return bad(format!(
                "generator latent_dim {} differs from the task code size {}",
                self.generator.latent_dim,
                self.task.code_dim()
            ));
        }
        let down = 1 << (STAGE_WIDTHS.len() - 1);
        if self.task.extent % down != 0 {
            return bad(format!("metrics need an extent divisible by {down}"));
        }
        if self.metrics.eval_samples == 0 || self.metrics.eval_samples >= self.task.samples {
            return bad("eval_samples must be positive and smaller than the sample count".into());
        }
        if self.metrics.pairs == 0 {
            return bad("pairs must be at least 1".into());
        }
        Ok(())
    }

    /// Number of leading samples used for training.
    pub fn train_samples(&self) -> usize {
        self.task.samples - self.metrics.eval_samples
    }
}
