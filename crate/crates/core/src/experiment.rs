//! One experiment end to end: data, training, evaluation and the artifacts
//! written into a run directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{codes_tensor, feature_stat_probe, LatentCode, ProbeOptions, ProbeReport};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::generator::{build_generator, load_checkpoint, save_checkpoint, Generator};
use crate::image::write_grid;
use crate::metrics::{
    consistency_score, diversity_score, domain_accuracy, oracle_codes, reference_diversity, MetricReport, SurrogateNet,
};
use crate::synth::{gen_dataset, Dataset, TaskKind};
use crate::tensor::io::{read_file, write_file, DType};
use crate::tensor::{Prng, Tensor};
use crate::train::{train, Auxiliary, EncoderModel, TrainHistory};

pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRID_FILE: &str = "grid.ppm";
pub const CHECKPOINT_DIR: &str = "checkpoint";
const ENCODER_PREFIX: &str = "encoder_";

/// Dataset plus its train / held-out split.
pub struct Prepared {
    pub data: Dataset,
    pub train_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = gen_dataset(&cfg.task)?;
    let (train_idx, eval_idx) = data.split(cfg.train_samples());
    Ok(Prepared {
        data,
        train_idx,
        eval_idx,
    })
}

pub fn init_generator(cfg: &ExperimentConfig) -> Result<Generator> {
    build_generator(&cfg.generator, &mut Prng::new(cfg.seed).split(100))
}

pub fn evaluate(
    g: &Generator,
    encoder: Option<&EncoderModel>,
    prep: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<MetricReport> {
    let net = SurrogateNet::new(cfg.metrics.surrogate_seed);
    let root = Prng::new(cfg.seed);
    let pairs = cfg.metrics.pairs;
    let (data, idx) = (&prep.data, &prep.eval_idx);
    let diversity = diversity_score(g, data, idx, &net, &mut root.split(40), pairs)?;
    let reference = reference_diversity(data, idx, &net, &mut root.split(41), pairs)?;
    let consistency = match (data.spec.kind, encoder) {
        (TaskKind::Discrete, _) => consistency_score(g, |b| oracle_codes(b, data.spec.domains), data, idx)?,
        (TaskKind::Continuous, Some(e)) => consistency_score(g, |b| e.encode(&b.y), data, idx)?,
        (TaskKind::Continuous, None) => {
            return Err(Error::InvalidSpec("the continuous task needs the trained encoder".into()))
        }
    };
    let accuracy = match data.spec.kind {
        TaskKind::Discrete => Some(domain_accuracy(g, data, idx)?),
        TaskKind::Continuous => None,
    };
    Ok(MetricReport {
        diversity,
        reference_diversity: reference,
        consistency,
        domain_accuracy: accuracy,
        samples: idx.len(),
        pairs,
        surrogate_seed: cfg.metrics.surrogate_seed,
    })
}

/// Codes shown in grids and used by the probe: every domain for the
/// discrete task, `n` seeded random styles otherwise.
pub fn showcase_codes(kind: TaskKind, dim: usize, n: usize, seed: u64) -> Result<Vec<LatentCode>> {
    match kind {
        TaskKind::Discrete => (0..dim).map(|k| LatentCode::one_hot(k, dim)).collect(),
        TaskKind::Continuous => {
            let mut r = Prng::new(seed).split(43);
            Ok((0..n)
                .map(|_| LatentCode::continuous((0..dim).map(|_| r.uniform_range(-1.0, 1.0)).collect()))
                .collect())
        }
    }
}

/// Rows of (input | output per showcase code).
pub fn grid_rows(g: &Generator, prep: &Prepared, cfg: &ExperimentConfig) -> Result<Vec<Vec<Tensor>>> {
    let n = cfg.metrics.grid_inputs.min(prep.eval_idx.len());
    let idx = &prep.eval_idx[..n];
    let b = prep.data.batch(idx)?;
    let e = cfg.task.extent;
    let codes = showcase_codes(cfg.task.kind, g.spec.latent_dim, 4, cfg.seed)?;
    let mut rows: Vec<Vec<Tensor>> = (0..n)
        .map(|i| b.x.select(i).reshape(&[3, e, e]).map(|t| vec![t]))
        .collect::<Result<_>>()?;
    for c in &codes {
        let out = g.generate(&b.x, &codes_tensor(&vec![c; n])?)?;
        for (i, row) in rows.iter_mut().enumerate() {
            row.push(out.select(i).reshape(&[3, e, e])?);
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
struct MetricsFile<'a> {
    report: &'a MetricReport,
    final_l1: Option<f64>,
    wall_clock_secs: f64,
    config: &'a ExperimentConfig,
}

pub struct RunOutcome {
    pub generator: Generator,
    pub encoder: Option<EncoderModel>,
    pub history: TrainHistory,
    pub report: MetricReport,
    pub dir: PathBuf,
}

fn append_metrics_csv(path: &Path, r: &MetricReport) -> Result<()> {
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "\nmetric,value")?;
    writeln!(f, "diversity,{:.17e}", r.diversity)?;
    writeln!(f, "reference_diversity,{:.17e}", r.reference_diversity)?;
    writeln!(f, "consistency,{:.17e}", r.consistency)?;
    if let Some(a) = r.domain_accuracy {
        writeln!(f, "domain_accuracy,{a:.17e}")?;
    }
    Ok(())
}

pub fn save_encoder(e: &EncoderModel, dir: &Path) -> Result<()> {
    for (i, t) in e.store.tensors().iter().enumerate() {
        write_file(dir.join(format!("{ENCODER_PREFIX}{i}.cbnt")), t, DType::F64)?;
    }
    Ok(())
}

/// Encoder saved next to a generator checkpoint, if there is one.
pub fn load_encoder(dir: &Path, g: &Generator, cfg: &ExperimentConfig) -> Result<Option<EncoderModel>> {
    if !dir.join(format!("{ENCODER_PREFIX}0.cbnt")).exists() {
        return Ok(None);
    }
    let mut e = EncoderModel::new(g.spec.out_channels, cfg.train.encoder_width, g.spec.latent_dim, 0.0, &mut Prng::new(0));
    for (i, t) in e.store.tensors_mut().iter_mut().enumerate() {
        let loaded = read_file(dir.join(format!("{ENCODER_PREFIX}{i}.cbnt")))?;
        if loaded.shape() != t.shape() {
            return Err(Error::Format(format!("encoder tensor {i} has shape {:?}", loaded.shape())));
        }
        *t = loaded;
    }
    Ok(Some(e))
}

/// Train from `cfg` and write every artifact under `dir`.
pub fn run(cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<RunOutcome> {
    let dir = dir.as_ref().to_path_buf();
    cfg.validate()?;
    fs::create_dir_all(&dir)?;
    cfg.write_echo(&dir)?;
    let prep = prepare(cfg)?;
    let mut g = init_generator(cfg)?;
    let mut aux = Auxiliary::for_task(cfg.task.kind, &g, &cfg.train);
    let mut history = train(&mut g, &mut aux, &prep.data, &prep.train_idx, &cfg.train, |_, _| Ok(()))?;

    let ckpt = dir.join(CHECKPOINT_DIR);
    save_checkpoint(&g, &ckpt)?;
    if let Some(e) = &aux.encoder {
        save_encoder(e, &ckpt)?;
    }
    history.checkpoint = Some(CHECKPOINT_DIR.into());
    history.write_csv(dir.join(HISTORY_FILE))?;

    let report = evaluate(&g, aux.encoder.as_ref(), &prep, cfg)?;
    let file = MetricsFile {
        report: &report,
        final_l1: history.final_l1(),
        wall_clock_secs: history.wall_clock_secs,
        config: cfg,
    };
    fs::write(dir.join(METRICS_FILE), serde_json::to_string_pretty(&file)?)?;
    append_metrics_csv(&dir.join(HISTORY_FILE), &report)?;
    write_grid(dir.join(GRID_FILE), &grid_rows(&g, &prep, cfg)?)?;
    Ok(RunOutcome {
        generator: g,
        encoder: aux.encoder,
        history,
        report,
        dir,
    })
}

/// Re-score a saved checkpoint under `cfg`.
pub fn eval_checkpoint(ckpt: impl AsRef<Path>, cfg: &ExperimentConfig) -> Result<MetricReport> {
    let ckpt = ckpt.as_ref();
    let g = load_checkpoint(ckpt)?;
    let encoder = load_encoder(ckpt, &g, cfg)?;
    evaluate(&g, encoder.as_ref(), &prepare(cfg)?, cfg)
}

/// Feature-statistics probe over held-out inputs translated under the
/// showcase codes.
pub fn probe(g: &Generator, cfg: &ExperimentConfig, k: usize) -> Result<ProbeReport> {
    let prep = prepare(cfg)?;
    let n = cfg.metrics.probe_samples.min(prep.eval_idx.len());
    let x = prep.data.batch(&prep.eval_idx[..n])?.x;
    let codes = showcase_codes(cfg.task.kind, g.spec.latent_dim, k, cfg.seed)?;
    let opts = ProbeOptions {
        seed: cfg.metrics.probe_seed,
        ..Default::default()
    };
    feature_stat_probe(g, &x, &codes, k, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::parse(
            "[task]\nextent = 16\nsamples = 24\n[generator]\nbase_width = 4\nres_blocks = 1\n[train]\nsteps = 3\nbatch = 4\n[metrics]\neval_samples = 8\npairs = 6\nprobe_samples = 4\n",
        )
        .unwrap();
        cfg.out_dir = PathBuf::from("unused");
        cfg
    }

    #[test]
    fn run_writes_artifacts_and_eval_matches() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let out = run(&cfg, dir.path()).unwrap();
        for f in [HISTORY_FILE, METRICS_FILE, GRID_FILE, crate::config::ECHO_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let again = eval_checkpoint(dir.path().join(CHECKPOINT_DIR), &cfg).unwrap();
        assert_eq!(again.diversity, out.report.diversity);
        assert_eq!(again.consistency, out.report.consistency);
        assert_eq!(again.domain_accuracy, out.report.domain_accuracy);
        let echoed = ExperimentConfig::load(dir.path().join(crate::config::ECHO_FILE)).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn continuous_run_round_trips_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.task.kind = TaskKind::Continuous;
        cfg.task.style_dim = 3;
        cfg.generator.latent_dim = 3;
        let out = run(&cfg, dir.path()).unwrap();
        let again = eval_checkpoint(dir.path().join(CHECKPOINT_DIR), &cfg).unwrap();
        assert_eq!(again.consistency, out.report.consistency);
        assert!(out.report.domain_accuracy.is_none());
    }
}
