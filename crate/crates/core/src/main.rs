use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regex::Regex;

use cbnlab::checks::{run_checks, CheckOptions};
use cbnlab::config::{ExperimentConfig, ECHO_FILE};
use cbnlab::error::Error;
use cbnlab::experiment;
use cbnlab::generator::{count_params, format_units, load_checkpoint, GeneratorSpec, MANIFEST_FILE};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISSING: u8 = 3;

#[derive(Parser)]
#[command(name = "cbnlab", version, about = "Central biasing normalization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the numerical self checks.
    Check {
        /// Regular expression selecting checks by name.
        #[arg(long)]
        filter: Option<String>,
        /// Print one JSON record per check.
        #[arg(long)]
        json: bool,
        /// Override the normalization epsilon (negative control).
        #[arg(long, hide = true)]
        fault_eps: Option<f64>,
    },
    /// Train a generator and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a saved checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Print weights added by central biasing for each latent size.
    Params {
        /// Comma-separated latent sizes.
        #[arg(long, value_delimiter = ',', default_value = "2,8,128,256")]
        dims: Vec<usize>,
    },
    /// Cluster feature statistics of a checkpoint.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        k: usize,
        /// Defaults to the config echoed next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::InvalidSpec(_) | Error::Dimension { .. } => EXIT_USAGE,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            _ => EXIT_FAIL,
        };
        Failure(code, e.to_string())
    }
}

fn set_threads() {
    if let Some(n) = std::env::var("CBNLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    if !path.exists() {
        return Err(Failure(EXIT_MISSING, format!("config {} not found", path.display())));
    }
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config { line, msg } => Failure(EXIT_USAGE, format!("{}:{line}: {msg}", path.display())),
        other => other.into(),
    })
}

fn require_checkpoint(dir: &Path) -> Result<(), Failure> {
    if dir.join(MANIFEST_FILE).exists() {
        Ok(())
    } else {
        Err(Failure(EXIT_MISSING, format!("no checkpoint at {}", dir.display())))
    }
}

fn cmd_check(filter: Option<String>, json: bool, fault_eps: Option<f64>) -> Result<(), Failure> {
    let re = filter
        .map(|p| Regex::new(&p).map_err(|e| Failure(EXIT_USAGE, format!("bad filter: {e}"))))
        .transpose()?;
    let mut opts = CheckOptions::default();
    if let Some(eps) = fault_eps {
        opts.eps = eps;
    }
    let recs = run_checks(|n| re.as_ref().is_none_or(|r| r.is_match(n)), &opts);
    for r in &recs {
        if json {
            println!("{}", serde_json::to_string(r).map_err(Error::from)?);
        } else {
            let status = if r.pass { "PASS" } else { "FAIL" };
            println!("{status}  {:<42} {:>12.3e}  (threshold {:e})", r.check_name, r.statistic, r.threshold);
            if let Some(e) = &r.error {
                println!("      {e}");
            }
        }
    }
    let failed = recs.iter().filter(|r| !r.pass).count();
    if !json {
        println!("{} checks, {failed} failed", recs.len());
    }
    if failed > 0 {
        return Err(Failure(EXIT_FAIL, format!("{failed} checks failed")));
    }
    Ok(())
}

fn cmd_train(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let dir = cfg.out_dir.clone();
    let run = experiment::run(&cfg, &dir)?;
    let r = &run.report;
    println!("run directory   {}", dir.display());
    println!("steps           {}", run.history.records.len());
    println!("final l1        {:.5}", run.history.final_l1().unwrap_or(f64::NAN));
    println!("wall clock      {:.1}s", run.history.wall_clock_secs);
    println!("diversity       {:.5} (ground truth {:.5})", r.diversity, r.reference_diversity);
    println!("consistency     {:.5}", r.consistency);
    if let Some(a) = r.domain_accuracy {
        println!("domain accuracy {a:.4}");
    }
    Ok(())
}

fn cmd_eval(ckpt: &Path, config: &Path) -> Result<(), Failure> {
    require_checkpoint(ckpt)?;
    let cfg = load_config(config)?;
    let r = experiment::eval_checkpoint(ckpt, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&r).map_err(Error::from)?);
    Ok(())
}

fn cmd_params(dims: &[usize]) -> Result<(), Failure> {
    if dims.is_empty() {
        return Err(Failure(EXIT_USAGE, "no latent sizes given".into()));
    }
    let base = count_params(&GeneratorSpec::default()).base_conv_weights;
    println!("base generator conv weights: {base} ({})", format_units(base));
    println!("{:>6}  {:>10}  {:>8}  {:>10}", "|c|", "added", "units", "total");
    for &s in dims {
        if s == 0 {
            return Err(Failure(EXIT_USAGE, "latent sizes must be positive".into()));
        }
        let p = count_params(&GeneratorSpec {
            latent_dim: s,
            ..Default::default()
        });
        let total = p.base_conv_weights + p.injection_added;
        println!("{s:>6}  {:>10}  {:>8}  {:>10}", p.injection_added, format_units(p.injection_added), total);
    }
    Ok(())
}

fn cmd_probe(ckpt: &Path, k: usize, config: Option<PathBuf>) -> Result<(), Failure> {
    require_checkpoint(ckpt)?;
    let g = load_checkpoint(ckpt)?;
    let echoed = ckpt.parent().map(|p| p.join(ECHO_FILE)).filter(|p| p.exists());
    let mut cfg = match config.or(echoed) {
        Some(p) => load_config(&p)?,
        None => ExperimentConfig::default(),
    };
    cfg.task.extent = g.spec.extent;
    if cfg.task.code_dim() != g.spec.latent_dim {
        cfg.task.domains = g.spec.latent_dim;
        cfg.task.style_dim = g.spec.latent_dim;
    }
    let rep = experiment::probe(&g, &cfg, k)?;
    println!("layer           {}", rep.layer);
    println!("interior ring   {}", rep.ring);
    println!("points          {}", rep.samples);
    println!("pca dims        {} ({:.3} of variance)", rep.retained_dims, rep.explained_variance);
    println!("k               {}", rep.k);
    println!("purity          {:.4}", rep.purity);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    set_threads();
    let res = match cli.cmd {
        Cmd::Check { filter, json, fault_eps } => cmd_check(filter, json, fault_eps),
        Cmd::Train { config, out, seed } => cmd_train(&config, out, seed),
        Cmd::Eval { ckpt, config } => cmd_eval(&ckpt, &config),
        Cmd::Params { dims } => cmd_params(&dims),
        Cmd::Probe { ckpt, k, config } => cmd_probe(&ckpt, k, config),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
