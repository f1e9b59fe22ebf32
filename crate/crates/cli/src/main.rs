use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unsir_core::models::load_checkpoint;
use unsir_core::runner::{
    read_manifest, run_baselines, run_experiment, run_sequential, run_sweep, run_train, verify_manifest,
    ExperimentConfig, RunArtifactSet, Session, SweepAxis,
};
use unsir_core::unsir::BaselineKind;
use unsir_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "unsir", version, about = "Class unlearning with error-maximizing noise, impair and repair")]
struct Cli {
    /// Experiment config (TOML). The built-in desk benchmark is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the original model and save original.ckpt.
    Train,
    /// Train (or load) the original model and unlearn the forget classes with UNSIR.
    Unlearn,
    /// Run UNSIR plus every baseline enabled in the config.
    Experiment,
    /// Run reference methods only.
    Baseline {
        /// retrain, finetune or neggrad; repeat for several. Defaults to all three.
        #[arg(long = "kind")]
        kinds: Vec<String>,
    },
    /// Evaluate a checkpoint against the original model.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Original model; defaults to `original_checkpoint` or <output_dir>/original.ckpt.
        #[arg(long)]
        original: Option<PathBuf>,
    },
    /// Epochs a checkpoint needs to regain the original forget-set accuracy.
    RelearnTime {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        original: Option<PathBuf>,
    },
    /// One UNSIR run per value of an ablation axis.
    Sweep {
        /// impair_lr, repair_lr, lambda, retain_fraction, repair_steps or cycles.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Successive forget requests, e.g. `--requests 0 --requests 1,2`.
    Sequential {
        #[arg(long = "requests", value_delimiter = ';')]
        requests: Vec<String>,
    },
    /// Verify a run directory's manifest and print its summary table.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.apply_env();
    Ok(cfg)
}

fn parse_classes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{c}` is not a class index")))
        })
        .collect()
}

fn print_file(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn done(set: &RunArtifactSet, table: Option<&str>) {
    if let Some(t) = table {
        print_file(&set.path(t));
    }
    println!("wrote {} files to {}", set.manifest.files.len(), set.root.display());
}

fn original_path(cfg: &ExperimentConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| cfg.original_checkpoint.clone())
        .unwrap_or_else(|| cfg.output_dir.join("original.ckpt"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Train => done(&run_train(&cfg)?, Some("train.json")),
        Command::Unlearn => {
            cfg.baselines.retrain = false;
            cfg.baselines.finetune = false;
            cfg.baselines.neggrad = false;
            done(&run_experiment(&cfg)?, Some("report.csv"));
        }
        Command::Experiment => done(&run_experiment(&cfg)?, Some("report.csv")),
        Command::Baseline { kinds } => {
            let kinds: Vec<BaselineKind> = if kinds.is_empty() {
                vec![BaselineKind::Retrain, BaselineKind::Finetune, BaselineKind::Neggrad]
            } else {
                kinds
                    .iter()
                    .map(|k| k.parse().map_err(|e: Error| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?
            };
            done(&run_baselines(&cfg, &kinds)?, Some("report.csv"));
        }
        Command::Evaluate { checkpoint, original } => {
            let report = evaluate_checkpoint(&cfg, &checkpoint, original)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::RelearnTime { checkpoint, original } => {
            cfg.metrics.relearn = true;
            cfg.metrics.histogram = false;
            cfg.metrics.weight_distance = false;
            let report = evaluate_checkpoint(&cfg, &checkpoint, original)?;
            match report.relearn_time {
                Some(rt) => println!("relearn_time = {rt}"),
                None => unreachable!("relearn metric was enabled"),
            }
        }
        Command::Sweep { axis, values } => {
            let (axis, values) = match (axis, cfg.sweep.clone()) {
                (Some(a), _) => (a.parse::<SweepAxis>()?, values),
                (None, Some(sw)) if values.is_empty() => (sw.axis, sw.values),
                (None, Some(sw)) => (sw.axis, values),
                (None, None) => return Err(Error::Config("sweep needs --axis or a [sweep] section".into())),
            };
            done(&run_sweep(&cfg, axis, &values)?, Some("sweep.csv"));
        }
        Command::Sequential { requests } => {
            if !requests.is_empty() {
                cfg.sequential = requests.iter().map(|r| parse_classes(r)).collect::<Result<_>>()?;
            }
            done(&run_sequential(&cfg)?, Some("sequential.csv"));
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
            let manifest = read_manifest(&dir)?;
            let bad = verify_manifest(&dir)?;
            for name in ["report.csv", "sequential.csv", "sweep.csv", "train.json"] {
                if manifest.files.iter().any(|f| f.path == name) {
                    print_file(&dir.join(name));
                }
            }
            println!(
                "{} run, status {:?}, stages [{}], {} files",
                manifest.kind,
                manifest.status,
                manifest.completed_stages.join(", "),
                manifest.files.len()
            );
            if !bad.is_empty() {
                return Err(Error::contract(format!("hash mismatch: {}", bad.join(", "))));
            }
            println!("all hashes match");
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    original: Option<PathBuf>,
) -> Result<unsir_core::eval::EvaluationReport> {
    let original = load_checkpoint(original_path(cfg, original))?.model;
    let model = load_checkpoint(checkpoint)?.model;
    let session = Session::new(cfg.clone())?;
    let split = session.split(&cfg.forget_classes)?;
    session.evaluate("checkpoint", &model, &original, &split)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
