use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kshift::artifact::ArtifactSpec;
use kshift::data::{write_phantom_dir, PhantomConfig};
use kshift::experiment::{self, ExperimentConfig};
use kshift::norm::AdaptStats;
use kshift::{Error, Result};

/// Synthetic MRI artifacts and normalization-robustness experiments.
#[derive(Parser)]
#[command(name = "kshift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic phantom datasets.
    Phantom {
        #[command(subcommand)]
        action: PhantomAction,
    },
    /// Apply artifact specs to every image of a dataset directory.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Artifact spec as inline JSON or a path to a JSON file (object or
        /// array). Repeat to compose; none copies the data unchanged.
        #[arg(long = "spec")]
        specs: Vec<String>,
    },
    /// Train one model per scheme and seed.
    Train(ExperimentArgs),
    /// Train (or load) models and evaluate them over artifact levels.
    Sweep(ExperimentArgs),
    /// Batch-norm sweep repeated for each configured batch size.
    BatchStudy(ExperimentArgs),
    /// Drift between stored and observed batch-norm statistics.
    Drift {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Normalization layer indices (default: all).
        #[arg(long = "layer")]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-estimate batch-norm statistics on a dataset and report AUROC.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "both")]
        stats: Vec<Stats>,
        #[arg(long, default_value_t = 0.1)]
        momentum: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        pathology: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Directory for the adapted checkpoints.
        #[arg(long)]
        save: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PhantomAction {
    /// Generate a labelled phantom dataset directory.
    Gen {
        /// PhantomConfig JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// ExperimentConfig JSON (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; overrides `output_dir`.
    #[arg(long, env = "KSHIFT_OUT")]
    out: Option<PathBuf>,
    /// Override a top-level config key, e.g. `--set n_seeds=2`.
    #[arg(long = "set", value_parser = parse_kv)]
    overrides: Vec<(String, String)>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Stats {
    Both,
    MeanOnly,
    VarOnly,
}

impl From<Stats> for AdaptStats {
    fn from(s: Stats) -> Self {
        match s {
            Stats::Both => AdaptStats::Both,
            Stats::MeanOnly => AdaptStats::MeanOnly,
            Stats::VarOnly => AdaptStats::VarOnly,
        }
    }
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg = cfg.with_overrides(&a.overrides)?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn read_specs(args: &[String]) -> Result<Vec<ArtifactSpec>> {
    let mut specs = Vec::new();
    for a in args {
        let text = if a.trim_start().starts_with(['{', '[']) {
            a.clone()
        } else {
            fs::read_to_string(a).map_err(|_| Error::MissingFile(PathBuf::from(a)))?
        };
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let items = match v {
            serde_json::Value::Array(items) => items,
            one => vec![one],
        };
        for item in items {
            let spec: ArtifactSpec =
                serde_json::from_value(item).map_err(|e| Error::Config(e.to_string()))?;
            spec.params.validate()?;
            specs.push(spec);
        }
    }
    Ok(specs)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom {
            action:
                PhantomAction::Gen {
                    config,
                    out,
                    n,
                    size,
                    seed,
                },
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|_| Error::MissingFile(p.clone()))?;
                    serde_json::from_str::<PhantomConfig>(&text)
                        .map_err(|e| Error::Config(e.to_string()))?
                }
                None => PhantomConfig::default(),
            };
            cfg.n = n.unwrap_or(cfg.n);
            cfg.size = size.unwrap_or(cfg.size);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let manifest = write_phantom_dir(&cfg, &out)?;
            eprintln!("wrote {} images, manifest {}", cfg.n, manifest.display());
        }
        Command::Corrupt { input, out, specs } => {
            let specs = read_specs(&specs)?;
            let m = experiment::cmd_corrupt(&input, &specs, &out)?;
            eprintln!("corrupted {} images into {}", m.items.len(), out.display());
        }
        Command::Train(a) => {
            let cfg = experiment_config(&a)?;
            for dir in experiment::cmd_train(&cfg, a.jobs)? {
                println!("{}", dir.display());
            }
        }
        Command::Sweep(a) => {
            let cfg = experiment_config(&a)?;
            let (res, path) = experiment::cmd_sweep(&cfg, a.jobs)?;
            eprintln!("{} rows -> {}", res.rows.len(), path.display());
        }
        Command::BatchStudy(a) => {
            let cfg = experiment_config(&a)?;
            let path = experiment::cmd_batch_study(&cfg, a.jobs)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Drift {
            checkpoint,
            data,
            layers,
            batch_size,
            out,
        } => {
            let layers = if layers.is_empty() {
                let mut m = kshift::nn::load_model(&checkpoint)?;
                (0..m.num_norm_layers()).collect()
            } else {
                layers
            };
            let csv = experiment::cmd_drift(&checkpoint, &data, &layers, batch_size)?;
            emit(&csv, out.as_deref())?;
        }
        Command::Adapt {
            checkpoint,
            data,
            stats,
            momentum,
            batch_size,
            pathology,
            threshold,
            save,
            out,
        } => {
            let which: Vec<AdaptStats> = stats.into_iter().map(Into::into).collect();
            let csv = experiment::cmd_adapt(
                &checkpoint,
                &data,
                &which,
                momentum,
                batch_size,
                pathology,
                threshold,
                save.as_deref(),
            )?;
            emit(&csv, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
