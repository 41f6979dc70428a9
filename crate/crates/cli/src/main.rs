//! `mpa`: generate synthetic scenes, train, evaluate, predict and plot.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpa_core::harness::evaluate::{eval_records, predict_all, select_per_type};
use mpa_core::harness::plot::write_plots;
use mpa_core::harness::train::is_validation;
use mpa_core::harness::{
    generate_dataset, read_predictions, run_training, write_predictions, Checkpoint, LoadedModel, ModelTable, RunConfig,
};
use mpa_core::metrics::report;
use mpa_core::scene::{cache_read, cache_write, AgentType, Scene};
use mpa_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mpa", version, about = "Multi-modal motion prediction on synthetic driving scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cache of canonical synthetic scenes.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Config file; only `generator.*` keys are used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; writes checkpoint.mpac, train_log.txt and config.txt to `out`.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate checkpoints, or a predictions file, against a scene cache.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics as `key = value` lines.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write world-frame predictions for every scene in a cache.
    Predict {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one SVG per predicted scene.
    Plot {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scene cache for road graph, neighbors and ground truth.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print configuration defaults or the key reference.
    Config {
        /// Print the Markdown key reference instead of a default config file.
        #[arg(long)]
        reference: bool,
    },
}

#[derive(clap::Args)]
struct Models {
    /// Checkpoint to run; repeat to select the best one per agent type.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Config file for `nms.*` keys, `threads` and `val_fraction`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable non-maximum suppression.
    #[arg(long)]
    no_nms: bool,
    /// Scenes used to pick a checkpoint per agent type. Defaults to the
    /// validation split of `--data`.
    #[arg(long)]
    validation: Option<PathBuf>,
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct SourceChoice {
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Score an existing predictions file instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(clap::Args)]
struct Source {
    #[command(flatten)]
    choice: SourceChoice,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_nms: bool,
    #[arg(long)]
    validation: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

fn build_table(
    checkpoints: &[PathBuf],
    cfg: &RunConfig,
    data: &[Scene<f32>],
    validation: Option<&Path>,
) -> Result<ModelTable> {
    let models = checkpoints
        .iter()
        .map(|p| LoadedModel::from_checkpoint(&Checkpoint::load(p)?))
        .collect::<Result<Vec<_>>>()?;
    if models.len() == 1 {
        return Ok(ModelTable::single(models.into_iter().next().unwrap()));
    }
    let val: Vec<Scene<f32>> = match validation {
        Some(p) => cache_read(p)?,
        None => data.iter().filter(|s| is_validation(s.scene_id, cfg.train.val_fraction)).cloned().collect(),
    };
    let sel = select_per_type(&models, &val, &cfg.nms, cfg.train.threads)?;
    for w in &sel.warnings {
        eprintln!("warning: {w}");
    }
    for t in AgentType::ALL {
        eprintln!("{}: {}", t.name(), checkpoints[sel.by_type[t.code() as usize]].display());
    }
    Ok(ModelTable { models, by_type: sel.by_type })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { seed, count, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let scenes = generate_dataset(seed, count, &cfg.generator)?;
            cache_write(&out, &scenes)?;
            eprintln!("wrote {count} scenes to {}", out.display());
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let (ck, log) = run_training(&cfg, &mut |line| eprintln!("{line}"))?;
            eprintln!(
                "checkpoint from step {} written to {}",
                ck.meta.step,
                Path::new(&cfg.train.out).join(mpa_core::harness::train::CHECKPOINT_FILE).display()
            );
            println!("initial_train_nll = {}", log.initial_train_nll);
            println!("final_train_nll = {}", log.final_train_nll);
        }
        Command::Eval { source, data, report: report_path } => {
            let scenes: Vec<Scene<f32>> = cache_read(&data)?;
            let predictions = match &source.choice.predictions {
                Some(p) => read_predictions(p)?,
                None => {
                    let mut cfg = load_config(source.config.as_deref())?;
                    cfg.nms.enabled &= !source.no_nms;
                    let table = build_table(&source.choice.checkpoints, &cfg, &scenes, source.validation.as_deref())?;
                    predict_all(&table, &scenes, &cfg.nms, cfg.train.threads)?
                }
            };
            let rep = report(&eval_records(&predictions, &scenes)?)?;
            print!("{}", rep.to_table());
            if let Some(p) = report_path {
                std::fs::write(&p, rep.to_kv()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
        }
        Command::Predict { models, data, out } => {
            let scenes: Vec<Scene<f32>> = cache_read(&data)?;
            let mut cfg = load_config(models.config.as_deref())?;
            cfg.nms.enabled &= !models.no_nms;
            let table = build_table(&models.checkpoints, &cfg, &scenes, models.validation.as_deref())?;
            let records = predict_all(&table, &scenes, &cfg.nms, cfg.train.threads)?;
            write_predictions(&out, &records)?;
            eprintln!("wrote {} predictions to {}", records.len(), out.display());
        }
        Command::Plot { predictions, out, data } => {
            let records = read_predictions(&predictions)?;
            let scenes: Vec<Scene<f32>> = match data {
                Some(p) => cache_read(p)?,
                None => Vec::new(),
            };
            let written = write_plots(&records, &scenes, &out)?;
            eprintln!("wrote {} figures to {}", written.len(), out.display());
        }
        Command::Config { reference } => {
            if reference {
                print!("{}", RunConfig::reference_markdown());
            } else {
                print!("{}", RunConfig::default().to_kv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
