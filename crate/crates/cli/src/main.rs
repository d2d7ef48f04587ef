use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dilseg::commands::{self, Run, Selection};
use dilseg::config::{ExperimentConfig, Overrides};
use dilseg::{CliError, Result};
use dilseg_nn::networks::Architecture;

/// Prostate lesion segmentation experiments: synthetic data, preprocessing,
/// training, prediction, lesion-level evaluation and reporting.
///
/// Every command resolves the configuration, hashes it and works inside
/// `<out>/<hash>/`, so commands of one experiment find each other's outputs.
#[derive(Parser)]
#[command(name = "dilseg", version)]
struct Cli {
    /// Experiment configuration (JSON). Omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for data generation, fold assignment, initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for run outputs [default: runs].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Fold to train/predict/evaluate; "none" trains on every case with no
    /// hold-out. Without it all folds of the cross-validation are used.
    #[arg(long, global = true)]
    fold: Option<String>,

    /// Architecture override: UNET, UNETPP, RESUNET, MRRN, MRRN_DS, FPSNET, FPSNET_SL.
    #[arg(long, global = true)]
    arch: Option<Architecture>,

    /// Compute device. Only "cpu" is supported.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a manifest for a ProstateX-style directory of cases.
    Manifest {
        /// Directory holding one sub-directory per case.
        root: PathBuf,
        /// Output manifest path.
        #[arg(long, default_value = "manifest.json")]
        output: PathBuf,
    },
    /// Generate the synthetic phantom dataset.
    Phantom,
    /// Resample, crop and normalize every case of a manifest.
    Preprocess {
        /// Raw-data manifest [default: the config's manifest, else the phantom dataset].
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the configured network.
    Train,
    /// Predict probability maps and masks on the original image grid.
    Predict {
        /// Use this checkpoint for every selected case.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Lesion-level evaluation of the predictions.
    Evaluate,
    /// Tables, statistics and figures from one or more evaluations.
    Report {
        /// Evaluation files or directories to compare [default: this run's evaluation].
        #[arg(long = "evaluation", num_args = 1..)]
        evaluations: Vec<PathBuf>,
    },
    /// Run the ablation grid of the config and write a consolidated table.
    Ablate,
    /// Phantom (when no manifest is configured), preprocess, train, predict and evaluate.
    Pipeline,
}

fn run(cli: Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(CliError::Device(cli.device));
    }
    if let Command::Manifest { root, output } = &cli.command {
        let cases = dilseg_core::manifest::prostatex_manifest(root)?;
        dilseg_core::manifest::save_manifest(&cases, output)?;
        println!("{} cases written to {}", cases.len(), output.display());
        return Ok(());
    }
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides { seed: cli.seed, out: cli.out.clone(), arch: cli.arch };
    let config = base.resolve(&overrides)?;
    let sel = Selection::parse(cli.fold.as_deref())?;
    if let Command::Pipeline = cli.command {
        let (run, _, _) = commands::run_pipeline(config, sel)?;
        println!("{}", run.dir.display());
        return Ok(());
    }
    let run = Run::new(config)?;
    match cli.command {
        Command::Phantom => {
            commands::cmd_phantom(&run)?;
        }
        Command::Preprocess { manifest } => {
            commands::cmd_preprocess(&run, manifest.as_deref())?;
        }
        Command::Train => {
            for s in commands::cmd_train(&run, sel)? {
                let dice = s.best_val_dice.map_or("-".to_string(), |d| format!("{d:.4}"));
                println!("{}: {} epochs, best epoch {}, val dice {dice}", s.fold, s.epochs_run, s.best_epoch);
            }
        }
        Command::Predict { checkpoint } => {
            commands::cmd_predict(&run, sel, checkpoint.as_deref())?;
        }
        Command::Evaluate => {
            let ev = commands::cmd_evaluate(&run, sel)?;
            println!("evaluated {} cases", ev.cases.len());
        }
        Command::Report { evaluations } => {
            commands::cmd_report(&run, sel, &evaluations)?;
        }
        Command::Ablate => {
            commands::cmd_ablate(&run, sel)?;
        }
        Command::Manifest { .. } | Command::Pipeline => unreachable!(),
    }
    println!("{}", run.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
