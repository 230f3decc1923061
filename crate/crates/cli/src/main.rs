//! Pipeline driver. Every subcommand operates on one working directory
//! holding the manifest, models, feature store, and reports, so stages
//! can run separately or chained.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fusion_mammo::pipeline::{
    evaluate_stage, extract_stage, ingest_dataset, render_text, run_experiment, synth_dataset,
    train_classifier_stage, train_network_stage, ExtractPlan, IngestOptions, RunConfig, Split,
    Workdir,
};
use fusion_mammo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fusion-mammo",
    version,
    about = "Mammogram classification from fused deep and handcrafted features"
)]
struct Cli {
    /// Directory for run artifacts (manifest, models, features, reports).
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Config file of key=value lines, applied before --set overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set xgb_rounds=80. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset and its manifest.
    Synth {
        /// Number of images; even, at least 20.
        #[arg(long)]
        n: usize,
        /// Generator seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a manifest from metadata CSVs and verify the images.
    Ingest {
        /// Metadata CSV; repeatable.
        #[arg(long = "csv", value_name = "FILE", required = true)]
        csv: Vec<PathBuf>,
        /// Directory the CSV image paths are relative to.
        #[arg(long, value_name = "DIR")]
        image_root: PathBuf,
    },
    /// Train the convolutional network on the train split.
    TrainCnn,
    /// Compute feature vectors for every image in the manifest.
    Extract {
        /// Dense-layer network features (initializes a fresh network if
        /// none was trained).
        #[arg(long)]
        deep: bool,
        /// Oriented-gradient histograms.
        #[arg(long)]
        hog: bool,
        /// Local binary pattern histograms.
        #[arg(long)]
        lbp: bool,
        /// Concatenated deep+hog+lbp vectors.
        #[arg(long)]
        fused: bool,
    },
    /// Fit the configured classifier on stored train-split features.
    TrainClf,
    /// Score the test split and write report.json, report.txt, and
    /// confusion.svg.
    Evaluate,
    /// Train the classifier and evaluate in one step.
    Report,
    /// Full pipeline on an existing manifest: train-cnn if needed,
    /// extract, train-clf, evaluate.
    Run,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 1,
        Error::Dimension(_)
        | Error::Data(_)
        | Error::Format(_)
        | Error::Construction(_)
        | Error::Io(_) => 2,
        Error::State(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Argument(format!("--set expects key=value, got {pair:?}"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let work = Workdir::new(&cli.workdir);
    std::fs::create_dir_all(work.root())?;

    match cli.command {
        Command::Synth { n, seed } => {
            let seed = seed.unwrap_or(cfg.seed);
            let manifest = synth_dataset(n, seed, &work.images_dir())?;
            manifest.save_csv(&work.manifest_path())?;
            println!(
                "generated {} synthetic images (train {} / test {}) under {}",
                manifest.len(),
                manifest.split_records(Split::Train).count(),
                manifest.split_records(Split::Test).count(),
                work.images_dir().display()
            );
        }
        Command::Ingest { csv, image_root } => {
            let opts = IngestOptions {
                image_root,
                split_seed: cfg.split_seed,
                train_fraction: cfg.train_fraction,
                group_by_patient: cfg.group_split,
                verify_images: true,
            };
            let manifest = ingest_dataset(&csv, &opts)?;
            manifest.save_csv(&work.manifest_path())?;
            println!(
                "ingested {} records (train {} / test {}) into {}",
                manifest.len(),
                manifest.split_records(Split::Train).count(),
                manifest.split_records(Split::Test).count(),
                work.manifest_path().display()
            );
        }
        Command::TrainCnn => {
            let losses = train_network_stage(&work, &cfg)?;
            println!(
                "trained network for {} epochs; epoch losses: {}",
                losses.len(),
                losses
                    .iter()
                    .map(|l| format!("{l:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        Command::Extract { deep, hog, lbp, fused } => {
            let plan = if !(deep || hog || lbp || fused) {
                ExtractPlan::all()
            } else {
                ExtractPlan { deep, hog, lbp, fused }
            };
            let warnings = extract_stage(&work, &cfg, plan, true)?;
            print_warnings(&warnings);
            let manifest = work.load_manifest()?;
            println!("stored features for {} images", manifest.len());
        }
        Command::TrainClf => {
            train_classifier_stage(&work, &cfg)?;
            println!(
                "trained {} classifier on {} features; saved to {}",
                cfg.classifier.as_str(),
                cfg.feature_set.as_str(),
                work.classifier_path(cfg.classifier).display()
            );
        }
        Command::Evaluate => {
            let report = evaluate_stage(&work, &cfg)?;
            print_warnings(&report.warnings);
            print!("{}", render_text(&report));
        }
        Command::Report => {
            let report = run_experiment(&work, &cfg)?;
            print_warnings(&report.warnings);
            print!("{}", render_text(&report));
        }
        Command::Run => {
            if !work.network_path().exists() {
                let losses = train_network_stage(&work, &cfg)?;
                println!("trained network; final epoch loss {:.4}", losses.last().unwrap_or(&f32::NAN));
            }
            let warnings = extract_stage(&work, &cfg, ExtractPlan::all(), true)?;
            print_warnings(&warnings);
            let report = run_experiment(&work, &cfg)?;
            print_warnings(&report.warnings);
            print!("{}", render_text(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
