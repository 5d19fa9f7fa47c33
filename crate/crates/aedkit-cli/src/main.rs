//! `aedkit` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
//! `AEDKIT_SEED` overrides the seed in `train`/`ablate` configs.

use aedkit::archive::WeightArchive;
use aedkit::audio::{load_wav, log_mel, write_mel_csv, FeatureConfig};
use aedkit::augment::{run_preview, AugmentSpec};
use aedkit::config::{effective_seed, AblationConfig, DatasetConfig, ExperimentConfig};
use aedkit::datasets::toy::{generate_toy, ToyDatasetSpec};
use aedkit::datasets::{load_esc50, load_multi_label, LoaderOpts};
use aedkit::model::{build, ModelConfig, Network};
use aedkit::surgery::{
    average_input_channels, compatibility_check, delete_middle_flow, replace_head,
};
use aedkit::training::{ablate, train};
use aedkit::SeededRng;
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "aedkit",
    about = "Audio event detection ablation kit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a log-mel spectrogram from a WAV file into CSV.
    Featurize(FeaturizeArgs),
    /// Apply the augmentation pipeline once and write before/after files.
    AugmentPreview(PreviewArgs),
    /// Weight-archive surgery on WTAR1 files.
    #[command(subcommand)]
    Surgery(SurgeryCommand),
    /// Train one model from an experiment config.
    Train(TrainArgs),
    /// Run an ablation grid through the fold-rotation protocol.
    Ablate(AblateArgs),
    /// Generate a synthetic sine-mixture corpus.
    GenToy(GenToyArgs),
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Input WAV (PCM16 or float32, mono or stereo).
    #[arg(long = "in")]
    input: PathBuf,
    /// Feature config JSON; stock settings when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path (one line per mel band).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreviewArgs {
    /// Input WAV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Augmentation spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output directory for before/after WAV, CSVs, and the JSON log.
    #[arg(long)]
    out: PathBuf,
    /// Fix the clip to this many seconds (defaults to the input length).
    #[arg(long)]
    clip_seconds: Option<f64>,
}

#[derive(Subcommand)]
enum SurgeryCommand {
    /// Average a 3-channel input convolution down to 1 channel.
    AvgChannels {
        #[arg(long = "in")]
        input: PathBuf,
        /// Tensor to rewrite.
        #[arg(long, default_value = aedkit::model::STEM_CONV1_WEIGHT)]
        layer: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the classification head with a fresh random one.
    ReplaceHead {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delete middle-flow blocks with index >= KEEP.
    DeleteMiddle {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        keep: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report archive-vs-config compatibility; nonzero exit on mismatch.
    Check {
        #[arg(long)]
        archive: PathBuf,
        /// Model config JSON.
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's augmentation worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    /// Ablation grid JSON.
    #[arg(long)]
    grid: PathBuf,
    /// Override the grid's augmentation worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenToyArgs {
    /// Toy dataset spec JSON; stock settings when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Failure class, mapped to the documented exit codes.
enum Failure {
    /// Bad usage, unreadable or invalid configuration: exit 1.
    Config(anyhow::Error),
    /// Everything that breaks after validation: exit 2.
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" that should exit 0.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Featurize(args) => featurize(args),
        Command::AugmentPreview(args) => preview(args),
        Command::Surgery(cmd) => surgery(cmd),
        Command::Train(args) => train_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
        Command::GenToy(args) => gen_toy(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} {}", path.display()))
        .map_err(Failure::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid {what} {}", path.display()))
        .map_err(Failure::Config)
}

fn featurize(args: FeaturizeArgs) -> Result<(), Failure> {
    let features: FeatureConfig = match &args.config {
        Some(path) => read_json(path, "feature config")?,
        None => FeatureConfig::default(),
    };
    features.validate().map_err(config_err)?;
    let clip = load_wav(&args.input).map_err(runtime_err)?;
    let clip = aedkit::audio::resample(&clip, features.sample_rate).map_err(runtime_err)?;
    let spec = log_mel(&clip, &features).map_err(runtime_err)?;
    write_mel_csv(&args.out, &spec).map_err(runtime_err)?;
    println!(
        "{} -> {} ({} x {})",
        args.input.display(),
        args.out.display(),
        spec.n_mels(),
        spec.n_frames()
    );
    Ok(())
}

fn preview(args: PreviewArgs) -> Result<(), Failure> {
    let spec: AugmentSpec = read_json(&args.spec, "augment spec")?;
    let artifacts = run_preview(
        &args.input,
        &spec,
        &FeatureConfig::default(),
        args.clip_seconds,
        args.seed,
        &args.out,
    )
    .map_err(runtime_err)?;
    println!(
        "wrote {}, {}, {}, {}, {}",
        artifacts.before_wav.display(),
        artifacts.after_wav.display(),
        artifacts.before_mel_csv.display(),
        artifacts.after_mel_csv.display(),
        artifacts.log_json.display()
    );
    Ok(())
}

fn surgery(cmd: SurgeryCommand) -> Result<(), Failure> {
    match cmd {
        SurgeryCommand::AvgChannels { input, layer, out } => {
            let archive = WeightArchive::read(&input).map_err(runtime_err)?;
            let result = average_input_channels(&archive, &layer).map_err(runtime_err)?;
            result.write(&out).map_err(runtime_err)?;
            println!("averaged {layer}: {} -> {}", input.display(), out.display());
        }
        SurgeryCommand::ReplaceHead {
            input,
            classes,
            seed,
            out,
        } => {
            let archive = WeightArchive::read(&input).map_err(runtime_err)?;
            let result =
                replace_head(&archive, classes, &mut SeededRng::new(seed)).map_err(runtime_err)?;
            result.write(&out).map_err(runtime_err)?;
            println!(
                "replaced head with {classes} classes: {} -> {}",
                input.display(),
                out.display()
            );
        }
        SurgeryCommand::DeleteMiddle { input, keep, out } => {
            let archive = WeightArchive::read(&input).map_err(runtime_err)?;
            let result = delete_middle_flow(&archive, keep).map_err(runtime_err)?;
            result.write(&out).map_err(runtime_err)?;
            println!(
                "kept {keep} middle blocks: {} -> {}",
                input.display(),
                out.display()
            );
        }
        SurgeryCommand::Check { archive, model } => {
            let cfg: ModelConfig = read_json(&model, "model config")?;
            cfg.validate().map_err(config_err)?;
            let archive = WeightArchive::read(&archive).map_err(runtime_err)?;
            let report = compatibility_check(&archive, &cfg).map_err(runtime_err)?;
            print!("{report}");
            if !report.is_loadable() {
                return Err(runtime_err(anyhow!(
                    "archive does not load into the given config"
                )));
            }
        }
    }
    Ok(())
}

fn echo_config<T: serde::Serialize>(config: &T, seed: u64, out_dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .map_err(Failure::Runtime)?;
    let mut echo = serde_json::to_value(config).expect("config serializes");
    echo["seed"] = serde_json::json!(seed);
    std::fs::write(
        out_dir.join("config_echo.json"),
        serde_json::to_vec_pretty(&echo).expect("config serializes"),
    )
    .map_err(runtime_err)
}

fn train_cmd(args: TrainArgs) -> Result<(), Failure> {
    let mut config = ExperimentConfig::load(&args.config).map_err(config_err)?;
    if let Some(workers) = args.workers {
        if workers == 0 {
            return Err(config_err(anyhow!("--workers must be >= 1")));
        }
        config.workers = workers;
    }
    let seed = effective_seed(config.seed);
    echo_config(&config, seed, &config.output_dir)?;

    let (train_split, eval_split) = match &config.dataset {
        DatasetConfig::Esc50 {
            meta_csv,
            audio_dir,
            strictness,
            eval_fold,
        } => {
            let manifest = load_esc50(meta_csv, audio_dir, *strictness).map_err(runtime_err)?;
            manifest.folds_split(*eval_fold).map_err(runtime_err)?
        }
        DatasetConfig::MultiLabel { manifest } => {
            let manifest = load_multi_label(manifest).map_err(runtime_err)?;
            manifest.splits().map_err(runtime_err)?
        }
    };

    let mut model_cfg = config.model.clone();
    model_cfg.n_classes = train_split.n_classes;
    let rng = SeededRng::new(seed);
    let mut net: Network<f32> = build(&model_cfg, &mut rng.derive(&[0])).map_err(runtime_err)?;
    if let Some(path) = &config.init_archive {
        let archive = WeightArchive::read(path).map_err(runtime_err)?;
        let warnings = net.load_weights(&archive).map_err(runtime_err)?;
        for name in warnings {
            eprintln!("warning: archive tensor {name} is unused");
        }
    }

    let loader = LoaderOpts {
        features: config.features.clone(),
        clip_seconds: config.clip_seconds(),
        workers: config.workers,
    };
    let outcome = train(
        &mut net,
        &train_split,
        &eval_split,
        &config.train,
        &config.augment,
        &loader,
        &rng.derive(&[1]),
    )
    .map_err(runtime_err)?;

    for stats in &outcome.history.epochs {
        println!(
            "epoch {:3}  lr {:.3e}  train_loss {:.5}  eval_loss {:.5}  metric {:.4}",
            stats.epoch, stats.lr, stats.train_loss, stats.eval_loss, stats.eval_metric
        );
    }
    println!(
        "selected epoch {} (lowest eval loss)",
        outcome.history.selected_epoch
    );

    let out = &config.output_dir;
    outcome
        .history
        .write_csv(&out.join("history.csv"))
        .map_err(runtime_err)?;
    outcome
        .best
        .write(&out.join("best.wtar"))
        .map_err(runtime_err)?;
    outcome
        .final_weights
        .write(&out.join("final.wtar"))
        .map_err(runtime_err)?;
    println!("artifacts under {}", out.display());
    Ok(())
}

fn ablate_cmd(args: AblateArgs) -> Result<(), Failure> {
    let mut config = AblationConfig::load(&args.grid).map_err(config_err)?;
    if let Some(workers) = args.workers {
        if workers == 0 {
            return Err(config_err(anyhow!("--workers must be >= 1")));
        }
        config.workers = workers;
    }
    let seed = effective_seed(config.seed);
    echo_config(&config, seed, &config.output_dir)?;

    let DatasetConfig::Esc50 {
        meta_csv,
        audio_dir,
        strictness,
        ..
    } = &config.dataset
    else {
        return Err(config_err(anyhow!("ablation grids need a folded dataset")));
    };
    let manifest = load_esc50(meta_csv, audio_dir, *strictness).map_err(runtime_err)?;
    let loader = LoaderOpts {
        features: config.features.clone(),
        clip_seconds: config.clip_seconds(),
        workers: config.workers,
    };
    let grid = aedkit::training::AblationGrid {
        entries: config.entries.clone(),
    };
    let table = ablate::<f32>(
        &grid,
        &manifest,
        &loader,
        &SeededRng::new(seed),
        &config.output_dir,
    )
    .map_err(runtime_err)?;

    for row in &table.rows {
        match &row.result {
            Ok(res) => println!("{}: mean accuracy {:.4}", row.name, res.mean_accuracy),
            Err(e) => println!("{}: failed ({e})", row.name),
        }
    }
    println!(
        "results under {} (results.csv, curves.csv)",
        config.output_dir.display()
    );
    Ok(())
}

fn gen_toy(args: GenToyArgs) -> Result<(), Failure> {
    let spec: ToyDatasetSpec = match &args.spec {
        Some(path) => read_json(path, "toy spec")?,
        None => ToyDatasetSpec::default(),
    };
    spec.validate().map_err(config_err)?;
    let dataset = generate_toy(&spec, &args.out).map_err(runtime_err)?;
    println!(
        "wrote {} clips and {}",
        spec.n_classes * spec.examples_per_class,
        dataset.manifest_csv.display()
    );
    Ok(())
}
