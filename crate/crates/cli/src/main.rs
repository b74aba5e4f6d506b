mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Small-CNN brain-MRI classification toolkit with Grad-CAM explanations.
#[derive(Debug, Parser)]
#[command(name = "camlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run configuration.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// `section.key=value` file; `#` starts a comment line.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gradcam,
    #[value(name = "gradcam_pp", alias = "gradcam-pp")]
    GradcamPp,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic three-class corpus as `<out>/<class>/*.pgm`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stratified 80:10:10 split of a class-directory corpus.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Manifest path [default: <data>/split.csv].
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write augmented copies of every image (inspection aid).
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model on the manifest's train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Split manifest [default: <data>/split.csv].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Built-in architecture (vgg-nano, vgg-micro).
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Model spec file in canonical text form.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        optimizer: Option<String>,
        /// Train on the stored images without online augmentation.
        #[arg(long)]
        no_augment: bool,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate weights on the manifest's test split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Which split to evaluate.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Grad-CAM / Grad-CAM++ heatmaps for one image.
    Explain {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Class index or name [default: predicted class].
        #[arg(long)]
        class: Option<String>,
        #[arg(long, default_value = "runs/explain")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the finite-difference verification suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/gradcheck")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth { out, n, size, seed, cfg } => commands::synth(&out, n, size, seed, &cfg),
        Command::Split { data, seed, out, cfg } => commands::split(&data, seed, out, &cfg),
        Command::Augment {
            data,
            out,
            seed,
            size,
            cfg,
        } => commands::augment(&data, &out, seed, size, &cfg),
        Command::Train {
            data,
            manifest,
            preset,
            spec,
            seed,
            epochs,
            lr,
            batch_size,
            optimizer,
            no_augment,
            out,
            cfg,
        } => {
            let flags = commands::TrainFlags {
                preset,
                spec,
                seed,
                epochs,
                lr,
                batch_size,
                optimizer,
                no_augment,
            };
            commands::train(&data, manifest, &flags, &out, &cfg)
        }
        Command::Eval {
            weights,
            data,
            manifest,
            split,
            out,
            cfg,
        } => commands::eval(&weights, &data, manifest, &split, &out, &cfg),
        Command::Explain {
            weights,
            image,
            method,
            class,
            out,
            cfg,
        } => commands::explain(&weights, &image, method, class.as_deref(), &out, &cfg),
        Command::Gradcheck { seed, out } => commands::gradcheck(seed, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
