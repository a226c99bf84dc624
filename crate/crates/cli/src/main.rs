mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Exit status when training stops on a non-finite loss.
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "neuroview", version, about = "Train and inspect NeuroView classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a NeuroView or baseline model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval(EvalArgs),
    /// Per-class head weights, split by layer and view.
    Explain(ExplainArgs),
    /// Head weights summed per labeled concept.
    Concepts(ConceptsArgs),
    /// Mean head weight of each view.
    ViewMeans(ViewMeansArgs),
    /// Per-class accuracy with color channels zeroed.
    Perturb(PerturbArgs),
    /// Dataset generators.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Finite-difference check of every autodiff op.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
#[command(group = clap::ArgGroup::new("family").args(["neuroview", "baseline"]))]
pub struct TrainArgs {
    /// Preset name (vgg-mini, vgg11) or path to an architecture JSON file.
    #[arg(long)]
    pub arch: Option<String>,
    /// Train the NeuroView model (default).
    #[arg(long)]
    pub neuroview: bool,
    /// Train the unmodified network with a linear classifier.
    #[arg(long)]
    pub baseline: bool,
    /// Spatial reduction of each unit's code: max or mean.
    #[arg(long)]
    pub reduce: Option<String>,
    /// Code mapping: sigmoid or identity.
    #[arg(long)]
    pub vq: Option<String>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Dataset root: IDX files, or train/ and val/ image directories.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// idx or png-dir.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON defaults (a previous run's manifest.json works); flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "idx")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub class: usize,
    /// csv, json or svg.
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct ConceptsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// CSV with header layer,channel,concept,category.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub class: usize,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct ViewMeansArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub class: usize,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct PerturbArgs {
    /// Checkpoint as NAME=DIR or DIR (named after the directory); repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "png-dir")]
    pub format: String,
    /// Comma-separated subset of none,red,green,blue.
    #[arg(long, value_delimiter = ',', default_value = "none,red,green,blue")]
    pub channels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Tint IDX digits with class-correlated colors; writes train/ and val/.
    MakeColoredMnist(ColoredArgs),
}

#[derive(Args, Serialize)]
pub struct ColoredArgs {
    /// Directory holding the grayscale IDX files.
    #[arg(long)]
    pub data: PathBuf,
    /// Probability that a training digit gets its class color.
    #[arg(long)]
    pub rho: f64,
    /// Same probability for the validation split; defaults to --rho.
    #[arg(long)]
    pub val_rho: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only the first N samples of each split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random cases per op.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Optional directory for gradcheck.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Explain(a) => commands::explain(a),
        Command::Concepts(a) => commands::concepts(a),
        Command::ViewMeans(a) => commands::view_means(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Dataset(DatasetCommand::MakeColoredMnist(a)) => commands::make_colored_mnist(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<neuroview::Error>() {
                Some(neuroview::Error::Diverged { .. }) => ExitCode::from(EXIT_DIVERGED),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
