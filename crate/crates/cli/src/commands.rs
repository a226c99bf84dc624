use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use neuroview::counterfactual::{counterfactual_table, Channel};
use neuroview::explain::{self, write_artifact, ConceptLabelTable, Format, Render};
use neuroview::model::Classifier;
use neuroview::neuroview::checkpoint::{self, AnyModel, Family};
use neuroview::tensor::gradcheck;
use neuroview::train::data::{load_idx_pair, split_paths, write_png_dir};
use neuroview::train::{self, load_pair, load_split, BaselineModel, DataFormat, Dataset, Split, DEFAULT_PALETTE};
use neuroview::NeuroViewModel;
use serde::Serialize;

use crate::manifest::{write_json, write_manifest, RunPlan};
use crate::{
    ColoredArgs, ConceptsArgs, EvalArgs, ExplainArgs, GradcheckArgs, PerturbArgs, TrainArgs, ViewMeansArgs,
};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.json";

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating --out {}", out.display()))
}

fn load_model(ckpt: &Path) -> Result<AnyModel<f32>> {
    checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))
}

fn load_neuroview(ckpt: &Path) -> Result<NeuroViewModel<f32>> {
    match load_model(ckpt)? {
        AnyModel::NeuroView(m) => Ok(m),
        AnyModel::Baseline(_) => bail!("{} is a baseline checkpoint; this command needs a NeuroView model", ckpt.display()),
    }
}

fn parse_format(s: &str) -> Result<Format> {
    s.parse().with_context(|| format!("--format {s}"))
}

fn parse_data_format(s: &str) -> Result<DataFormat> {
    s.parse().with_context(|| format!("--format {s}"))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    class_names: &'a [String],
    #[serde(flatten)]
    report: train::EvalReport,
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let plan = RunPlan::from_args(&args)?;
    let (train_data, val_data) = load_pair(&plan.data.path, plan.data.format)
        .with_context(|| format!("loading --data {}", plan.data.path.display()))?;
    let run = plan.resolve(&train_data)?;
    out_dir(&args.out)?;
    write_manifest(&args.out, "train", &run)?;

    let metrics_path = args.out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path).with_context(|| metrics_path.display().to_string())?);
    let mut log = |m: &train::EpochMetrics| -> neuroview::Result<()> {
        let line = serde_json::to_string(m)?;
        writeln!(metrics, "{line}").map_err(|e| neuroview::Error::Io { path: metrics_path.clone(), source: e })?;
        eprintln!(
            "epoch {} lr {} loss {:.4} val_acc {}",
            m.epoch + 1,
            m.lr,
            m.train_loss,
            m.val_acc.map_or("-".into(), |a| format!("{:.4}", a))
        );
        Ok(())
    };
    let ckpt = args.out.join(CHECKPOINT_DIR);
    let report = match run.family {
        Family::NeuroView => {
            let cfg = run.neuroview.clone().expect("neuroview family carries a config");
            let mut model = NeuroViewModel::<f32>::new(run.arch.clone(), cfg, run.train.seed)?;
            train::train(&mut model, &train_data, Some(&val_data), &run.train, |m, _| log(m))?;
            checkpoint::save_neuroview(&model, &ckpt)?;
            train::evaluate(&model, &val_data)?
        }
        Family::Baseline => {
            let mut model = BaselineModel::<f32>::new(run.arch.clone(), run.train.seed)?;
            train::train(&mut model, &train_data, Some(&val_data), &run.train, |m, _| log(m))?;
            checkpoint::save_baseline(&model, &ckpt)?;
            train::evaluate(&model, &val_data)?
        }
    };
    metrics.flush().context("flushing metrics")?;
    println!("val accuracy {:.4}", report.accuracy);
    write_json(&args.out.join(EVAL_FILE), &EvalOutput { class_names: &val_data.class_names, report })?;
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let model = load_model(&args.ckpt)?;
    let format = parse_data_format(&args.format)?;
    let data = load_split(&args.data, format, Split::Val).with_context(|| format!("loading --data {}", args.data.display()))?;
    let report = train::evaluate(&model, &data)?;
    out_dir(&args.out)?;
    println!("accuracy {:.4}", report.accuracy);
    write_json(&args.out.join(EVAL_FILE), &EvalOutput { class_names: &data.class_names, report })?;
    write_manifest(&args.out, "eval", &args)?;
    Ok(ExitCode::SUCCESS)
}

fn emit(artifact: &dyn Render, format: Format, out: &Path, stem: String) -> Result<PathBuf> {
    out_dir(out)?;
    let path = out.join(format!("{stem}.{}", format.extension()));
    write_artifact(artifact, format, &path)?;
    println!("{}", path.display());
    Ok(path)
}

pub fn explain(args: ExplainArgs) -> Result<ExitCode> {
    let format = parse_format(&args.format)?;
    let model = load_neuroview(&args.ckpt)?;
    let report = explain::weight_report(&model, args.class, None)?;
    emit(&report, format, &args.out, format!("weights_class{}", args.class))?;
    write_manifest(&args.out, "explain", &args)?;
    Ok(ExitCode::SUCCESS)
}

pub fn concepts(args: ConceptsArgs) -> Result<ExitCode> {
    let format = parse_format(&args.format)?;
    let model = load_neuroview(&args.ckpt)?;
    let labels = ConceptLabelTable::load(&args.labels).with_context(|| format!("--labels {}", args.labels.display()))?;
    let map = explain::concept_map(&model, &labels, args.class, args.top_k, None)?;
    emit(&map, format, &args.out, format!("concepts_class{}", args.class))?;
    write_manifest(&args.out, "concepts", &args)?;
    Ok(ExitCode::SUCCESS)
}

pub fn view_means(args: ViewMeansArgs) -> Result<ExitCode> {
    let format = parse_format(&args.format)?;
    let model = load_neuroview(&args.ckpt)?;
    let means = explain::view_mean(&model, args.class, None)?;
    emit(&means, format, &args.out, format!("view_means_class{}", args.class))?;
    write_manifest(&args.out, "view-means", &args)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, dir)) => (name.to_string(), PathBuf::from(dir)),
        None => {
            let dir = PathBuf::from(arg);
            let name = dir.file_name().map_or_else(|| arg.to_string(), |n| n.to_string_lossy().into_owned());
            (name, dir)
        }
    }
}

pub fn perturb(args: PerturbArgs) -> Result<ExitCode> {
    let channels: Vec<Channel> = args
        .channels
        .iter()
        .map(|c| c.parse().with_context(|| format!("--channels {c}")))
        .collect::<Result<_>>()?;
    let format = parse_data_format(&args.format)?;
    let data = load_split(&args.data, format, Split::Val).with_context(|| format!("loading --data {}", args.data.display()))?;
    let mut models = Vec::new();
    for arg in &args.models {
        let (name, dir) = parse_model_arg(arg);
        models.push((name, load_model(&dir)?));
    }
    let refs: Vec<(&str, &dyn Classifier<f32>)> =
        models.iter().map(|(n, m)| (n.as_str(), m as &dyn Classifier<f32>)).collect();
    let report = counterfactual_table(&refs, &data, &channels)?;
    out_dir(&args.out)?;
    let csv = args.out.join("counterfactual.csv");
    fs::write(&csv, report.to_csv()).with_context(|| csv.display().to_string())?;
    fs::write(args.out.join("counterfactual.json"), report.to_json()).context("writing counterfactual.json")?;
    print!("{}", report.to_csv());
    write_manifest(&args.out, "perturb", &args)?;
    Ok(ExitCode::SUCCESS)
}

fn truncate(mut data: Dataset, limit: Option<usize>) -> Result<Dataset> {
    if let Some(n) = limit {
        if n < data.len() {
            let rows: Vec<usize> = (0..n).collect();
            data.images = data.images.gather_batch(&rows)?;
            data.labels.truncate(n);
        }
    }
    Ok(data)
}

pub fn make_colored_mnist(args: ColoredArgs) -> Result<ExitCode> {
    out_dir(&args.out)?;
    // The validation split is tinted from seed + 1 so the two splits draw
    // independent colors.
    for (split, rho, seed) in [
        (Split::Train, args.rho, args.seed),
        (Split::Val, args.val_rho.unwrap_or(args.rho), args.seed.wrapping_add(1)),
    ] {
        let paths = split_paths(&args.data, DataFormat::Idx, split);
        let base = truncate(load_idx_pair(&paths[0], &paths[1], split)?, args.limit)?;
        let palette = &DEFAULT_PALETTE[..base.num_classes()];
        let colored = train::make_colored_mnist(&base, rho, palette, seed)?;
        let dir = split_paths(&args.out, DataFormat::PngDir, split).remove(0);
        write_png_dir(&colored.dataset, &dir)?;
        println!("{} {} samples, class-color agreement {:.4}", dir.display(), colored.dataset.len(), colored.agreement());
    }
    write_manifest(&args.out, "dataset make-colored-mnist", &args)?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let checks = gradcheck::run_suite(args.seed, args.instances, gradcheck::DEFAULT_STEP)?;
    let mut worst = 0.0f64;
    for c in &checks {
        println!("{:<24} {:>4} cases  max rel err {:.3e}", c.op, c.instances, c.max_rel_error);
        worst = worst.max(c.max_rel_error);
    }
    let passed = checks.iter().all(|c| c.passed(gradcheck::DEFAULT_TOLERANCE));
    println!("max relative error {worst:.3e} (tolerance {:.0e})", gradcheck::DEFAULT_TOLERANCE);
    if let Some(out) = &args.out {
        out_dir(out)?;
        write_json(&out.join("gradcheck.json"), &checks)?;
        write_manifest(out, "gradcheck", &args)?;
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
