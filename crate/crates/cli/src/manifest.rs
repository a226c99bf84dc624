//! Resolved run configuration and the manifest written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use neuroview::arch::{ArchSpec, PRESETS};
use neuroview::neuroview::checkpoint::Family;
use neuroview::train::{DataFormat, Dataset, TrainConfig};
use neuroview::NeuroViewConfig;
use serde::{Deserialize, Serialize};

use crate::TrainArgs;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
pub struct RunManifest<C> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: C,
}

pub fn write_manifest<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<()> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataRef {
    pub path: PathBuf,
    pub format: DataFormat,
}

/// Everything a training run depends on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRun {
    pub arch: ArchSpec,
    pub family: Family,
    /// Absent for the baseline family.
    pub neuroview: Option<NeuroViewConfig>,
    pub train: TrainConfig,
    pub data: DataRef,
}

/// A preset name, or a full spec. Presets adapt their input shape and class
/// count to the dataset; explicit specs are used as written.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum ArchRef {
    Name(String),
    Spec(ArchSpec),
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialData {
    path: Option<PathBuf>,
    format: Option<DataFormat>,
}

/// `--config` contents: any subset of [`TrainRun`].
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialRun {
    arch: Option<ArchRef>,
    family: Option<Family>,
    neuroview: Option<NeuroViewConfig>,
    train: Option<TrainConfig>,
    data: Option<PartialData>,
}

fn read_config(path: &Path) -> Result<PartialRun> {
    let text = fs::read_to_string(path).with_context(|| format!("reading --config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing --config {}", path.display()))?;
    // A previous run's manifest wraps the run under `config`.
    if value.get("command").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).with_context(|| format!("parsing --config {}", path.display()))
}

/// Arch named on the command line: a preset, or a JSON file path.
fn arch_from_flag(flag: &str) -> Result<ArchRef> {
    if PRESETS.contains(&flag) {
        return Ok(ArchRef::Name(flag.to_string()));
    }
    let path = Path::new(flag);
    if !path.exists() {
        bail!("--arch `{flag}` is neither a preset ({}) nor an existing file", PRESETS.join(", "));
    }
    Ok(ArchRef::Spec(ArchSpec::load(path).with_context(|| format!("--arch {flag}"))?))
}

/// Unresolved run: everything except the dataset-dependent arch fields.
pub struct RunPlan {
    arch: ArchRef,
    pub family: Family,
    pub neuroview: NeuroViewConfig,
    pub train: TrainConfig,
    pub data: DataRef,
}

impl RunPlan {
    /// Built-in defaults, then `--config`, then flags.
    pub fn from_args(a: &TrainArgs) -> Result<Self> {
        let file = match &a.config {
            Some(p) => read_config(p)?,
            None => PartialRun::default(),
        };
        let arch = match &a.arch {
            Some(flag) => arch_from_flag(flag)?,
            None => file.arch.unwrap_or_else(|| ArchRef::Name("vgg-mini".into())),
        };
        let family = if a.baseline {
            Family::Baseline
        } else if a.neuroview {
            Family::NeuroView
        } else {
            file.family.unwrap_or(Family::NeuroView)
        };
        let mut nv = file.neuroview.unwrap_or_default();
        if let Some(r) = &a.reduce {
            nv.reduce = r.parse().with_context(|| format!("--reduce {r}"))?;
        }
        if let Some(v) = &a.vq {
            nv.vq = v.parse().with_context(|| format!("--vq {v}"))?;
        }
        if let Some(v) = a.views {
            nv.views = v;
        }
        nv.validate().context("neuroview configuration")?;
        if family == Family::Baseline && nv.views != 1 {
            bail!("--views {} needs --neuroview; the baseline takes a single view", nv.views);
        }

        let mut train = file.train.unwrap_or_default();
        if let Some(v) = a.epochs {
            train.epochs = v;
        }
        if let Some(v) = a.batch {
            train.batch_size = v;
        }
        if let Some(v) = a.lr {
            train.learning_rate = v;
        }
        if let Some(v) = a.momentum {
            train.momentum = v;
        }
        if let Some(v) = a.wd {
            train.weight_decay = v;
        }
        if let Some(v) = a.seed {
            train.seed = v;
        }
        train.validate().context("training configuration")?;

        let file_data = file.data.unwrap_or_default();
        let path = a.data.clone().or(file_data.path).context("no dataset given: pass --data PATH")?;
        let format = match &a.format {
            Some(f) => f.parse().with_context(|| format!("--format {f}"))?,
            None => file_data.format.unwrap_or(DataFormat::Idx),
        };
        Ok(RunPlan { arch, family, neuroview: nv, train, data: DataRef { path, format } })
    }

    /// Fixes the architecture against the loaded training split.
    pub fn resolve(self, train_data: &Dataset) -> Result<TrainRun> {
        let arch = match self.arch {
            ArchRef::Name(name) => ArchSpec::preset(&name)?
                .with_input_shape(train_data.view_shape())?
                .with_classes(train_data.num_classes())?,
            ArchRef::Spec(spec) => spec,
        };
        if train_data.views != self.neuroview.views {
            bail!(
                "dataset {} has {} view(s) per sample but --views is {}",
                self.data.path.display(),
                train_data.views,
                self.neuroview.views
            );
        }
        Ok(TrainRun {
            arch,
            neuroview: (self.family == Family::NeuroView).then_some(self.neuroview),
            family: self.family,
            train: self.train,
            data: self.data,
        })
    }
}
