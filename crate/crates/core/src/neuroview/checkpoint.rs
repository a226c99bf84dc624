//! On-disk checkpoints: a JSON manifest plus one raw blob per parameter.
//!
//! Layout of a checkpoint directory:
//!
//! ```text
//! manifest.json        format, family, arch, config, seed, tensor index
//! <name>.bin           numel little-endian IEEE-754 binary32 values,
//!                      row-major in the manifest's shape, no header
//! ```
//!
//! Nothing time- or host-dependent is written, so two identical models
//! produce byte-identical directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NeuroViewConfig, NeuroViewModel};
use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape, Tensor};
use crate::train::BaselineModel;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "neuroview-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    NeuroView,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub family: Family,
    pub arch: ArchSpec,
    /// Present for the NeuroView family only.
    pub config: Option<NeuroViewConfig>,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

/// A model of either family, as restored from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel<T> {
    NeuroView(NeuroViewModel<T>),
    Baseline(BaselineModel<T>),
}

impl<T: Scalar> AnyModel<T> {
    pub fn family(&self) -> Family {
        match self {
            AnyModel::NeuroView(_) => Family::NeuroView,
            AnyModel::Baseline(_) => Family::Baseline,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AnyModel::NeuroView(m) => m.seed,
            AnyModel::Baseline(m) => m.seed,
        }
    }

    pub fn config(&self) -> Option<&NeuroViewConfig> {
        match self {
            AnyModel::NeuroView(m) => Some(&m.config),
            AnyModel::Baseline(_) => None,
        }
    }

    pub fn as_neuroview(&self) -> Option<&NeuroViewModel<T>> {
        match self {
            AnyModel::NeuroView(m) => Some(m),
            AnyModel::Baseline(_) => None,
        }
    }

    fn inner(&self) -> &dyn Classifier<T> {
        match self {
            AnyModel::NeuroView(m) => m,
            AnyModel::Baseline(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier<T> {
        match self {
            AnyModel::NeuroView(m) => m,
            AnyModel::Baseline(m) => m,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save(self.inner(), self.family(), self.config(), self.seed(), dir)
    }
}

impl<T: Scalar> Classifier<T> for AnyModel<T> {
    fn spec(&self) -> &ArchSpec {
        self.inner().spec()
    }

    fn views(&self) -> usize {
        self.inner().views()
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner_mut().params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner().param_names()
    }

    fn logits_on_tape(&self, tape: &mut Tape<T>, params: &[NodeId], inputs: &[NodeId]) -> Result<NodeId> {
        self.inner().logits_on_tape(tape, params, inputs)
    }
}

fn blob_name(param: &str) -> String {
    format!("{param}.bin")
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn save<T: Scalar>(
    model: &dyn Classifier<T>,
    family: Family,
    config: Option<&NeuroViewConfig>,
    seed: u64,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in model.param_names().into_iter().zip(model.params()) {
        let file = blob_name(&name);
        let mut bytes = Vec::with_capacity(4 * t.numel());
        for &v in t.data() {
            bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        write_file(dir.join(&file), &bytes)?;
        tensors.push(TensorEntry { name, shape: t.shape().to_vec(), dtype: "f32le".into(), file });
    }
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        family,
        arch: model.spec().clone(),
        config: config.cloned(),
        seed,
        tensors,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn save_neuroview<T: Scalar>(model: &NeuroViewModel<T>, dir: &Path) -> Result<()> {
    save(model, Family::NeuroView, Some(&model.config), model.seed, dir)
}

pub fn save_baseline<T: Scalar>(model: &BaselineModel<T>, dir: &Path) -> Result<()> {
    save(model, Family::Baseline, None, model.seed, dir)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            path,
            msg: format!("unsupported format {} v{}", manifest.format, manifest.version),
        });
    }
    manifest.arch.validate()?;
    Ok(manifest)
}

/// Restores a model of whichever family the manifest names.
pub fn load<T: Scalar>(dir: &Path) -> Result<AnyModel<T>> {
    let manifest = read_manifest(dir)?;
    let mut model = match manifest.family {
        Family::NeuroView => {
            let config = manifest.config.clone().ok_or_else(|| Error::Checkpoint {
                path: dir.join(MANIFEST_FILE),
                msg: "neuroview checkpoint without a config".into(),
            })?;
            let mut m = NeuroViewModel::zeros(manifest.arch.clone(), config)?;
            m.seed = manifest.seed;
            AnyModel::NeuroView(m)
        }
        Family::Baseline => {
            let backbone = crate::arch::Backbone::zeros(&manifest.arch)?;
            AnyModel::Baseline(BaselineModel::with_backbone(manifest.arch.clone(), manifest.seed, backbone)?)
        }
    };
    let names = model.param_names();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint {
            path: dir.join(MANIFEST_FILE),
            msg: format!("expected {} tensors, manifest lists {}", names.len(), manifest.tensors.len()),
        });
    }
    for ((name, slot), entry) in names.iter().zip(model.params_mut()).zip(&manifest.tensors) {
        let path = dir.join(&entry.file);
        let fail = |msg: String| Error::Checkpoint { path: path.clone(), msg };
        if &entry.name != name {
            return Err(fail(format!("expected tensor `{name}`, found `{}`", entry.name)));
        }
        if entry.shape != slot.shape() || entry.dtype != "f32le" {
            return Err(fail(format!("`{name}` has shape {:?}/{}, expected {:?}/f32le", entry.shape, entry.dtype, slot.shape())));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != 4 * slot.numel() {
            return Err(fail(format!("blob holds {} bytes, expected {}", bytes.len(), 4 * slot.numel())));
        }
        for (dst, chunk) in slot.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of four bytes"));
            *dst = T::from_f64_lossy(v as f64);
        }
    }
    Ok(model)
}
