//! Reports read off a trained NeuroView head: per-class weight rows split by
//! layer and view, concept sums over unit labels, and per-view means.

pub mod concepts;
mod exact;
pub mod render;

pub use concepts::{concept_map, Category, ConceptLabel, ConceptLabelTable, ConceptMap, ConceptSum, UNLABELED};
pub use exact::ExactSum;
pub use render::{write_artifact, Format, Render};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neuroview::{NeuroViewModel, UnitWeight};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    /// Entries of this layer across all views.
    pub units: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Σ positive weights / Σ |weights|; 0 when every weight is 0.
    pub positive_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightReport {
    pub class: usize,
    pub class_name: String,
    /// One entry per head column, in concatenation order.
    pub entries: Vec<UnitWeight>,
    /// In order of first appearance in `entries`.
    pub layers: Vec<LayerSummary>,
}

impl ClassWeightReport {
    /// Builds the report and its summaries from raw entries.
    pub fn from_entries(class: usize, class_name: String, entries: Vec<UnitWeight>) -> Self {
        let mut order: Vec<usize> = Vec::new();
        for e in &entries {
            if !order.contains(&e.layer) {
                order.push(e.layer);
            }
        }
        let layers = order
            .into_iter()
            .map(|layer| {
                let ws: Vec<f64> = entries.iter().filter(|e| e.layer == layer).map(|e| e.weight).collect();
                summarize(layer, &ws)
            })
            .collect();
        ClassWeightReport { class, class_name, entries, layers }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn exact_total(&self) -> ExactSum {
        ExactSum::of(self.entries.iter().map(|e| e.weight))
    }
}

fn summarize(layer: usize, ws: &[f64]) -> LayerSummary {
    let n = ws.len();
    let min = ws.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = ws.iter().sum::<f64>() / n as f64;
    let pos: f64 = ws.iter().filter(|&&w| w > 0.0).sum();
    let abs: f64 = ws.iter().map(|w| w.abs()).sum();
    LayerSummary {
        layer,
        units: n,
        min,
        max,
        mean,
        positive_share: if abs > 0.0 { pos / abs } else { 0.0 },
    }
}

/// Display name of class `k`: `names[k]` when present, else its index.
pub fn class_name(names: Option<&[String]>, k: usize) -> String {
    names.and_then(|n| n.get(k)).cloned().unwrap_or_else(|| k.to_string())
}

pub fn weight_report<T: Scalar>(
    model: &NeuroViewModel<T>,
    class: usize,
    class_names: Option<&[String]>,
) -> Result<ClassWeightReport> {
    let entries = model.weight_row(class)?;
    Ok(ClassWeightReport::from_entries(class, class_name(class_names, class), entries))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMean {
    pub view: usize,
    pub mean_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMeans {
    pub class: usize,
    pub class_name: String,
    pub views: Vec<ViewMean>,
}

/// Σ of a view's head weights divided by the per-view unit count.
pub fn view_mean<T: Scalar>(
    model: &NeuroViewModel<T>,
    class: usize,
    class_names: Option<&[String]>,
) -> Result<ViewMeans> {
    let row = model.weight_row(class)?;
    let per_view = model.units_per_view();
    let views = row
        .chunks(per_view)
        .enumerate()
        .map(|(view, block)| ViewMean {
            view,
            mean_weight: block.iter().map(|e| e.weight).sum::<f64>() / per_view as f64,
        })
        .collect();
    Ok(ViewMeans { class, class_name: class_name(class_names, class), views })
}
