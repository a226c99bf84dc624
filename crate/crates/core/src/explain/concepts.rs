//! Concept sums: head weights grouped by externally supplied unit labels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{class_name, ExactSum};
use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::neuroview::NeuroViewModel;
use crate::scalar::Scalar;

/// Bucket for units the label table does not mention.
pub const UNLABELED: &str = "unlabeled";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Color,
    Texture,
    Object,
    Scene,
    Part,
    Material,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Color, Category::Texture, Category::Object, Category::Scene, Category::Part, Category::Material];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Texture => "texture",
            Category::Object => "object",
            Category::Scene => "scene",
            Category::Part => "part",
            Category::Material => "material",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown concept category `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptLabel {
    pub concept: String,
    pub category: Category,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    layer: usize,
    channel: usize,
    concept: String,
    category: String,
}

/// Unit `(layer, channel)` → concept. A label covers that unit in every view.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConceptLabelTable {
    labels: BTreeMap<(usize, usize), ConceptLabel>,
}

impl ConceptLabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, layer: usize, channel: usize) -> Option<&ConceptLabel> {
        self.labels.get(&(layer, channel))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &ConceptLabel)> {
        self.labels.iter().map(|(&k, v)| (k, v))
    }

    /// Fails on a second label for the same unit, on the reserved
    /// [`UNLABELED`] name, and on a concept filed under two categories.
    pub fn insert(&mut self, layer: usize, channel: usize, label: ConceptLabel) -> Result<()> {
        if label.concept.is_empty() || label.concept == UNLABELED {
            return Err(Error::Validation(format!("concept name `{}` is reserved", label.concept)));
        }
        if let Some(other) = self.labels.values().find(|l| l.concept == label.concept && l.category != label.category) {
            return Err(Error::Validation(format!(
                "concept `{}` listed as both {} and {}",
                label.concept, other.category, label.category
            )));
        }
        if self.labels.contains_key(&(layer, channel)) {
            return Err(Error::Validation(format!("unit (layer {layer}, channel {channel}) labeled twice")));
        }
        self.labels.insert((layer, channel), label);
        Ok(())
    }

    /// CSV with header `layer,channel,concept,category`.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut table = ConceptLabelTable::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["layer", "channel", "concept", "category"] {
            return Err(Error::Validation(format!(
                "label table header must be `layer,channel,concept,category`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        for row in rdr.deserialize() {
            let row: LabelRow = row?;
            let category = row.category.parse()?;
            table.insert(row.layer, row.channel, ConceptLabel { concept: row.concept, category })?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,channel,concept,category\n");
        for ((layer, channel), l) in self.iter() {
            out.push_str(&format!("{layer},{channel},{},{}\n", csv_field(&l.concept), l.category));
        }
        out
    }

    /// Every label must name a conv layer of `spec` and one of its channels.
    pub fn validate(&self, spec: &ArchSpec) -> Result<()> {
        let layout = spec.unit_layout();
        for (layer, channel) in self.labels.keys() {
            let block = layout.iter().find(|b| b.layer == *layer).ok_or_else(|| {
                Error::Validation(format!("label references layer {layer}, which is not a convolution of `{}`", spec.name))
            })?;
            if *channel >= block.channels {
                return Err(Error::Validation(format!(
                    "label references channel {channel} of layer {layer}, which has {} channels",
                    block.channels
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSum {
    pub concept: String,
    /// `None` for the unlabeled bucket.
    pub category: Option<Category>,
    /// Number of head columns in this concept.
    pub units: usize,
    /// Exact signed sum.
    pub exact: ExactSum,
    /// `exact` rounded to the nearest f64.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMap {
    pub class: usize,
    pub class_name: String,
    pub top_k: usize,
    /// Sorted by concept name; the unlabeled bucket is present whenever
    /// some unit is unlabeled.
    pub concepts: Vec<ConceptSum>,
    /// Largest positive sums first.
    pub top_positive: Vec<String>,
    /// Most negative sums first.
    pub top_negative: Vec<String>,
}

impl ConceptMap {
    /// Exact Σ over all concepts.
    pub fn total(&self) -> ExactSum {
        self.concepts.iter().map(|c| &c.exact).sum()
    }

    pub fn get(&self, concept: &str) -> Option<&ConceptSum> {
        self.concepts.iter().find(|c| c.concept == concept)
    }

    /// |sum| / Σ|sums| for each concept, in `concepts` order. All zero when
    /// every sum is zero.
    pub fn shares(&self) -> Vec<f64> {
        let denom: f64 = self.concepts.iter().map(|c| c.weight.abs()).sum();
        self.concepts.iter().map(|c| if denom > 0.0 { c.weight.abs() / denom } else { 0.0 }).collect()
    }

    /// Recomputes both top-k lists from `concepts`.
    pub fn rank(&mut self, top_k: usize) {
        let (pos, neg) = rank(&self.concepts, top_k);
        self.top_k = top_k;
        self.top_positive = pos;
        self.top_negative = neg;
    }
}

/// Signed ordering on exact sums; ties by concept name ascending.
fn rank(concepts: &[ConceptSum], k: usize) -> (Vec<String>, Vec<String>) {
    let zero = ExactSum::new().to_rational();
    let mut pos: Vec<&ConceptSum> = concepts.iter().filter(|c| c.exact.to_rational() > zero).collect();
    pos.sort_by(|a, b| b.exact.to_rational().cmp(&a.exact.to_rational()).then_with(|| a.concept.cmp(&b.concept)));
    let mut neg: Vec<&ConceptSum> = concepts.iter().filter(|c| c.exact.to_rational() < zero).collect();
    neg.sort_by(|a, b| a.exact.to_rational().cmp(&b.exact.to_rational()).then_with(|| a.concept.cmp(&b.concept)));
    let names = |v: Vec<&ConceptSum>| v.into_iter().take(k).map(|c| c.concept.clone()).collect();
    (names(pos), names(neg))
}

pub fn concept_map<T: Scalar>(
    model: &NeuroViewModel<T>,
    labels: &ConceptLabelTable,
    class: usize,
    top_k: usize,
    class_names: Option<&[String]>,
) -> Result<ConceptMap> {
    labels.validate(&model.spec)?;
    let row = model.weight_row(class)?;
    let mut groups: BTreeMap<String, (Option<Category>, usize, ExactSum)> = BTreeMap::new();
    for e in &row {
        let (name, category) = match labels.get(e.layer, e.channel) {
            Some(l) => (l.concept.as_str(), Some(l.category)),
            None => (UNLABELED, None),
        };
        let slot = groups.entry(name.to_string()).or_insert_with(|| (category, 0, ExactSum::new()));
        slot.1 += 1;
        slot.2.add(e.weight);
    }
    let concepts: Vec<ConceptSum> = groups
        .into_iter()
        .map(|(concept, (category, units, exact))| ConceptSum { concept, category, units, weight: exact.to_f64(), exact })
        .collect();
    let mut map = ConceptMap {
        class,
        class_name: class_name(class_names, class),
        top_k,
        concepts,
        top_positive: vec![],
        top_negative: vec![],
    };
    map.rank(top_k);
    Ok(map)
}
