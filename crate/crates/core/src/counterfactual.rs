//! Channel-perturbation counterfactuals: zero one color channel of an
//! evaluation set and compare per-class accuracy against the clean set.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::scalar::Scalar;
use crate::train::{evaluate, Dataset, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    None,
    Red,
    Green,
    Blue,
}

impl Channel {
    /// Report column order.
    pub const ALL: [Channel; 4] = [Channel::None, Channel::Red, Channel::Green, Channel::Blue];

    /// RGB plane index; `None` for the identity perturbation.
    pub fn index(self) -> Option<usize> {
        match self {
            Channel::None => None,
            Channel::Red => Some(0),
            Channel::Green => Some(1),
            Channel::Blue => Some(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::None => "none",
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown channel `{s}` (expected none, red, green or blue)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub channel: Channel,
    /// The split this perturbation is meant for; applying it to another
    /// split is an error.
    pub applies_to: Split,
}

impl PerturbSpec {
    pub fn new(channel: Channel, applies_to: Split) -> Self {
        PerturbSpec { channel, applies_to }
    }
}

/// Copy of `data` with the chosen RGB plane set to 0 in every view. Labels,
/// sample order and the other planes are bit-identical.
pub fn perturb(data: &Dataset, spec: PerturbSpec) -> Result<Dataset> {
    if data.split != spec.applies_to {
        return Err(Error::Validation(format!(
            "perturbation targets the {:?} split, dataset is {:?}",
            spec.applies_to, data.split
        )));
    }
    let Some(plane) = spec.channel.index() else {
        return Ok(data.clone());
    };
    let [c, h, w] = data.view_shape();
    if c != 3 {
        return Err(Error::Validation(format!(
            "cannot zero the {} channel of {c}-channel images",
            spec.channel
        )));
    }
    let mut out = data.clone();
    let area = h * w;
    let per_sample = data.views * c * area;
    for sample in out.images.data_mut().chunks_mut(per_sample) {
        for view in sample.chunks_mut(c * area) {
            view[plane * area..(plane + 1) * area].fill(0.0);
        }
    }
    Ok(out)
}

/// RGB plane with the largest mean intensity; ties go to the earlier plane.
pub fn dominant_channel(data: &Dataset) -> Result<Channel> {
    let [c, h, w] = data.view_shape();
    if c != 3 {
        return Err(Error::Validation(format!("{c}-channel images have no color channels")));
    }
    let area = h * w;
    let mut sums = [0f64; 3];
    for view in data.images.data().chunks(c * area) {
        for (p, s) in sums.iter_mut().enumerate() {
            *s += view[p * area..(p + 1) * area].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    let best = (0..3).fold(0, |b, p| if sums[p] > sums[b] { p } else { b });
    Ok([Channel::Red, Channel::Green, Channel::Blue][best])
}

/// Accuracies in percent, kept at full precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub networks: Vec<String>,
    pub class_names: Vec<String>,
    pub channels: Vec<Channel>,
    /// `per_class[network][class][channel]`, channel in `channels` order.
    pub per_class: Vec<Vec<Vec<f64>>>,
    /// `overall[network][channel]`.
    pub overall: Vec<Vec<f64>>,
}

pub const REPORT_HEADER: &str = "network,class,none,red,green,blue";

impl CounterfactualReport {
    pub fn overall_accuracy(&self, network: usize, channel: Channel) -> Option<f64> {
        let c = self.channels.iter().position(|&x| x == channel)?;
        Some(self.overall.get(network)?[c])
    }

    /// One row per (network, class) plus an `all` row per network. Columns
    /// for channels that were not evaluated are left empty. Percentages are
    /// rounded to one decimal here and only here.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        let cells = |values: &[f64]| {
            Channel::ALL
                .iter()
                .map(|ch| match self.channels.iter().position(|c| c == ch) {
                    Some(i) => format!("{:.1}", values[i]),
                    None => String::new(),
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        for (n, net) in self.networks.iter().enumerate() {
            for (k, class) in self.class_names.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", csv_field(net), csv_field(class), cells(&self.per_class[n][k]));
            }
            let _ = writeln!(s, "{},all,{}", csv_field(net), cells(&self.overall[n]));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One [`evaluate`] per (model, channel), in argument order.
pub fn counterfactual_table<T: Scalar>(
    models: &[(&str, &dyn Classifier<T>)],
    data: &Dataset,
    channels: &[Channel],
) -> Result<CounterfactualReport> {
    let mut channels = channels.to_vec();
    channels.sort();
    channels.dedup();
    let perturbed: Vec<Dataset> =
        channels.iter().map(|&c| perturb(data, PerturbSpec::new(c, data.split))).collect::<Result<_>>()?;
    let k = data.num_classes();
    let mut per_class = Vec::with_capacity(models.len());
    let mut overall = Vec::with_capacity(models.len());
    for (_, model) in models {
        let mut table = vec![vec![0.0; channels.len()]; k];
        let mut totals = Vec::with_capacity(channels.len());
        for (c, ds) in perturbed.iter().enumerate() {
            let report = evaluate(*model, ds)?;
            for (row, acc) in table.iter_mut().zip(&report.per_class_accuracy) {
                row[c] = 100.0 * acc;
            }
            totals.push(100.0 * report.accuracy);
        }
        per_class.push(table);
        overall.push(totals);
    }
    Ok(CounterfactualReport {
        networks: models.iter().map(|(n, _)| n.to_string()).collect(),
        class_names: data.class_names.clone(),
        channels,
        per_class,
        overall,
    })
}
