//! CSV, JSON and SVG forms of the explain artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so CSV and
//! JSON parse back to identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::concepts::csv_field;
use super::{class_name, ClassWeightReport, ConceptMap, ViewMean, ViewMeans};
use crate::error::{Error, Result};
use crate::neuroview::UnitWeight;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv, json or svg)"))),
        }
    }
}

pub trait Render {
    fn to_csv(&self) -> String;
    fn to_json(&self) -> String;
    fn to_svg(&self) -> String;

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
            Format::Svg => self.to_svg(),
        }
    }
}

pub fn write_artifact(artifact: &dyn Render, format: Format, path: &Path) -> Result<()> {
    fs::write(path, artifact.render(format)).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Categorical colors for consecutive layers.
const LAYER_COLORS: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Bar {
    value: f64,
    color: &'static str,
    label: Option<String>,
}

/// Vertical bar chart with a zero baseline. `labels` prints each bar's label
/// under it; leave them off for thousands of bars.
fn bar_chart(title: &str, y_label: &str, bars: &[Bar], legend: &[(String, &'static str)]) -> String {
    const W: f64 = 960.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const TOP: f64 = 40.0;
    const PLOT_H: f64 = 300.0;
    let plot_w = W - LEFT - 20.0;
    let extent = bars.iter().map(|b| b.value.abs()).fold(0.0, f64::max);
    let scale = if extent > 0.0 { PLOT_H / 2.0 / extent } else { 0.0 };
    let zero_y = TOP + PLOT_H / 2.0;
    let step = plot_w / bars.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{zero_y}" transform="rotate(-90 16 {zero_y})" text-anchor="middle">{}</text>"#,
        xml_escape(y_label)
    );
    for (v, y) in [(extent, TOP), (0.0, zero_y), (-extent, TOP + PLOT_H)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, LEFT - 6.0, y + 4.0, v);
    }
    let _ = writeln!(s, "<g>");
    for (i, b) in bars.iter().enumerate() {
        let h = b.value.abs() * scale;
        let y = if b.value >= 0.0 { zero_y - h } else { zero_y };
        let x = LEFT + i as f64 * step;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{h:.3}" fill="{}"/>"#,
            (step * 0.9).max(0.05),
            b.color
        );
        if let Some(label) = &b.label {
            let lx = x + step / 2.0;
            let ly = TOP + PLOT_H + 14.0;
            let _ = writeln!(
                s,
                r#"<text x="{lx:.3}" y="{ly}" transform="rotate(45 {lx:.3} {ly})">{}</text>"#,
                xml_escape(label)
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{zero_y}" x2="{}" y2="{zero_y}" stroke="black" stroke-width="0.5"/>"#,
        LEFT + plot_w
    );
    for (i, (name, color)) in legend.iter().enumerate() {
        let x = LEFT + (i % 8) as f64 * 105.0;
        let y = H - 14.0 - (i / 8) as f64 * 16.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

pub const WEIGHT_REPORT_HEADER: &str = "class,layer,view,channel,weight";

#[derive(Deserialize)]
struct WeightRow {
    class: usize,
    layer: usize,
    view: usize,
    channel: usize,
    weight: f64,
}

impl ClassWeightReport {
    /// Parses [`Render::to_csv`] output. The CSV carries the class index
    /// only, so the name comes from `class_names` as in
    /// [`weight_report`](super::weight_report).
    pub fn from_csv(text: &str, class_names: Option<&[String]>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        if rdr.headers()?.iter().collect::<Vec<_>>().join(",") != WEIGHT_REPORT_HEADER {
            return Err(Error::Validation(format!("weight report header must be `{WEIGHT_REPORT_HEADER}`")));
        }
        let mut class = None;
        let mut entries = Vec::new();
        for row in rdr.deserialize() {
            let r: WeightRow = row?;
            if *class.get_or_insert(r.class) != r.class {
                return Err(Error::Validation("weight report mixes classes".into()));
            }
            entries.push(UnitWeight { layer: r.layer, view: r.view, channel: r.channel, weight: r.weight });
        }
        let class = class.ok_or_else(|| Error::Validation("weight report has no rows".into()))?;
        Ok(ClassWeightReport::from_entries(class, class_name(class_names, class), entries))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Render for ClassWeightReport {
    fn to_csv(&self) -> String {
        let mut s = format!("{WEIGHT_REPORT_HEADER}\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{},{}", self.class, e.layer, e.view, e.channel, e.weight);
        }
        s
    }

    fn to_json(&self) -> String {
        json(self)
    }

    /// Unit index on x, weight on y, one color per layer.
    fn to_svg(&self) -> String {
        let color_of = |layer: usize| {
            let i = self.layers.iter().position(|l| l.layer == layer).unwrap_or(0);
            LAYER_COLORS[i % LAYER_COLORS.len()]
        };
        let bars: Vec<Bar> =
            self.entries.iter().map(|e| Bar { value: e.weight, color: color_of(e.layer), label: None }).collect();
        let legend: Vec<_> = self.layers.iter().map(|l| (format!("layer {}", l.layer), color_of(l.layer))).collect();
        bar_chart(&format!("Head weights for class {}", self.class_name), "weight", &bars, &legend)
    }
}

impl ConceptMap {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub const CONCEPT_MAP_HEADER: &str = "class,concept,category,units,weight,share_percent";

impl Render for ConceptMap {
    fn to_csv(&self) -> String {
        let mut s = format!("{CONCEPT_MAP_HEADER}\n");
        for (c, share) in self.concepts.iter().zip(self.shares()) {
            let category = c.category.map(|c| c.as_str()).unwrap_or("");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.class,
                csv_field(&c.concept),
                category,
                c.units,
                c.weight,
                100.0 * share
            );
        }
        s
    }

    fn to_json(&self) -> String {
        json(self)
    }

    /// Top positive then top negative concepts, labeled with their share.
    fn to_svg(&self) -> String {
        let shares = self.shares();
        let bar = |name: &String, color| {
            let i = self.concepts.iter().position(|c| &c.concept == name).expect("ranked concept exists");
            Bar {
                value: self.concepts[i].weight,
                color,
                label: Some(format!("{name} ({:.1}%)", 100.0 * shares[i])),
            }
        };
        let mut bars: Vec<Bar> = self.top_positive.iter().map(|n| bar(n, "#2ca02c")).collect();
        bars.extend(self.top_negative.iter().map(|n| bar(n, "#d62728")));
        let legend = vec![("positive (+)".to_string(), "#2ca02c"), ("negative (-)".to_string(), "#d62728")];
        bar_chart(&format!("Top {} concepts for class {}", self.top_k, self.class_name), "summed weight", &bars, &legend)
    }
}

pub const VIEW_MEANS_HEADER: &str = "class,view,mean_weight";

impl ViewMeans {
    pub fn from_csv(text: &str, class_names: Option<&[String]>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            class: usize,
            view: usize,
            mean_weight: f64,
        }
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut class = None;
        let mut views = Vec::new();
        for row in rdr.deserialize() {
            let r: Row = row?;
            if *class.get_or_insert(r.class) != r.class {
                return Err(Error::Validation("view means mix classes".into()));
            }
            views.push(ViewMean { view: r.view, mean_weight: r.mean_weight });
        }
        let class = class.ok_or_else(|| Error::Validation("view means have no rows".into()))?;
        Ok(ViewMeans { class, class_name: class_name(class_names, class), views })
    }
}

impl Render for ViewMeans {
    fn to_csv(&self) -> String {
        let mut s = format!("{VIEW_MEANS_HEADER}\n");
        for v in &self.views {
            let _ = writeln!(s, "{},{},{}", self.class, v.view, v.mean_weight);
        }
        s
    }

    fn to_json(&self) -> String {
        json(self)
    }

    fn to_svg(&self) -> String {
        let bars: Vec<Bar> = self
            .views
            .iter()
            .map(|v| Bar { value: v.mean_weight, color: LAYER_COLORS[0], label: Some(format!("view {}", v.view)) })
            .collect();
        bar_chart(&format!("Mean head weight per view, class {}", self.class_name), "mean weight", &bars, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchSpec;
    use crate::explain::{concept_map, view_mean, weight_report, ConceptLabelTable};
    use crate::neuroview::{NeuroViewConfig, NeuroViewModel};
    use crate::tensor::Tensor;

    fn trained_like(views: usize) -> NeuroViewModel<f32> {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let mut m = NeuroViewModel::new(spec, NeuroViewConfig { views, ..Default::default() }, 2).unwrap();
        m.head_weight = Tensor::from_fn(m.head_weight.shape(), |i| ((i as f32) * 0.37).sin() * 1e-3);
        m
    }

    #[test]
    fn weight_report_csv_round_trip() {
        let names: Vec<String> = (0..10).map(|i| format!("digit{i}")).collect();
        let r = weight_report(&trained_like(2), 4, Some(&names)).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("class,layer,view,channel,weight\n"));
        assert_eq!(ClassWeightReport::from_csv(&csv, Some(&names)).unwrap(), r);
        assert_eq!(ClassWeightReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn svgs_parse_as_xml() {
        let m = trained_like(3);
        let names = vec!["a<b>&\"c\"".to_string(); 10];
        let r = weight_report(&m, 0, Some(&names)).unwrap();
        let cm = concept_map(&m, &ConceptLabelTable::new(), 0, 5, Some(&names)).unwrap();
        let vm = view_mean(&m, 0, Some(&names)).unwrap();
        for svg in [r.to_svg(), cm.to_svg(), vm.to_svg()] {
            let doc = roxmltree::Document::parse(&svg).unwrap();
            assert_eq!(doc.root_element().tag_name().name(), "svg");
        }
    }

    #[test]
    fn concept_map_json_reloads_and_reranks() {
        let m = trained_like(1);
        let text = "layer,channel,concept,category\n0,0,red,color\n0,1,stripes,texture\n2,3,wheel,part\n";
        let labels = ConceptLabelTable::from_reader(text.as_bytes()).unwrap();
        let cm = concept_map(&m, &labels, 1, 2, None).unwrap();
        let mut back = ConceptMap::from_json(&cm.to_json()).unwrap();
        assert_eq!(back, cm);
        back.top_positive.clear();
        back.top_negative.reverse();
        back.rank(2);
        assert_eq!(back, cm);
    }

    #[test]
    fn view_means_csv_round_trip() {
        let vm = view_mean(&trained_like(4), 7, None).unwrap();
        assert_eq!(ViewMeans::from_csv(&vm.to_csv(), None).unwrap(), vm);
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!("png".parse::<Format>().is_err());
        assert_eq!("svg".parse::<Format>().unwrap(), Format::Svg);
    }
}
