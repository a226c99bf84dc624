//! The NeuroView transform.
//!
//! Every conv unit's pre-activation map is squashed into a code
//! (`sigmoid(pre / temperature)` by default), reduced to one scalar per unit
//! by spatial max or mean, and all units of all layers of all views are
//! concatenated, first layer first and view 0 first. A single affine head
//! maps that code vector to class logits. The backbone's own classifier
//! does not exist; the head is the only path from units to classes.

pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{run_backbone, ArchSpec, Backbone, LayerUnits};
use crate::error::{dim_err, Error, Result};
use crate::model::Classifier;
use crate::scalar::Scalar;
use crate::tensor::{NodeId, ReduceMode, Tape, Tensor};

/// How a unit's pre-activation becomes its code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VqMode {
    /// Soft VQ: logistic of the pre-activation.
    Sigmoid,
    /// Raw pre-activation, no quantization.
    Identity,
}

impl std::str::FromStr for VqMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(VqMode::Sigmoid),
            "identity" => Ok(VqMode::Identity),
            other => Err(Error::Config(format!("unknown vq mode `{other}` (expected sigmoid|identity)"))),
        }
    }
}

impl std::fmt::Display for VqMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VqMode::Sigmoid => "sigmoid",
            VqMode::Identity => "identity",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuroViewConfig {
    pub vq: VqMode,
    pub temperature: f64,
    pub reduce: ReduceMode,
    pub views: usize,
    /// One backbone applied to every view (true) or one backbone per view.
    pub shared_view_weights: bool,
}

impl Default for NeuroViewConfig {
    fn default() -> Self {
        NeuroViewConfig {
            vq: VqMode::Sigmoid,
            temperature: 1.0,
            reduce: ReduceMode::Max,
            views: 1,
            shared_view_weights: true,
        }
    }
}

impl NeuroViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.views == 0 {
            return Err(Error::Config("views must be at least 1".into()));
        }
        Ok(())
    }
}

/// Address of one head column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitId {
    pub view: usize,
    /// Position of the conv layer in the arch's layer list.
    pub layer: usize,
    pub channel: usize,
}

/// One entry of a head row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitWeight {
    pub layer: usize,
    pub view: usize,
    pub channel: usize,
    pub weight: f64,
}

/// Reduced codes of a batch, `[B, U_total]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeVector<T> {
    pub values: Tensor<T>,
    pub layout: Vec<LayerUnits>,
    pub views: usize,
}

impl<T: Scalar> CodeVector<T> {
    pub fn width(&self) -> usize {
        self.values.shape().get(1).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuroViewModel<T> {
    pub spec: ArchSpec,
    pub config: NeuroViewConfig,
    pub seed: u64,
    /// One entry when views share weights, otherwise one per view.
    pub backbones: Vec<Backbone<T>>,
    /// `[num_classes, U_total]`
    pub head_weight: Tensor<T>,
    /// `[num_classes]`
    pub head_bias: Tensor<T>,
}

impl<T: Scalar> NeuroViewModel<T> {
    /// Seeded He-uniform backbone(s) and a zero head.
    pub fn new(spec: ArchSpec, config: NeuroViewConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let copies = if config.shared_view_weights { 1 } else { config.views };
        let backbones = (0..copies).map(|_| Backbone::init(&spec, &mut rng)).collect::<Result<Vec<_>>>()?;
        Self::from_parts(spec, config, seed, backbones)
    }

    fn from_parts(spec: ArchSpec, config: NeuroViewConfig, seed: u64, backbones: Vec<Backbone<T>>) -> Result<Self> {
        let width = config.views * spec.unit_count();
        let k = spec.num_classes;
        Ok(NeuroViewModel {
            head_weight: Tensor::zeros(&[k, width]),
            head_bias: Tensor::zeros(&[k]),
            spec,
            config,
            seed,
            backbones,
        })
    }

    /// Zero backbone and zero head; useful as a fixed point in tests.
    pub fn zeros(spec: ArchSpec, config: NeuroViewConfig) -> Result<Self> {
        config.validate()?;
        let copies = if config.shared_view_weights { 1 } else { config.views };
        let backbones = (0..copies).map(|_| Backbone::zeros(&spec)).collect::<Result<Vec<_>>>()?;
        Self::from_parts(spec, config, 0, backbones)
    }

    /// Units per view.
    pub fn units_per_view(&self) -> usize {
        self.spec.unit_count()
    }

    /// `views x unit_count`, the head width.
    pub fn total_units(&self) -> usize {
        self.config.views * self.units_per_view()
    }

    /// Every head column's unit, in concatenation order.
    pub fn units(&self) -> Vec<UnitId> {
        let layout = self.spec.unit_layout();
        (0..self.config.views)
            .flat_map(|view| {
                layout.iter().flat_map(move |block| {
                    (0..block.channels).map(move |channel| UnitId { view, layer: block.layer, channel })
                })
            })
            .collect()
    }

    fn backbone_for_view(&self, view: usize) -> usize {
        if self.config.shared_view_weights {
            0
        } else {
            view
        }
    }

    /// Records code extraction; returns the `[B, U_total]` code node.
    pub fn codes_on_tape(&self, tape: &mut Tape<T>, params: &[NodeId], inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != self.config.views {
            return Err(dim_err!("model expects {} views, got {}", self.config.views, inputs.len()));
        }
        let per_backbone = 2 * self.spec.unit_layout().len();
        let nodes: Vec<_> = self
            .backbones
            .iter()
            .enumerate()
            .map(|(i, _)| crate::arch::BackboneNodes {
                convs: params[i * per_backbone..(i + 1) * per_backbone].chunks(2).map(|p| (p[0], p[1])).collect(),
            })
            .collect();
        let inv_temp = T::from_f64_lossy(1.0 / self.config.temperature);
        let mut pieces = Vec::with_capacity(self.config.views * per_backbone / 2);
        for (view, &x) in inputs.iter().enumerate() {
            let out = run_backbone(&self.spec, tape, &nodes[self.backbone_for_view(view)], x)?;
            for pre in out.pre_activations {
                let code = match self.config.vq {
                    VqMode::Sigmoid => {
                        let scaled = if self.config.temperature == 1.0 { pre } else { tape.scale(pre, inv_temp)? };
                        tape.sigmoid(scaled)?
                    }
                    VqMode::Identity => pre,
                };
                pieces.push(tape.reduce_spatial(code, self.config.reduce)?);
            }
        }
        tape.concat(&pieces)
    }

    fn backbone_param_count(&self) -> usize {
        self.backbones.len() * 2 * self.spec.unit_layout().len()
    }

    /// Detached code extraction, one `[B, C, H, W]` tensor per view.
    pub fn extract_codes(&self, inputs: &[Tensor<T>]) -> Result<CodeVector<T>> {
        let mut tape = Tape::new();
        let params: Vec<_> = self.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let codes = self.codes_on_tape(&mut tape, &params, &xs)?;
        Ok(CodeVector {
            values: tape.value(codes).clone(),
            layout: self.spec.unit_layout(),
            views: self.config.views,
        })
    }

    /// `W · codes + b`.
    pub fn head_forward(&self, codes: &CodeVector<T>) -> Result<Tensor<T>> {
        if codes.width() != self.total_units() {
            return Err(dim_err!("code width {} does not match head width {}", codes.width(), self.total_units()));
        }
        let mut tape = Tape::new();
        let z = tape.constant(codes.values.clone());
        let w = tape.constant(self.head_weight.clone());
        let b = tape.constant(self.head_bias.clone());
        let y = tape.linear(z, w, b)?;
        Ok(tape.value(y).clone())
    }

    /// Head row `class` with each weight's unit address, in concatenation
    /// order.
    pub fn weight_row(&self, class: usize) -> Result<Vec<UnitWeight>> {
        let k = self.spec.num_classes;
        if class >= k {
            return Err(Error::Index(format!("class {class} out of range for {k} classes")));
        }
        let width = self.total_units();
        let row = &self.head_weight.data()[class * width..(class + 1) * width];
        Ok(self
            .units()
            .into_iter()
            .zip(row)
            .map(|(u, &w)| UnitWeight { layer: u.layer, view: u.view, channel: u.channel, weight: w.to_f64_lossy() })
            .collect())
    }
}

impl<T: Scalar> Classifier<T> for NeuroViewModel<T> {
    fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    fn views(&self) -> usize {
        self.config.views
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut ps: Vec<_> = self.backbones.iter().flat_map(|b| b.params()).collect();
        ps.push(&self.head_weight);
        ps.push(&self.head_bias);
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut ps: Vec<_> = self.backbones.iter_mut().flat_map(|b| b.params_mut()).collect();
        ps.push(&mut self.head_weight);
        ps.push(&mut self.head_bias);
        ps
    }

    fn param_names(&self) -> Vec<String> {
        let layout = self.spec.unit_layout();
        let mut names = Vec::new();
        for v in 0..self.backbones.len() {
            let prefix = if self.config.shared_view_weights { "backbone".to_string() } else { format!("view{v}") };
            for block in &layout {
                names.push(format!("{prefix}.layer{}.kernel", block.layer));
                names.push(format!("{prefix}.layer{}.bias", block.layer));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    fn logits_on_tape(&self, tape: &mut Tape<T>, params: &[NodeId], inputs: &[NodeId]) -> Result<NodeId> {
        let n = self.backbone_param_count();
        if params.len() != n + 2 {
            return Err(dim_err!("expected {} parameter nodes, got {}", n + 2, params.len()));
        }
        let codes = self.codes_on_tape(tape, &params[..n], inputs)?;
        tape.linear(codes, params[n], params[n + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;

    fn mini(views: usize, reduce: ReduceMode) -> NeuroViewModel<f64> {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let config = NeuroViewConfig { reduce, views, ..Default::default() };
        NeuroViewModel::new(spec, config, 11).unwrap()
    }

    #[test]
    fn zero_backbone_codes_are_one_half() {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let model = NeuroViewModel::<f64>::zeros(spec, NeuroViewConfig::default()).unwrap();
        let x = Tensor::from_fn(&[2, 1, 28, 28], |i| (i % 7) as f64);
        let codes = model.extract_codes(&[x]).unwrap();
        assert_eq!(codes.width(), 176);
        assert!(codes.values.data().iter().all(|&c| c == 0.5));
    }

    #[test]
    fn widths_follow_views_times_units() {
        assert_eq!(mini(1, ReduceMode::Mean).total_units(), 176);
        assert_eq!(mini(3, ReduceMode::Mean).total_units(), 528);
        let vgg11 = ArchSpec::preset("vgg11").unwrap();
        let cfg = NeuroViewConfig { views: 12, ..Default::default() };
        let m = NeuroViewModel::<f32>::zeros(vgg11, cfg).unwrap();
        assert_eq!(m.total_units(), 33024);
        assert_eq!(m.head_weight.shape(), &[10, 33024]);
    }

    #[test]
    fn view_count_mismatch_is_rejected() {
        let m = mini(3, ReduceMode::Max);
        let x = Tensor::zeros(&[1, 1, 28, 28]);
        assert!(matches!(m.extract_codes(&[x]), Err(Error::Dimension(_))));
    }

    #[test]
    fn head_with_identity_weight_returns_codes() {
        let spec = ArchSpec {
            name: "tiny".into(),
            input_shape: [1, 3, 3],
            layers: vec![crate::arch::LayerSpec::conv3x3(2), crate::arch::LayerSpec::conv3x3(1)],
            num_classes: 3,
        };
        let mut m = NeuroViewModel::<f64>::new(spec, NeuroViewConfig::default(), 2).unwrap();
        m.head_weight = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let x = Tensor::from_fn(&[2, 1, 3, 3], |i| (i as f64 * 0.3).sin());
        let codes = m.extract_codes(&[x]).unwrap();
        let logits = m.head_forward(&codes).unwrap();
        assert_eq!(logits.data(), codes.values.data());
    }

    #[test]
    fn bias_only_head_gives_constant_logits() {
        let mut m = mini(1, ReduceMode::Mean);
        m.head_bias = Tensor::from_fn(&[10], |i| i as f64 * 0.5 - 1.0);
        let x = Tensor::from_fn(&[3, 1, 28, 28], |i| ((i * 31) % 17) as f64 / 17.0);
        let logits = m.logits(&[x]).unwrap();
        for row in logits.data().chunks(10) {
            assert_eq!(row, m.head_bias.data());
        }
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn head_width_mismatch_is_rejected() {
        let m = mini(1, ReduceMode::Max);
        let codes = CodeVector { values: Tensor::zeros(&[1, 175]), layout: m.spec.unit_layout(), views: 1 };
        assert!(m.head_forward(&codes).is_err());
    }

    #[test]
    fn weight_row_round_trips_head_row() {
        let mut m = mini(2, ReduceMode::Max);
        let width = m.total_units();
        m.head_weight = Tensor::from_fn(&[10, width], |i| (i as f64 * 0.013).cos());
        let row = m.weight_row(4).unwrap();
        assert_eq!(row.len(), width);
        let flat: Vec<f64> = row.iter().map(|e| e.weight).collect();
        assert_eq!(&flat[..], &m.head_weight.data()[4 * width..5 * width]);
        assert_eq!((row[0].view, row[0].layer, row[0].channel), (0, 0, 0));
        assert_eq!((row[16].view, row[16].layer, row[16].channel), (0, 2, 0));
        assert_eq!((row[176].view, row[176].layer, row[176].channel), (1, 0, 0));
        assert!(matches!(m.weight_row(10), Err(Error::Index(_))));
    }

    #[test]
    fn one_by_one_maps_make_max_and_mean_agree() {
        let spec = ArchSpec {
            name: "pointwise".into(),
            input_shape: [2, 1, 1],
            layers: vec![
                crate::arch::LayerSpec::Conv { out_channels: 3, kernel: 1, stride: 1, pad: 0 },
                crate::arch::LayerSpec::Conv { out_channels: 2, kernel: 1, stride: 1, pad: 0 },
            ],
            num_classes: 2,
        };
        let x = Tensor::from_fn(&[4, 2, 1, 1], |i| i as f64 * 0.25 - 1.0);
        let a = NeuroViewModel::<f64>::new(spec.clone(), NeuroViewConfig { reduce: ReduceMode::Max, ..Default::default() }, 5)
            .unwrap();
        let b = NeuroViewModel::<f64>::new(spec, NeuroViewConfig { reduce: ReduceMode::Mean, ..Default::default() }, 5)
            .unwrap();
        assert_eq!(a.extract_codes(std::slice::from_ref(&x)).unwrap(), b.extract_codes(&[x]).unwrap());
    }

    #[test]
    fn unshared_views_get_distinct_backbones() {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let cfg = NeuroViewConfig { views: 2, shared_view_weights: false, ..Default::default() };
        let m = NeuroViewModel::<f32>::new(spec, cfg, 3).unwrap();
        assert_eq!(m.backbones.len(), 2);
        assert_ne!(m.backbones[0], m.backbones[1]);
        assert_eq!(m.params().len(), m.param_names().len());
        assert!(m.param_names()[0].starts_with("view0."));
    }
}
