//! Declarative backbone descriptions and the unit enumeration derived from
//! them.
//!
//! A *unit* is one output channel of one convolution. Every convolution is
//! implicitly followed by a ReLU; its input (the pre-activation) is what the
//! code extractor taps.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv_out_extent, NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, pad: usize },
    Maxpool { kernel: usize, stride: usize },
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv { out_channels, kernel: 3, stride: 1, pad: 1 }
    }

    pub fn pool2x2() -> Self {
        LayerSpec::Maxpool { kernel: 2, stride: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// `(C, H, W)` of a single view.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

/// Units contributed by one convolution, in concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerUnits {
    /// Position of the convolution in [`ArchSpec::layers`].
    pub layer: usize,
    pub channels: usize,
    /// First unit index of this layer within one view's block.
    pub offset: usize,
}

pub const PRESETS: &[&str] = &["vgg-mini", "vgg11"];

impl ArchSpec {
    /// Named backbone with its default input shape and class count.
    pub fn preset(name: &str) -> Result<Self> {
        let (input_shape, layers) = match name {
            "vgg-mini" => (
                [1, 28, 28],
                vec![
                    LayerSpec::conv3x3(16),
                    LayerSpec::pool2x2(),
                    LayerSpec::conv3x3(32),
                    LayerSpec::pool2x2(),
                    LayerSpec::conv3x3(64),
                    LayerSpec::conv3x3(64),
                    LayerSpec::pool2x2(),
                ],
            ),
            "vgg11" => {
                let mut layers = Vec::new();
                for block in [&[64][..], &[128], &[256, 256], &[512, 512], &[512, 512]] {
                    layers.extend(block.iter().map(|&c| LayerSpec::conv3x3(c)));
                    layers.push(LayerSpec::pool2x2());
                }
                ([3, 224, 224], layers)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown architecture `{other}` (presets: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let spec = ArchSpec { name: name.to_string(), input_shape, layers, num_classes: 10 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_input_shape(mut self, input_shape: [usize; 3]) -> Result<Self> {
        self.input_shape = input_shape;
        self.validate()?;
        Ok(self)
    }

    pub fn with_classes(mut self, num_classes: usize) -> Result<Self> {
        self.num_classes = num_classes;
        self.validate()?;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ArchSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ArchSpec serializes")
    }

    /// Checks extents and that every layer still sees a non-empty map.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("arch `{}`: {msg}", self.name)));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.input_shape.contains(&0) {
            return bad(format!("input shape {:?} has an empty axis", self.input_shape));
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Conv { .. })) {
            return bad("at least one conv layer is required".into());
        }
        self.feature_shapes().map(|_| ())
    }

    /// `(C, H, W)` after each layer for the declared input shape.
    pub fn feature_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let [mut c, mut h, mut w] = self.input_shape;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (in_h, in_w) = (h, w);
            let fail = || Error::Config(format!("arch `{}`: layer {i} ({layer:?}) does not fit a {in_h}x{in_w} map", self.name));
            match *layer {
                LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(fail());
                    }
                    h = conv_out_extent(h, kernel, stride, pad).ok_or_else(fail)?;
                    w = conv_out_extent(w, kernel, stride, pad).ok_or_else(fail)?;
                    c = out_channels;
                }
                LayerSpec::Maxpool { kernel, stride } => {
                    h = conv_out_extent(h, kernel, stride, 0).ok_or_else(fail)?;
                    w = conv_out_extent(w, kernel, stride, 0).ok_or_else(fail)?;
                }
            }
            shapes.push([c, h, w]);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<[usize; 3]> {
        Ok(*self.feature_shapes()?.last().expect("validated spec has layers"))
    }

    /// Per-conv-layer unit blocks in layer order; they tile `[0, unit_count)`.
    pub fn unit_layout(&self) -> Vec<LayerUnits> {
        let mut offset = 0;
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(layer, spec)| match *spec {
                LayerSpec::Conv { out_channels, .. } => {
                    let block = LayerUnits { layer, channels: out_channels, offset };
                    offset += out_channels;
                    Some(block)
                }
                LayerSpec::Maxpool { .. } => None,
            })
            .collect()
    }

    /// Total tapped units of one view.
    pub fn unit_count(&self) -> usize {
        self.unit_layout().iter().map(|l| l.channels).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Convolution parameters of a backbone, one entry per conv layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T> {
    pub convs: Vec<ConvParams<T>>,
}

/// Tape handles for one registered backbone.
#[derive(Clone, Debug)]
pub struct BackboneNodes {
    pub convs: Vec<(NodeId, NodeId)>,
}

/// Result of running a backbone on the tape.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    /// Final feature map after the last layer.
    pub output: NodeId,
    /// ReLU inputs, one per conv layer, in layer order.
    pub pre_activations: Vec<NodeId>,
    /// ReLU outputs, one per conv layer, in layer order.
    pub post_activations: Vec<NodeId>,
}

impl<T: Scalar> Backbone<T> {
    /// He-style uniform init: kernels in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut in_c = spec.input_shape[0];
        let mut convs = Vec::new();
        for layer in &spec.layers {
            if let LayerSpec::Conv { out_channels, kernel, .. } = *layer {
                let fan_in = in_c * kernel * kernel;
                let bound = (6.0 / fan_in as f64).sqrt();
                convs.push(ConvParams {
                    kernel: Tensor::uniform(&[out_channels, in_c, kernel, kernel], -bound, bound, rng),
                    bias: Tensor::zeros(&[out_channels]),
                });
                in_c = out_channels;
            }
        }
        Ok(Backbone { convs })
    }

    /// All-zero kernels and biases.
    pub fn zeros(spec: &ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut in_c = spec.input_shape[0];
        let mut convs = Vec::new();
        for layer in &spec.layers {
            if let LayerSpec::Conv { out_channels, kernel, .. } = *layer {
                convs.push(ConvParams {
                    kernel: Tensor::zeros(&[out_channels, in_c, kernel, kernel]),
                    bias: Tensor::zeros(&[out_channels]),
                });
                in_c = out_channels;
            }
        }
        Ok(Backbone { convs })
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.kernel.numel() + c.bias.numel()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.convs.iter().flat_map(|c| [&c.kernel, &c.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.convs.iter_mut().flat_map(|c| [&mut c.kernel, &mut c.bias]).collect()
    }

    /// Registers the parameters as tracked (`trainable`) or detached leaves.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> BackboneNodes {
        let mut leaf = |t: &Tensor<T>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        BackboneNodes { convs: self.convs.iter().map(|c| (leaf(&c.kernel), leaf(&c.bias))).collect() }
    }
}

/// Runs the layer stack of `spec` on `input`, recording taps.
pub fn run_backbone<T: Scalar>(
    spec: &ArchSpec,
    tape: &mut Tape<T>,
    nodes: &BackboneNodes,
    input: NodeId,
) -> Result<BackboneOutput> {
    let (_, c, h, w) = tape.value(input).dims4()?;
    if [c, h, w] != spec.input_shape {
        return Err(Error::Dimension(format!(
            "arch `{}` expects inputs of shape {:?}, got {:?}",
            spec.name,
            spec.input_shape,
            [c, h, w]
        )));
    }
    let mut x = input;
    let mut convs = nodes.convs.iter();
    let mut pre_activations = Vec::new();
    let mut post_activations = Vec::new();
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv { stride, pad, .. } => {
                let &(kernel, bias) =
                    convs.next().ok_or_else(|| Error::Dimension("backbone has fewer conv parameters than the architecture declares".into()))?;
                let pre = tape.conv2d(x, kernel, bias, stride, pad)?;
                let post = tape.relu(pre)?;
                pre_activations.push(pre);
                post_activations.push(post);
                x = post;
            }
            LayerSpec::Maxpool { kernel, stride } => {
                x = tape.maxpool2d(x, kernel, stride)?;
            }
        }
    }
    Ok(BackboneOutput { output: x, pre_activations, post_activations })
}
