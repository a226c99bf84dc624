//! Naive reference implementations shared by the integration tests. Nothing
//! here goes through the tape or the GEMM kernels.

#![allow(dead_code)]

use neuroview::arch::{ArchSpec, LayerSpec};
use neuroview::neuroview::VqMode;
use neuroview::tensor::ReduceMode;
use neuroview::train::{Dataset, Split};
use neuroview::{NeuroViewModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One sample's feature map, `[C][H][W]` flattened.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

/// Direct six-loop convolution with zero padding.
pub fn naive_conv(x: &Map, kernel: &[f64], bias: &[f64], out_c: usize, k: usize, stride: usize, pad: usize) -> Map {
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut v = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let xx = (ox * stride + kx) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= x.h as isize || xx >= x.w as isize {
                                continue;
                            }
                            acc += kernel[((o * x.c + i) * k + ky) * k + kx] * x.at(i, y as usize, xx as usize);
                        }
                    }
                }
                v[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Map { c: out_c, h: oh, w: ow, v }
}

pub fn naive_maxpool(x: &Map, k: usize, stride: usize) -> Map {
    let oh = (x.h - k) / stride + 1;
    let ow = (x.w - k) / stride + 1;
    let mut v = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x.at(c, oy * stride + ky, ox * stride + kx));
                    }
                }
                v.push(m);
            }
        }
    }
    Map { c: x.c, h: oh, w: ow, v }
}

/// Logits of one sample (one map per view), computed by re-running the
/// backbone layer by layer, tapping each conv output before the ReLU,
/// mapping, reducing, concatenating and applying the head.
pub fn naive_logits(model: &NeuroViewModel<f64>, views: &[Map]) -> Vec<f64> {
    let cfg = &model.config;
    let mut codes = Vec::new();
    for (view, input) in views.iter().enumerate() {
        let backbone = &model.backbones[if cfg.shared_view_weights { 0 } else { view }];
        let mut x = input.clone();
        let mut conv_i = 0;
        for layer in &model.spec.layers {
            match *layer {
                LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                    let p = &backbone.convs[conv_i];
                    conv_i += 1;
                    let pre = naive_conv(&x, p.kernel.data(), p.bias.data(), out_channels, kernel, stride, pad);
                    let area = pre.h * pre.w;
                    for c in 0..pre.c {
                        let plane = &pre.v[c * area..(c + 1) * area];
                        let mapped: Vec<f64> = plane
                            .iter()
                            .map(|&z| match cfg.vq {
                                VqMode::Sigmoid => 1.0 / (1.0 + (-z / cfg.temperature).exp()),
                                VqMode::Identity => z,
                            })
                            .collect();
                        codes.push(match cfg.reduce {
                            ReduceMode::Max => mapped.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                            ReduceMode::Mean => mapped.iter().sum::<f64>() / area as f64,
                        });
                    }
                    x = Map { v: pre.v.iter().map(|&z| z.max(0.0)).collect(), ..pre };
                }
                LayerSpec::Maxpool { kernel, stride } => x = naive_maxpool(&x, kernel, stride),
            }
        }
    }
    let k = model.spec.num_classes;
    let u = codes.len();
    let w = model.head_weight.data();
    (0..k).map(|r| model.head_bias.data()[r] + (0..u).map(|j| w[r * u + j] * codes[j]).sum::<f64>()).collect()
}

/// Splits sample `b` of a `[B, C, H, W]` tensor into a [`Map`].
pub fn sample_map(t: &Tensor<f64>, b: usize) -> Map {
    let s = t.shape();
    let n = s[1] * s[2] * s[3];
    Map { c: s[1], h: s[2], w: s[3], v: t.data()[b * n..(b + 1) * n].to_vec() }
}

/// Two-pass log-softmax cross-entropy, averaged over rows.
pub fn naive_cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

pub fn random_head(model: &mut NeuroViewModel<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    model.head_weight = Tensor::uniform(model.head_weight.shape(), -scale, scale, rng);
    model.head_bias = Tensor::uniform(model.head_bias.shape(), -scale, scale, rng);
}

pub fn small_spec(channels: usize, classes: usize) -> ArchSpec {
    ArchSpec {
        name: "small".into(),
        input_shape: [channels, 8, 8],
        layers: vec![LayerSpec::conv3x3(4), LayerSpec::pool2x2(), LayerSpec::conv3x3(6), LayerSpec::pool2x2()],
        num_classes: classes,
    }
}

/// Class `k` lights up a horizontal band at row `k`, with noise.
pub fn banded(n: usize, classes: usize, size: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(n * size * size);
    for &l in &labels {
        for y in 0..size {
            for _ in 0..size {
                let band = if y * classes / size == l { 0.8 } else { 0.0 };
                data.push(band + rng.gen_range(0.0..0.2f32));
            }
        }
    }
    let images = Tensor::new(vec![n, 1, size, size], data).unwrap();
    Dataset::new(images, labels, (0..classes).map(|c| format!("c{c}")).collect(), split).unwrap()
}
