//! Central finite-difference checks for the tape's reverse pass.
//!
//! Numeric gradients come from re-running the forward builder on perturbed
//! copies of the inputs; they never touch the backward code.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{NodeId, ReduceMode, Tape, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

fn eval_scalar<F>(inputs: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    Ok(tape.value(out).item())
}

/// Largest relative error over every element of every input between the
/// tape gradient and a central difference with step `h`.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], build: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (slot, id) in ids.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[slot].shape());
        let analytic = tape.grad(*id).unwrap_or(&zeros).data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = probe[slot].data()[j];
            probe[slot].data_mut()[j] = orig + h;
            let up = eval_scalar(&probe, &build)?;
            probe[slot].data_mut()[j] = orig - h;
            let down = eval_scalar(&probe, &build)?;
            probe[slot].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl OpCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values in (-1, 1) pairwise separated by at least `1/n`, so that max
/// selections never flip under an `h`-sized perturbation.
fn separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let data = order
        .into_iter()
        .map(|rank| (rank as f64 + rng.gen_range(0.25..0.75)) / n as f64 * 2.0 - 1.0)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Uniform values kept at least 0.05 away from the ReLU kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces a non-scalar output to a scalar through a fixed random weighting.
fn weighted_sum(tape: &mut Tape<f64>, out: NodeId, weights: &Tensor<f64>) -> Result<NodeId> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

type Case = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>>);

fn make_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let b = rng.gen_range(1..=2);
    match op {
        "conv2d" => {
            let cin = rng.gen_range(1..=2);
            let cout = rng.gen_range(1..=3);
            let k = rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=1);
            let (h, w) = (rng.gen_range(k..=5), rng.gen_range(k..=5));
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            let r = uniform(&[b, cout, oh, ow], rng);
            let inputs = vec![uniform(&[b, cin, h, w], rng), uniform(&[cout, cin, k, k], rng), uniform(&[cout], rng)];
            (inputs, Box::new(move |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2], stride, pad)?;
                weighted_sum(t, y, &r)
            }))
        }
        "relu" => {
            let shape = [b, 2, 3, 3];
            let r = uniform(&shape, rng);
            (vec![off_kink(&shape, rng)], Box::new(move |t, ids| {
                let y = t.relu(ids[0])?;
                weighted_sum(t, y, &r)
            }))
        }
        "sigmoid" => {
            let shape = [b, 2, 3, 3];
            let r = uniform(&shape, rng);
            let x = Tensor::uniform(&shape, -4.0, 4.0, rng);
            (vec![x], Box::new(move |t, ids| {
                let y = t.sigmoid(ids[0])?;
                weighted_sum(t, y, &r)
            }))
        }
        "scale" => {
            let shape = [b, 5];
            let r = uniform(&shape, rng);
            let factor = rng.gen_range(0.2..3.0);
            (vec![uniform(&shape, rng)], Box::new(move |t, ids| {
                let y = t.scale(ids[0], factor)?;
                weighted_sum(t, y, &r)
            }))
        }
        "maxpool2d" => {
            let (k, stride) = if rng.gen_bool(0.5) { (2, 2) } else { (3, 1) };
            let (h, w) = (rng.gen_range(k..=6), rng.gen_range(k..=6));
            let r = uniform(&[b, 2, (h - k) / stride + 1, (w - k) / stride + 1], rng);
            (vec![separated(&[b, 2, h, w], rng)], Box::new(move |t, ids| {
                let y = t.maxpool2d(ids[0], k, stride)?;
                weighted_sum(t, y, &r)
            }))
        }
        "linear" => {
            let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=4));
            let r = uniform(&[b, m], rng);
            let inputs = vec![uniform(&[b, n], rng), uniform(&[m, n], rng), uniform(&[m], rng)];
            (inputs, Box::new(move |t, ids| {
                let y = t.linear(ids[0], ids[1], ids[2])?;
                weighted_sum(t, y, &r)
            }))
        }
        "concat" => {
            let widths = [rng.gen_range(1..=4), rng.gen_range(1..=4)];
            let r = uniform(&[b, widths[0] + 4 * widths[1]], rng);
            let inputs = vec![uniform(&[b, widths[0]], rng), uniform(&[b, widths[1], 2, 2], rng)];
            (inputs, Box::new(move |t, ids| {
                let y = t.concat(ids)?;
                weighted_sum(t, y, &r)
            }))
        }
        "reduce_max" | "reduce_mean" => {
            let mode = if op == "reduce_max" { ReduceMode::Max } else { ReduceMode::Mean };
            let c = rng.gen_range(1..=3);
            let shape = [b, c, rng.gen_range(1..=4), rng.gen_range(1..=4)];
            let r = uniform(&[b, c], rng);
            (vec![separated(&shape, rng)], Box::new(move |t, ids| {
                let y = t.reduce_spatial(ids[0], mode)?;
                weighted_sum(t, y, &r)
            }))
        }
        "flatten" => {
            let r = uniform(&[b, 12], rng);
            (vec![uniform(&[b, 3, 2, 2], rng)], Box::new(move |t, ids| {
                let y = t.flatten(ids[0])?;
                weighted_sum(t, y, &r)
            }))
        }
        "mul" => {
            let shape = [b, 4];
            (vec![uniform(&shape, rng), uniform(&shape, rng)], Box::new(|t, ids| {
                let y = t.mul(ids[0], ids[1])?;
                t.sum(y)
            }))
        }
        "sum" => (vec![uniform(&[b, 3, 2], rng)], Box::new(|t, ids| t.sum(ids[0]))),
        "softmax_cross_entropy" => {
            let k = rng.gen_range(2..=6);
            let labels: Vec<usize> = (0..b + 2).map(|_| rng.gen_range(0..k)).collect();
            let logits = Tensor::uniform(&[b + 2, k], -3.0, 3.0, rng);
            (vec![logits], Box::new(move |t, ids| t.softmax_cross_entropy(ids[0], &labels)))
        }
        other => unreachable!("no gradcheck case for {other}"),
    }
}

/// Every differentiable op on the tape.
pub const OPS: &[&str] = &[
    "conv2d",
    "relu",
    "sigmoid",
    "scale",
    "maxpool2d",
    "linear",
    "concat",
    "reduce_max",
    "reduce_mean",
    "flatten",
    "mul",
    "sum",
    "softmax_cross_entropy",
];

/// Runs `instances` random cases per op and reports the worst error of each.
pub fn run_suite(seed: u64, instances: usize, h: f64) -> Result<Vec<OpCheck>> {
    if instances == 0 {
        return Err(Error::Config("gradcheck needs at least one instance per op".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OPS.iter()
        .map(|&op| {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let (inputs, build) = make_case(op, &mut rng);
                worst = worst.max(max_relative_error(&inputs, build, h)?);
            }
            Ok(OpCheck { op, instances, max_rel_error: worst })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of x*x evaluated with one side detached is half the truth.
        let x = Tensor::new(vec![1], vec![0.7]).unwrap();
        let err = max_relative_error(
            &[x],
            |t, ids| {
                let c = t.constant(t.value(ids[0]).clone());
                let y = t.mul(ids[0], c)?;
                t.sum(y)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err > 0.4, "expected a large mismatch, got {err}");
    }

    #[test]
    fn separated_values_keep_their_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = separated(&[40], &mut rng);
        let mut v = t.data().to_vec();
        v.sort_by(f64::total_cmp);
        assert!(v.windows(2).all(|w| w[1] - w[0] >= 1.0 / 40.0 - 1e-12));
    }
}
