use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Collapse of an `H x W` plane to one value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMode {
    Max,
    Mean,
}

impl std::str::FromStr for ReduceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ReduceMode::Max),
            "mean" => Ok(ReduceMode::Mean),
            other => Err(Error::Config(format!("unknown reduction `{other}` (expected max|mean)"))),
        }
    }
}

impl std::fmt::Display for ReduceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReduceMode::Max => "max",
            ReduceMode::Mean => "mean",
        })
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId, geom: ConvGeom, cols: Option<Vec<T>> },
    Relu(NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, T),
    MaxPool { input: NodeId, argmax: Vec<usize> },
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    Concat { inputs: Vec<NodeId>, widths: Vec<usize> },
    ReduceMax { input: NodeId, argmax: Vec<usize> },
    ReduceMean { input: NodeId, plane: usize },
    Reshape(NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so every op's inputs precede it.
/// A tape supports exactly one [`backward`](Tape::backward); recording or
/// differentiating afterwards is an error.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf; it receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    /// Registers a detached leaf; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward's loss w.r.t. `id`, if it was tracked
    /// and reachable.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.nodes[id.0].grad.take()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::Tape("tape already consumed by backward(); record a new tape".into()))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `input: [B, Cin, H, W]`, `kernel: [Cout, Cin, kh, kw]`, `bias: [Cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        self.check_open()?;
        let (batch, in_c, in_h, in_w) = self.value(input).dims4()?;
        let (out_c, k_in, kh, kw) = self.value(kernel).dims4()?;
        if k_in != in_c {
            return Err(dim_err!("conv2d: input has {in_c} channels but kernel expects {k_in}"));
        }
        if self.value(bias).shape() != [out_c] {
            return Err(dim_err!(
                "conv2d: bias shape {:?} does not match {out_c} output channels",
                self.value(bias).shape()
            ));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d: stride must be at least 1"));
        }
        let (Some(out_h), Some(out_w)) = (
            kernels::conv_out_extent(in_h, kh, stride, pad),
            kernels::conv_out_extent(in_w, kw, stride, pad),
        ) else {
            return Err(dim_err!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
                in_h + 2 * pad,
                in_w + 2 * pad
            ));
        };
        let geom =
            ConvGeom { batch, in_c, in_h, in_w, out_c, kh, kw, stride, pad, out_h, out_w };
        let keep_cols = self.requires_grad(kernel);
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            keep_cols,
        );
        let value = Tensor::new(vec![batch, out_c, out_h, out_w], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom, cols }, &[input, kernel, bias]))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let value = self.value(x).map(|v| v.max(T::zero()));
        Ok(self.push(value, Op::Relu(x), &[x]))
    }

    /// Logistic function; outputs lie strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let value = self.value(x).map(kernels::sigmoid);
        Ok(self.push(value, Op::Sigmoid(x), &[x]))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        self.check_open()?;
        let value = self.value(x).map(|v| v * factor);
        Ok(self.push(value, Op::Scale(x, factor), &[x]))
    }

    /// Unpadded max pooling over `kernel x kernel` windows.
    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        self.check_open()?;
        let dims = self.value(x).dims4()?;
        let (b, c, h, w) = dims;
        if stride == 0 {
            return Err(dim_err!("maxpool2d: stride must be at least 1"));
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv_out_extent(h, kernel, stride, 0),
            kernels::conv_out_extent(w, kernel, stride, 0),
        ) else {
            return Err(dim_err!("maxpool2d: window {kernel} exceeds input {h}x{w}"));
        };
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), dims, kernel, stride, (oh, ow));
        let value = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool { input: x, argmax }, &[x]))
    }

    /// `x: [B, N]`, `weight: [M, N]`, `bias: [M]` → `x Wᵀ + b`.
    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let (b, n) = self.value(x).dims2()?;
        let (m, wn) = self.value(weight).dims2()?;
        if wn != n {
            return Err(dim_err!("linear: input width {n} does not match weight width {wn}"));
        }
        if self.value(bias).shape() != [m] {
            return Err(dim_err!("linear: bias shape {:?} does not match {m} outputs", self.value(bias).shape()));
        }
        let bias_v = self.value(bias).data();
        let mut out = Vec::with_capacity(b * m);
        for _ in 0..b {
            out.extend_from_slice(bias_v);
        }
        T::gemm(b, n, m, T::one(), self.value(x).data(), false, self.value(weight).data(), true, T::one(), &mut out);
        let value = Tensor::new(vec![b, m], out)?;
        Ok(self.push(value, Op::Linear { input: x, weight, bias }, &[x, weight, bias]))
    }

    /// Joins `[B, ...]` tensors along the feature axis into `[B, Σ]`;
    /// trailing axes of each input are flattened.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.check_open()?;
        let first = xs.first().ok_or_else(|| dim_err!("concat: no inputs"))?;
        let batch = *self.value(*first).shape().first().ok_or_else(|| dim_err!("concat: rank-0 input"))?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let t = self.value(x);
            if t.rank() == 0 || t.shape()[0] != batch {
                return Err(dim_err!("concat: batch extent mismatch ({:?} vs leading {batch})", t.shape()));
            }
            widths.push(t.numel() / batch);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[b * w..(b + 1) * w]);
            }
        }
        let value = Tensor::new(vec![batch, total], out)?;
        Ok(self.push(value, Op::Concat { inputs: xs.to_vec(), widths }, xs))
    }

    /// `[B, C, H, W]` → `[B, C]` by spatial max (first-index ties) or mean.
    pub fn reduce_spatial(&mut self, x: NodeId, mode: ReduceMode) -> Result<NodeId> {
        self.check_open()?;
        let (b, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        if plane == 0 {
            return Err(dim_err!("reduce_spatial: empty spatial extent {h}x{w}"));
        }
        let data = self.value(x).data();
        let (out, op) = match mode {
            ReduceMode::Max => {
                let (out, argmax) = kernels::spatial_max(data, b * c, plane);
                (out, Op::ReduceMax { input: x, argmax })
            }
            ReduceMode::Mean => (kernels::spatial_mean(data, b * c, plane), Op::ReduceMean { input: x, plane }),
        };
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(value, op, &[x]))
    }

    /// `[B, ...]` → `[B, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let t = self.value(x);
        let b = *t.shape().first().ok_or_else(|| dim_err!("flatten: rank-0 input"))?;
        let rest = t.numel().checked_div(b).unwrap_or(0);
        let value = t.clone().reshape(&[b, rest])?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err!("mul: shapes {:?} and {:?} differ", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let s = self.value(x).data().iter().copied().sum::<T>();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check_open()?;
        let (b, k) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(dim_err!("softmax_cross_entropy: {} labels for batch of {b}", labels.len()));
        }
        if b == 0 {
            return Err(dim_err!("softmax_cross_entropy: empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * k);
        let mut total = T::zero();
        for (row, &label) in data.chunks(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_denom = denom.ln();
            total += log_denom - (row[label] - max);
            probs.extend(row.iter().map(|&z| (z - max).exp() / denom));
        }
        let loss = total / T::from_usize(b).expect("batch size fits the scalar type");
        let op = Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Reverse pass from a scalar `loss`. Every tracked node reachable from
    /// the loss ends up with `grad == ∂loss/∂node`; detached leaves get none.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check_open()?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Tape(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = Some(Tensor::new(self.nodes[i].value.shape().to_vec(), g)?);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let tracked = |id: NodeId| nodes[id.0].requires_grad;
        let mut accumulate = |id: NodeId, f: &mut dyn FnMut(&mut [T])| {
            if !tracked(id) {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![T::zero(); nodes[id.0].value.numel()]);
            f(slot);
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom, cols } => {
                let need = [tracked(*input), tracked(*kernel), tracked(*bias)];
                let d = kernels::conv2d_backward(
                    geom,
                    g,
                    nodes[input.0].value.data(),
                    nodes[kernel.0].value.data(),
                    cols.as_deref(),
                    need,
                );
                for (id, part) in [(*input, d.input), (*kernel, d.kernel), (*bias, d.bias)] {
                    if let Some(part) = part {
                        accumulate(id, &mut |s| add_into(s, &part));
                    }
                }
            }
            Op::Relu(x) => {
                let xs = nodes[x.0].value.data();
                accumulate(*x, &mut |s| {
                    for ((d, &gv), &xv) in s.iter_mut().zip(g).zip(xs) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let ys = nodes[i].value.data();
                accumulate(*x, &mut |s| {
                    for ((d, &gv), &y) in s.iter_mut().zip(g).zip(ys) {
                        *d += gv * y * (T::one() - y);
                    }
                });
            }
            Op::Scale(x, factor) => {
                accumulate(*x, &mut |s| {
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d += gv * *factor;
                    }
                });
            }
            Op::MaxPool { input, argmax } | Op::ReduceMax { input, argmax } => {
                accumulate(*input, &mut |s| {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        s[src] += gv;
                    }
                });
            }
            Op::ReduceMean { input, plane } => {
                let denom = T::from_usize(*plane).expect("plane size fits the scalar type");
                accumulate(*input, &mut |s| {
                    for (chunk, &gv) in s.chunks_mut(*plane).zip(g) {
                        let share = gv / denom;
                        chunk.iter_mut().for_each(|d| *d += share);
                    }
                });
            }
            Op::Linear { input, weight, bias } => {
                let x = &nodes[input.0].value;
                let w = &nodes[weight.0].value;
                let (b, n) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[0];
                accumulate(*input, &mut |s| {
                    T::gemm(b, m, n, T::one(), g, false, w.data(), false, T::one(), s);
                });
                accumulate(*weight, &mut |s| {
                    T::gemm(m, b, n, T::one(), g, true, x.data(), false, T::one(), s);
                });
                accumulate(*bias, &mut |s| {
                    for row in g.chunks(m) {
                        add_into(s, row);
                    }
                });
            }
            Op::Concat { inputs, widths } => {
                let total: usize = widths.iter().sum();
                let batch = g.len().checked_div(total).unwrap_or(0);
                let mut offset = 0;
                for (&x, &w) in inputs.iter().zip(widths) {
                    accumulate(x, &mut |s| {
                        for b in 0..batch {
                            add_into(&mut s[b * w..(b + 1) * w], &g[b * total + offset..b * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(x) => accumulate(*x, &mut |s| add_into(s, g)),
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                accumulate(*a, &mut |s| {
                    for ((d, &gv), &y) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                accumulate(*b, &mut |s| {
                    for ((d, &gv), &y) in s.iter_mut().zip(g).zip(av) {
                        *d += gv * y;
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                accumulate(*x, &mut |s| s.iter_mut().for_each(|d| *d += gv));
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = g[0] / T::from_usize(labels.len()).expect("batch size fits the scalar type");
                accumulate(*logits, &mut |s| {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..k {
                            let target = if c == label { T::one() } else { T::zero() };
                            s[r * k + c] += (probs[r * k + c] - target) * scale;
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_to_nine() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0f64));
        let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).item(), 9.0);
    }

    #[test]
    fn zero_kernel_yields_bias_map() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4, 4], |i| i as f64 * 0.1));
        let k = tape.constant(Tensor::zeros(&[2, 3, 3, 3]));
        let b = tape.constant(t(&[2], &[0.5, -1.25]));
        let y = tape.conv2d(x, k, b, 1, 1).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[2, 2, 4, 4]);
        for (i, &val) in v.data().iter().enumerate() {
            let oc = (i / 16) % 2;
            assert_eq!(val, if oc == 0 { 0.5 } else { -1.25 });
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_oversized_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2, 3, 3]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 0), Err(Error::Dimension(_))));
        let k5 = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(matches!(tape.conv2d(x, k5, b, 1, 0), Err(Error::Dimension(_))));
        assert!(tape.conv2d(x, k5, b, 1, 1).is_ok());
    }

    #[test]
    fn sigmoid_derivative_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0f64));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn reduce_spatial_max_and_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mean = tape.reduce_spatial(x, ReduceMode::Mean).unwrap();
        let max = tape.reduce_spatial(x, ReduceMode::Max).unwrap();
        assert_eq!(tape.value(mean).data(), &[2.5]);
        assert_eq!(tape.value(max).data(), &[4.0]);
        let empty = tape.constant(Tensor::zeros(&[1, 1, 0, 2]));
        assert!(tape.reduce_spatial(empty, ReduceMode::Mean).is_err());
    }

    #[test]
    fn max_gradient_goes_to_first_tied_element() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1, 2, 2], &[2.0, 5.0, 5.0, 1.0]));
        let r = tape.reduce_spatial(x, ReduceMode::Max).unwrap();
        let p = tape.maxpool2d(x, 2, 2).unwrap();
        let both = tape.concat(&[r, p]).unwrap();
        let s = tape.sum(both).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros(&[3, 10]));
        let l = tape.softmax_cross_entropy(z, &[0, 4, 9]).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[1, 2], &[1000.0, 0.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        let v = tape.value(l).item();
        assert!(v.is_finite() && v.abs() < 1e-12);
        let z32 = {
            let mut tape32 = Tape::<f32>::new();
            let z = tape32.constant(Tensor::new(vec![1, 2], vec![1000.0f32, 0.0]).unwrap());
            let l = tape32.softmax_cross_entropy(z, &[0]).unwrap();
            tape32.value(l).item()
        };
        assert!(z32.is_finite() && z32.abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros(&[1, 3]));
        assert!(matches!(tape.softmax_cross_entropy(z, &[3]), Err(Error::Index(_))));
    }

    #[test]
    fn linear_sum_gradient_is_broadcast_input() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, -2.0, 0.5]));
        let w = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let b = tape.param(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, b).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 1.0]);
        assert!(tape.grad(x).is_none(), "detached input must not receive a gradient");
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::<f64>::zeros(&[2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Tape(_))));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Tape(_))));
        assert!(matches!(tape.relu(x), Err(Error::Tape(_))));
    }

    #[test]
    fn shared_parameter_accumulates_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let a = tape.mul(w, w).unwrap();
        let s = tape.sum(a).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }
}
