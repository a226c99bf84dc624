//! The interface training, evaluation and checkpointing share across model
//! families.

use crate::arch::ArchSpec;
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape, Tensor};

pub trait Classifier<T: Scalar> {
    fn spec(&self) -> &ArchSpec;

    /// Number of input views per sample.
    fn views(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        self.spec().num_classes
    }

    /// Trainable tensors in a fixed order.
    fn params(&self) -> Vec<&Tensor<T>>;

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    /// Stable names, parallel to [`params`](Classifier::params).
    fn param_names(&self) -> Vec<String>;

    /// Records the forward pass. `params` are tape handles in
    /// [`params`](Classifier::params) order; `inputs` has one `[B, C, H, W]`
    /// node per view.
    fn logits_on_tape(&self, tape: &mut Tape<T>, params: &[NodeId], inputs: &[NodeId]) -> Result<NodeId>;

    /// Detached forward pass.
    fn logits(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params: Vec<_> = self.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let inputs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = self.logits_on_tape(&mut tape, &params, &inputs)?;
        Ok(tape.value(out).clone())
    }

    /// Class index per row of the detached logits.
    fn predict(&self, inputs: &[Tensor<T>]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(inputs)?))
    }
}

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let denom: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / denom));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Index of the largest entry per row; ties go to the lowest class index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape().get(1).copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Splits a channel-stacked `[B, V*C, H, W]` batch into `V` views of `C`
/// channels each.
pub fn split_views<T: Scalar>(batch: &Tensor<T>, views: usize) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = batch.dims4()?;
    if views == 0 || c % views != 0 {
        return Err(dim_err!("{c} channels cannot be split into {views} views"));
    }
    let per = c / views;
    (0..views).map(|v| batch.slice_channels(v * per, (v + 1) * per)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let p = softmax(&z).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(argmax_rows(&z), vec![2, 2]);
    }

    #[test]
    fn argmax_ties_pick_lowest_class() {
        let z = Tensor::new(vec![1, 3], vec![0.5f64, 0.5, 0.1]).unwrap();
        assert_eq!(argmax_rows(&z), vec![0]);
    }

    #[test]
    fn split_views_requires_divisible_channels() {
        let x = Tensor::<f32>::zeros(&[2, 6, 2, 2]);
        let v = split_views(&x, 3).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].shape(), &[2, 2, 2, 2]);
        assert!(split_views(&x, 4).is_err());
    }
}
