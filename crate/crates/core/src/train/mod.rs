//! Datasets, the SGD training loop and evaluation metrics.

mod baseline;
pub mod colored;
pub mod data;

pub use baseline::BaselineModel;
pub use colored::{make_colored_mnist, ColoredDataset, DEFAULT_PALETTE};
pub use data::{load_pair, load_split, DataFormat, Dataset, Split};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_rows, split_views, Classifier};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fractions of the run after which the learning rate is multiplied by
    /// `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.lr_decay <= 0.0 {
            return bad("weight decay must be non-negative and lr decay positive");
        }
        Ok(())
    }

    /// Step-decayed learning rate for a 0-based epoch. A milestone `f` takes
    /// effect from epoch `ceil(f * epochs)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&f| epoch >= (f * self.epochs as f64).ceil() as usize)
            .count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

/// One JSON-lines record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation split was given.
    pub val_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Loss of the very first mini-batch, before any update.
    pub initial_loss: f64,
}

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + (g + wd * p)`, `p -= lr * v`.
struct Sgd<T> {
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    fn new(params: &[&Tensor<T>]) -> Self {
        Sgd { velocity: params.iter().map(|p| vec![T::zero(); p.numel()]).collect() }
    }

    fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Option<Tensor<T>>], lr: f64, momentum: f64, wd: f64) {
        let (lr, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(wd));
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            for ((w, &gw), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vel = mu * *vel + gw + wd * *w;
                *w -= lr * *vel;
            }
        }
    }
}

fn view_nodes<T: Scalar>(tape: &mut Tape<T>, batch: &Tensor<T>, views: usize) -> Result<Vec<crate::tensor::NodeId>> {
    let parts = if views == 1 { vec![batch.clone()] } else { split_views(batch, views)? };
    Ok(parts.into_iter().map(|x| tape.constant(x)).collect())
}

fn check_compatible<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, data: &Dataset) -> Result<()> {
    if data.num_classes() > model.num_classes() {
        return Err(Error::Validation(format!(
            "dataset has {} classes but the model predicts {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let (_, c, h, w) = data.images.dims4()?;
    let [mc, mh, mw] = model.spec().input_shape;
    if [c, h, w] != [mc * model.views(), mh, mw] {
        return Err(Error::Dimension(format!(
            "dataset samples are {c}x{h}x{w}, model expects {} view(s) of {mc}x{mh}x{mw}",
            model.views()
        )));
    }
    Ok(())
}

/// Trains every parameter of `model` jointly on softmax cross-entropy.
///
/// Each epoch visits the training set in a Fisher-Yates order drawn from
/// ChaCha8 seeded with `cfg.seed` on stream `epoch + 1`. `on_epoch` sees
/// the metrics and model after each epoch (e.g. to write checkpoints).
pub fn train<T, M, F>(
    model: &mut M,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    T: Scalar,
    M: Classifier<T>,
    F: FnMut(&EpochMetrics, &M) -> Result<()>,
{
    cfg.validate()?;
    check_compatible(model, train_data)?;
    if let Some(v) = val_data {
        check_compatible(model, v)?;
    }
    let mut sgd = Sgd::new(&model.params());
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut initial_loss = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (step, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (images, labels) = train_data.batch::<T>(rows)?;
            let mut tape = Tape::new();
            let params: Vec<_> = model.params().into_iter().map(|p| tape.param(p.clone())).collect();
            let inputs = view_nodes(&mut tape, &images, model.views())?;
            let logits = model.logits_on_tape(&mut tape, &params, &inputs)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let loss_value = tape.value(loss).item().to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            initial_loss.get_or_insert(loss_value);
            tape.backward(loss)?;
            let grads: Vec<_> = params.iter().map(|&p| tape.take_grad(p)).collect();
            sgd.step(model.params_mut(), &grads, lr, cfg.momentum, cfg.weight_decay);
            loss_sum += loss_value * rows.len() as f64;
            seen += rows.len();
        }

        let val_acc = match val_data {
            Some(v) => Some(evaluate(model, v)?.accuracy),
            None => None,
        };
        let metrics = EpochMetrics { epoch, train_loss: loss_sum / seen.max(1) as f64, val_acc, lr };
        on_epoch(&metrics, model)?;
        epochs.push(metrics);
    }
    Ok(TrainReport { epochs, initial_loss: initial_loss.unwrap_or(f64::NAN) })
}

/// Mean cross-entropy of `model` over a whole dataset.
pub fn mean_loss<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    check_compatible(model, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_BATCH) {
        let (images, labels) = data.batch::<T>(chunk)?;
        let mut tape = Tape::new();
        let params: Vec<_> = model.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let inputs = view_nodes(&mut tape, &images, model.views())?;
        let logits = model.logits_on_tape(&mut tape, &params, &inputs)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        total += tape.value(loss).item().to_f64_lossy() * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Fraction correct per true class; 0 for classes with no samples.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub class_counts: Vec<usize>,
}

/// Predicted class per sample.
pub fn predict_all<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<usize>> {
    check_compatible(model, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in rows.chunks(EVAL_BATCH) {
        let (images, _) = data.batch::<T>(chunk)?;
        let inputs = if model.views() == 1 { vec![images] } else { split_views(&images, model.views())? };
        out.extend(argmax_rows(&model.logits(&inputs)?));
    }
    Ok(out)
}

pub fn evaluate<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, data: &Dataset) -> Result<EvalReport> {
    let preds = predict_all(model, data)?;
    Ok(report_from_predictions(&preds, &data.labels, model.num_classes()))
}

pub fn report_from_predictions(preds: &[usize], labels: &[usize], classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let class_counts: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let per_class_accuracy = (0..classes)
        .map(|k| if class_counts[k] == 0 { 0.0 } else { confusion[k][k] as f64 / class_counts[k] as f64 })
        .collect();
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    EvalReport {
        accuracy: correct as f64 / labels.len().max(1) as f64,
        per_class_accuracy,
        confusion,
        class_counts,
    }
}
