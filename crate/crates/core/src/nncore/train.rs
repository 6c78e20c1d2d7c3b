use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{sigmoid, softmax_in_place, LayerKind};
use super::model::Model;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy on logits (a trailing Softmax layer is bypassed).
    CrossEntropy,
    /// Sigmoid cross-entropy on logits (a trailing Sigmoid layer is bypassed).
    BinaryCrossEntropy,
    Mse,
}

impl Loss {
    pub fn metric(self) -> Metric {
        match self {
            Loss::Mse => Metric::Mse,
            _ => Metric::Accuracy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mse,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Accuracy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience_epochs: usize,
    /// Non-improving epochs between learning-rate halvings.
    pub lr_halving_period: usize,
    pub min_learning_rate: f64,
    pub batch_size: usize,
    pub loss: Loss,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            patience_epochs: 10,
            lr_halving_period: 5,
            min_learning_rate: 1e-7,
            batch_size: 64,
            loss: Loss::CrossEntropy,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > self.min_learning_rate) {
            return Err(Error::config(format!(
                "learning rate {} must exceed the minimum {}",
                self.learning_rate, self.min_learning_rate
            )));
        }
        if self.patience_epochs == 0 || self.batch_size == 0 || self.lr_halving_period == 0 {
            return Err(Error::config(
                "patience, batch size and halving period must be positive",
            ));
        }
        Ok(())
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch whose weights were kept, when a best epoch was tracked.
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

impl TrainHistory {
    pub fn last_metric(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_metric)
    }
}

/// Callbacks a training loop exposes to structured pruning.
pub trait TrainHook<T: Scalar> {
    /// Runs before the optimizer step `step` (0-based, counted across epochs).
    fn on_step(&mut self, step: usize, model: &mut Model<T>) -> Result<()>;

    /// Element-wise update permission for the weight tensor of `layer`.
    fn update_mask(&self, layer: usize) -> Option<&[bool]>;

    /// Whether patience-based early stopping and best-epoch tracking are active.
    fn early_stopping_armed(&self) -> bool {
        true
    }

    /// Runs once after the last epoch, before best weights are restored.
    fn on_train_end(&mut self, _steps: usize, _model: &mut Model<T>) -> Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct TrainOptions<'a, T: Scalar> {
    /// Layers with a smaller index receive no updates.
    pub frozen_prefix: Option<usize>,
    pub hook: Option<&'a mut dyn TrainHook<T>>,
}

impl<'a, T: Scalar> TrainOptions<'a, T> {
    pub fn frozen(prefix: usize) -> Self {
        TrainOptions {
            frozen_prefix: Some(prefix),
            hook: None,
        }
    }

    pub fn with_hook(hook: &'a mut dyn TrainHook<T>) -> Self {
        TrainOptions {
            frozen_prefix: None,
            hook: Some(hook),
        }
    }
}

/// Number of leading layers the loss bypasses (a trailing Softmax/Sigmoid head).
fn loss_upto<T: Scalar>(model: &Model<T>, loss: Loss) -> usize {
    let n = model.len();
    match (loss, model.layers().last().map(|l| &l.kind)) {
        (Loss::CrossEntropy, Some(LayerKind::Softmax)) => n - 1,
        (Loss::BinaryCrossEntropy, Some(LayerKind::Sigmoid)) => n - 1,
        _ => n,
    }
}

/// Mean loss over the batch and its gradient w.r.t. `out`.
fn loss_and_grad<T: Scalar>(loss: Loss, out: &Tensor<T>, y: &Tensor<T>) -> (f64, Tensor<T>) {
    let n = out.rows();
    let k = out.row_len();
    let mut grad = vec![T::zero(); out.len()];
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    match loss {
        Loss::CrossEntropy => {
            for ((o, t), g) in out
                .data()
                .chunks(k)
                .zip(y.data().chunks(k))
                .zip(grad.chunks_mut(k))
            {
                let mut p = o.to_vec();
                softmax_in_place(&mut p);
                for ((&pv, &tv), gv) in p.iter().zip(t).zip(g.iter_mut()) {
                    if tv > T::zero() {
                        total -= tv.as_f64() * pv.as_f64().max(1e-300).ln();
                    }
                    *gv = (pv - tv) * T::of(inv_n);
                }
            }
        }
        Loss::BinaryCrossEntropy => {
            for ((&z, &t), g) in out.data().iter().zip(y.data()).zip(grad.iter_mut()) {
                let (zf, tf) = (z.as_f64(), t.as_f64());
                // log(1 + e^z) - t z, stable form
                total += zf.max(0.0) - zf * tf + (-zf.abs()).exp().ln_1p();
                *g = (sigmoid(z) - t) * T::of(inv_n);
            }
        }
        Loss::Mse => {
            let scale = 2.0 / out.len() as f64;
            for ((&o, &t), g) in out.data().iter().zip(y.data()).zip(grad.iter_mut()) {
                let d = (o - t).as_f64();
                total += d * d;
                *g = (o - t) * T::of(scale);
            }
            return (
                total / out.len() as f64,
                Tensor::new(out.shape().to_vec(), grad).expect("grad"),
            );
        }
    }
    (
        total * inv_n,
        Tensor::new(out.shape().to_vec(), grad).expect("grad"),
    )
}

struct Optimizer<T> {
    kind: OptimizerKind,
    step: i32,
    first: Vec<Vec<Vec<T>>>,
    second: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Optimizer<T> {
    fn new(kind: OptimizerKind, model: &Model<T>) -> Self {
        let zeros = |_: ()| -> Vec<Vec<Vec<T>>> {
            model
                .layers()
                .iter()
                .map(|l| {
                    l.params[..l.kind.trainable_params()]
                        .iter()
                        .map(|p| vec![T::zero(); p.len()])
                        .collect()
                })
                .collect()
        };
        Optimizer {
            kind,
            step: 0,
            first: zeros(()),
            second: if kind == OptimizerKind::Adam {
                zeros(())
            } else {
                vec![]
            },
        }
    }

    fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update(
        &mut self,
        layer: usize,
        param: usize,
        values: &mut [T],
        grad: &[T],
        lr: f64,
        mask: Option<&[bool]>,
    ) {
        let lr = T::of(lr);
        match self.kind {
            OptimizerKind::SgdMomentum => {
                let mu = T::of(0.9);
                let vel = &mut self.first[layer][param];
                for i in 0..values.len() {
                    if mask.is_some_and(|m| !m[i]) {
                        continue;
                    }
                    vel[i] = mu * vel[i] - lr * grad[i];
                    values[i] += vel[i];
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-7));
                let c1 = T::one() - b1.powi(self.step);
                let c2 = T::one() - b2.powi(self.step);
                let m = &mut self.first[layer][param];
                let v = &mut self.second[layer][param];
                for i in 0..values.len() {
                    if mask.is_some_and(|mk| !mk[i]) {
                        continue;
                    }
                    let g = grad[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    values[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Mini-batch training with validation-driven early stopping and learning-rate
/// halving. Parameters are updated in place; the best validation epoch is restored
/// at the end.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_, T>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_batch(&train_set.x)?;
    model.check_batch(&val_set.x)?;

    let metric = cfg.loss.metric();
    let upto = loss_upto(model, cfg.loss);
    let frozen = opts.frozen_prefix.unwrap_or(0);
    let updatable: Vec<bool> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| i >= frozen && i < upto && l.trainable && l.kind.trainable_params() > 0)
        .collect();
    let first_updatable = updatable.iter().position(|&u| u);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, model);
    let mut lr = cfg.learning_rate;
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if let Some(hook) = opts.hook.as_deref_mut() {
                hook.on_step(step, model)?;
            }
            let batch = train_set.subset(chunk);
            let cache_from = first_updatable.unwrap_or(upto);
            let (out, caches) = model.forward_train(&batch.x, upto, cache_from, &mut rng)?;
            let (loss, mut grad) = loss_and_grad(cfg.loss, &out, &batch.y);
            if !loss.is_finite() || !out.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss;
            batches += 1;
            step += 1;
            let Some(first) = first_updatable else {
                continue;
            };
            optimizer.begin_step();
            for i in (first..upto).rev() {
                let layer = &model.layers()[i];
                let (dx, pgrads) = layer.backward(&caches[i], &grad, i > first, updatable[i]);
                if updatable[i] {
                    let mask = opts
                        .hook
                        .as_deref()
                        .and_then(|h| h.update_mask(i))
                        .map(<[bool]>::to_vec);
                    let layer = model.layer_mut(i);
                    for (p, g) in pgrads.iter().enumerate() {
                        let m = if p == 0 { mask.as_deref() } else { None };
                        optimizer.update(i, p, layer.params[p].data_mut(), g.data(), lr, m);
                    }
                }
                match dx {
                    Some(dx) => grad = dx,
                    None => break,
                }
            }
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let (val_loss, val_metric) = loss_and_metric(model, val_set, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: val_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
            learning_rate: lr,
        });

        let armed = opts
            .hook
            .as_deref()
            .is_none_or(|h| h.early_stopping_armed());
        if !armed {
            best = None;
            stale = 0;
            continue;
        }
        let monitored = if metric.higher_is_better() {
            val_metric
        } else {
            -val_loss
        };
        if best.as_ref().is_none_or(|(b, _, _)| monitored > *b) {
            best = Some((monitored, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale.is_multiple_of(cfg.lr_halving_period) {
                lr = (lr * 0.5).max(cfg.min_learning_rate);
            }
            if stale >= cfg.patience_epochs {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.steps = step;
    if let Some(hook) = opts.hook.as_deref_mut() {
        hook.on_train_end(step, model)?;
    }
    if let Some((_, epoch, snapshot)) = best {
        history.best_epoch = Some(epoch);
        if epoch + 1 != history.epochs.len() {
            *model = snapshot;
        }
    }
    Ok(history)
}

/// Validation loss (through the training loss path) and the task metric.
pub fn loss_and_metric<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    loss: Loss,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let upto = loss_upto(model, loss);
    let mut total = 0.0;
    let mut metric = MetricAccumulator::new(loss.metric());
    for chunk in chunk_indices(data.len(), 256) {
        let part = data.subset(&chunk);
        let raw = model.forward_range(&part.x, upto)?;
        let (l, _) = loss_and_grad(loss, &raw, &part.y);
        total += l * part.len() as f64;
        let full = if upto == model.len() {
            raw
        } else {
            model.forward(&part.x)?
        };
        metric.add(&full, &part.y);
    }
    Ok((total / data.len() as f64, metric.finish()))
}

/// Accuracy (argmax agreement, or threshold 0.5 for a single output unit) or mean
/// squared error over every element.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>, metric: Metric) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = MetricAccumulator::new(metric);
    for chunk in chunk_indices(data.len(), 256) {
        let part = data.subset(&chunk);
        acc.add(&model.forward(&part.x)?, &part.y);
    }
    Ok(acc.finish())
}

/// Class predictions for a batch of outputs.
pub fn predicted_classes<T: Scalar>(out: &Tensor<T>) -> Vec<usize> {
    let k = out.row_len();
    out.data()
        .chunks(k)
        .map(|row| {
            if k == 1 {
                usize::from(row[0] > T::of(0.5))
            } else {
                argmax(row)
            }
        })
        .collect()
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct MetricAccumulator {
    metric: Metric,
    sum: f64,
    count: usize,
}

impl MetricAccumulator {
    fn new(metric: Metric) -> Self {
        MetricAccumulator {
            metric,
            sum: 0.0,
            count: 0,
        }
    }

    fn add<T: Scalar>(&mut self, out: &Tensor<T>, y: &Tensor<T>) {
        match self.metric {
            Metric::Accuracy => {
                let truth = predicted_classes(y);
                let pred = predicted_classes(out);
                self.sum += pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64;
                self.count += truth.len();
            }
            Metric::Mse => {
                self.sum += out
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&a, &b)| (a - b).as_f64().powi(2))
                    .sum::<f64>();
                self.count += out.len();
            }
        }
    }

    fn finish(&self) -> f64 {
        self.sum / self.count.max(1) as f64
    }
}

fn chunk_indices(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(size)
        .map(move |s| (s..(s + size).min(n)).collect())
}
