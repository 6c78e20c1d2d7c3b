//! Conversion of a trained model into a form evaluable with additions and
//! multiplications only.

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{
    evaluate, init_params, train, Layer, LayerKind, Loss, Model, OptimizerKind, TrainConfig,
    TrainOptions,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    /// Trainable polynomial of the configured degree.
    Poly,
    /// Fixed `x^2`.
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HefConfig {
    pub poly_degree: usize,
    pub activation_mode: ActivationMode,
    pub transfer_epochs: usize,
    pub finetune_epochs: usize,
    pub transfer_lr: f64,
    pub finetune_lr: f64,
    pub patience: usize,
    pub coeff_init_scale: f64,
    pub seed: u64,
    pub loss: Loss,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for HefConfig {
    fn default() -> Self {
        HefConfig {
            poly_degree: 2,
            activation_mode: ActivationMode::Poly,
            transfer_epochs: 100,
            finetune_epochs: 100,
            transfer_lr: 1e-3,
            finetune_lr: 1e-4,
            patience: 10,
            coeff_init_scale: 0.01,
            seed: 0,
            loss: Loss::CrossEntropy,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl HefConfig {
    pub fn validate(&self) -> Result<()> {
        if self.poly_degree < 1 {
            return Err(Error::config("polynomial degree must be at least 1"));
        }
        if !(self.transfer_lr > self.finetune_lr && self.finetune_lr > 0.0) {
            return Err(Error::config(format!(
                "need transfer lr > finetune lr > 0, got {} and {}",
                self.transfer_lr, self.finetune_lr
            )));
        }
        if self.coeff_init_scale < 0.0 {
            return Err(Error::config("coefficient init scale must be non-negative"));
        }
        Ok(())
    }

    fn train_config(&self, epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: lr,
            patience_epochs: self.patience,
            batch_size: self.batch_size,
            loss: self.loss,
            optimizer: self.optimizer,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// One replaced layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionEntry {
    pub layer_index: usize,
    pub from_kind: String,
    pub to_kind: String,
    pub val_metric_before: f64,
    pub val_metric_after: f64,
    pub epochs_used: usize,
}

/// Ordered record of every conversion step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConversionLog {
    pub entries: Vec<ConversionEntry>,
}

impl ConversionLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }
}

fn rebuild<T: Scalar>(model: &Model<T>, layers: Vec<Layer<T>>) -> Result<Model<T>> {
    let mut out = Model::from_layers(model.input_shape(), layers)?;
    out.metadata = model.metadata.clone();
    Ok(out)
}

fn replace<T: Scalar>(model: &Model<T>, index: usize, layer: Layer<T>) -> Result<Model<T>> {
    let mut layers = model.layers().to_vec();
    layers[index] = layer;
    rebuild(model, layers)
}

/// Removes every Dropout layer; inference outputs are unchanged.
pub fn strip_dropout<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    let layers = model
        .layers()
        .iter()
        .filter(|l| !matches!(l.kind, LayerKind::Dropout { .. }))
        .cloned()
        .collect();
    rebuild(model, layers)
}

/// Absorbs each BatchNorm's inference-time affine map into the Dense or Conv2D layer
/// directly before it.
pub fn fold_batchnorm<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    let mut layers: Vec<Layer<T>> = Vec::with_capacity(model.len());
    for (index, layer) in model.layers().iter().enumerate() {
        let LayerKind::BatchNorm { epsilon, .. } = layer.kind else {
            layers.push(layer.clone());
            continue;
        };
        let prev = match layers.last_mut() {
            Some(p) if p.kind.is_linear() => p,
            _ => {
                return Err(Error::Unsupported {
                    index,
                    kind: layer.kind.name().into(),
                    reason: "batch normalization must directly follow a Dense or Conv2D layer"
                        .into(),
                })
            }
        };
        let [gamma, beta, mean, var] = [0, 1, 2, 3].map(|i| layer.params[i].data());
        let eps = T::of(epsilon);
        let scale: Vec<T> = gamma
            .iter()
            .zip(var)
            .map(|(&g, &v)| g / (v + eps).sqrt())
            .collect();
        let cols = scale.len();
        for (i, w) in prev.params[0].data_mut().iter_mut().enumerate() {
            *w *= scale[i % cols];
        }
        for (f, b) in prev.params[1].data_mut().iter_mut().enumerate() {
            *b = (*b - mean[f]) * scale[f] + beta[f];
        }
    }
    rebuild(model, layers)
}

/// Drops a final Softmax; class predictions are unchanged.
pub fn strip_softmax<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    let mut layers = model.layers().to_vec();
    if matches!(layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
        layers.pop();
    }
    rebuild(model, layers)
}

fn kind_error<T: Scalar>(model: &Model<T>, index: usize, expected: &'static str) -> Error {
    Error::WrongLayerKind {
        index,
        found: model
            .layers()
            .get(index)
            .map_or_else(|| "nothing".to_string(), |l| l.kind.name().to_string()),
        expected,
    }
}

fn metric<T: Scalar>(model: &Model<T>, val: &Dataset<T>, cfg: &HefConfig) -> Result<f64> {
    evaluate(model, val, cfg.loss.metric())
}

/// Replaces the MaxPool2D at `pool_index` by an AvgPool2D with the same window and
/// stride, retrains the layers after it at the transfer rate, then fine-tunes all layers.
pub fn convert_pooling<T: Scalar>(
    model: &Model<T>,
    pool_index: usize,
    train_set: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &HefConfig,
) -> Result<(Model<T>, ConversionEntry)> {
    cfg.validate()?;
    let Some(LayerKind::MaxPool2D { window, stride }) =
        model.layers().get(pool_index).map(|l| &l.kind)
    else {
        return Err(kind_error(model, pool_index, "MaxPool2D"));
    };
    let before = metric(model, val, cfg)?;
    let old = &model.layers()[pool_index];
    let mut layer = Layer::with_params(
        LayerKind::AvgPool2D {
            window: *window,
            stride: *stride,
        },
        old.input_shape(),
        vec![],
    )?;
    layer.trainable = old.trainable;
    let mut m = replace(model, pool_index, layer)?;
    let transfer = train(
        &mut m,
        train_set,
        val,
        &cfg.train_config(cfg.transfer_epochs, cfg.transfer_lr),
        TrainOptions::frozen(pool_index + 1),
    )?;
    let fine = train(
        &mut m,
        train_set,
        val,
        &cfg.train_config(cfg.finetune_epochs, cfg.finetune_lr),
        TrainOptions::default(),
    )?;
    let entry = ConversionEntry {
        layer_index: pool_index,
        from_kind: "MaxPool2D".into(),
        to_kind: "AvgPool2D".into(),
        val_metric_before: before,
        val_metric_after: metric(&m, val, cfg)?,
        epochs_used: transfer.epochs.len() + fine.epochs.len(),
    };
    Ok((m, entry))
}

/// Replaces the ReLU or Sigmoid at `act_index`.
///
/// `Poly`: a degree-`d` polynomial with small random coefficients; first only its
/// coefficients train at the transfer rate, then all layers fine-tune.
/// `Square`: `x^2`, followed by the fine-tune only.
pub fn convert_activation<T: Scalar>(
    model: &Model<T>,
    act_index: usize,
    mode: ActivationMode,
    train_set: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &HefConfig,
) -> Result<(Model<T>, ConversionEntry)> {
    cfg.validate()?;
    let old = match model.layers().get(act_index) {
        Some(l) if matches!(l.kind, LayerKind::Relu | LayerKind::Sigmoid) => l,
        _ => return Err(kind_error(model, act_index, "ReLU or Sigmoid")),
    };
    let before = metric(model, val, cfg)?;
    let kind = match mode {
        ActivationMode::Poly => LayerKind::PolyAct {
            degree: cfg.poly_degree,
        },
        ActivationMode::Square => LayerKind::SquareAct,
    };
    let mut rng = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (act_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        )
    };
    let params = init_params(
        &kind,
        old.input_shape(),
        false,
        cfg.coeff_init_scale,
        &mut rng,
    )?;
    let from_kind = old.kind.name().to_string();
    let to_kind = kind.name().to_string();
    let mut m = replace(
        model,
        act_index,
        Layer::with_params(kind, old.input_shape(), params)?,
    )?;

    let mut epochs = 0;
    if mode == ActivationMode::Poly {
        let flags: Vec<bool> = m.layers().iter().map(|l| l.trainable).collect();
        for i in 0..m.len() {
            m.layer_mut(i).trainable = i == act_index;
        }
        let h = train(
            &mut m,
            train_set,
            val,
            &cfg.train_config(cfg.transfer_epochs, cfg.transfer_lr),
            TrainOptions::default(),
        );
        for (i, f) in flags.into_iter().enumerate() {
            m.layer_mut(i).trainable = f;
        }
        epochs += h?.epochs.len();
    }
    let fine = train(
        &mut m,
        train_set,
        val,
        &cfg.train_config(cfg.finetune_epochs, cfg.finetune_lr),
        TrainOptions::default(),
    )?;
    epochs += fine.epochs.len();
    let entry = ConversionEntry {
        layer_index: act_index,
        from_kind,
        to_kind,
        val_metric_before: before,
        val_metric_after: metric(&m, val, cfg)?,
        epochs_used: epochs,
    };
    Ok((m, entry))
}

/// Full conversion: strip dropout, fold batch norm, drop a trailing softmax, then
/// convert max-pools and finally activations, each group latest layer first.
pub fn make_he_friendly<T: Scalar>(
    model: &Model<T>,
    train_set: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &HefConfig,
) -> Result<(Model<T>, ConversionLog)> {
    cfg.validate()?;
    let mut m = strip_softmax(&fold_batchnorm(&strip_dropout(model)?)?)?;
    for (index, layer) in m.layers().iter().enumerate() {
        let convertible = matches!(
            layer.kind,
            LayerKind::MaxPool2D { .. } | LayerKind::Relu | LayerKind::Sigmoid
        );
        if !layer.kind.is_he_friendly() && !convertible {
            return Err(Error::Unsupported {
                index,
                kind: layer.kind.name().into(),
                reason: "no HE-friendly replacement".into(),
            });
        }
    }
    let mut log = ConversionLog::default();
    let pools: Vec<usize> = (0..m.len())
        .rev()
        .filter(|&i| matches!(m.layers()[i].kind, LayerKind::MaxPool2D { .. }))
        .collect();
    for i in pools {
        let (next, entry) = convert_pooling(&m, i, train_set, val, cfg)?;
        m = next;
        log.entries.push(entry);
    }
    let acts: Vec<usize> = (0..m.len())
        .rev()
        .filter(|&i| matches!(m.layers()[i].kind, LayerKind::Relu | LayerKind::Sigmoid))
        .collect();
    for i in acts {
        let (next, entry) = convert_activation(&m, i, cfg.activation_mode, train_set, val, cfg)?;
        m = next;
        log.entries.push(entry);
    }
    m.metadata.insert("stage".into(), "he_friendly".into());
    Ok((m, log))
}

/// Random inference input of `n` samples for a model, uniform in `[-1, 1]`.
#[doc(hidden)]
pub fn random_batch<T: Scalar>(model: &Model<T>, n: usize, seed: u64) -> Tensor<T> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![n];
    shape.extend_from_slice(model.input_shape());
    let data = (0..n * model.input_len())
        .map(|_| T::of(rng.gen_range(-1.0..1.0)))
        .collect();
    Tensor::new(shape, data).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synthetic, SyntheticKind};
    use crate::nncore::{layer_forward, ModelBuilder, Padding};

    fn quick(cfg: HefConfig) -> HefConfig {
        HefConfig {
            transfer_epochs: 2,
            finetune_epochs: 2,
            batch_size: 16,
            ..cfg
        }
    }

    fn cnn() -> Model<f64> {
        ModelBuilder::new(&[28, 28, 1])
            .conv(2, 3, 1, Padding::Valid)
            .relu()
            .max_pool(2)
            .conv(2, 3, 1, Padding::Valid)
            .relu()
            .max_pool(2)
            .flatten()
            .dense(8)
            .relu()
            .dense(10)
            .softmax()
            .build(3)
            .unwrap()
    }

    #[test]
    fn identity_batchnorm_folds_to_no_change() {
        let base: Model<f64> = ModelBuilder::new(&[5])
            .dense(4)
            .layer(LayerKind::BatchNorm {
                epsilon: 0.0,
                momentum: 0.9,
            })
            .build(2)
            .unwrap();
        let folded = fold_batchnorm(&base).unwrap();
        assert_eq!(folded.len(), 1);
        assert!(folded.layers()[0].params[0].max_abs_diff(&base.layers()[0].params[0]) <= 1e-12);
    }

    #[test]
    fn folded_batchnorm_matches_unfolded_inference() {
        let mut base: Model<f64> = ModelBuilder::new(&[6, 6, 2])
            .conv(3, 3, 1, Padding::Same)
            .layer(LayerKind::BatchNorm {
                epsilon: 1e-3,
                momentum: 0.9,
            })
            .flatten()
            .dense(4)
            .layer(LayerKind::BatchNorm {
                epsilon: 1e-3,
                momentum: 0.9,
            })
            .build(4)
            .unwrap();
        for (bn, seed) in [(1usize, 10u64), (4, 20)] {
            let c = base.layers()[bn].params[0].len();
            let mut r = random_batch(&Model::<f64>::empty(&[4 * c]), 1, seed).into_data();
            let layer = base.layer_mut(bn);
            for (p, chunk) in layer.params.iter_mut().zip(r.chunks_mut(c)) {
                for (dst, v) in p.data_mut().iter_mut().zip(chunk.iter()) {
                    *dst = *v;
                }
            }
            for v in layer.params[3].data_mut() {
                *v = v.abs() + 0.1;
            }
        }
        let folded = fold_batchnorm(&base).unwrap();
        let x = random_batch(&base, 7, 1);
        let diff = folded
            .forward(&x)
            .unwrap()
            .max_abs_diff(&base.forward(&x).unwrap());
        assert!(diff <= 1e-10, "{diff}");
    }

    #[test]
    fn batchnorm_after_activation_is_rejected() {
        let m: Model<f64> = ModelBuilder::new(&[3])
            .dense(3)
            .relu()
            .layer(LayerKind::BatchNorm {
                epsilon: 1e-3,
                momentum: 0.9,
            })
            .build(0)
            .unwrap();
        assert!(matches!(
            fold_batchnorm(&m),
            Err(Error::Unsupported { index: 2, .. })
        ));
    }

    #[test]
    fn dropout_strip_is_bit_identical() {
        let m: Model<f64> = ModelBuilder::new(&[4])
            .dense(6)
            .layer(LayerKind::Dropout { rate: 0.5 })
            .dense(2)
            .build(1)
            .unwrap();
        let s = strip_dropout(&m).unwrap();
        assert_eq!(s.len(), 2);
        let x = random_batch(&m, 5, 2);
        assert_eq!(s.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn constant_windows_survive_pool_swap() {
        let m: Model<f64> = ModelBuilder::new(&[4, 4, 1]).max_pool(2).build(0).unwrap();
        let x = Tensor::from_f64(
            &[1, 4, 4, 1],
            &[
                1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.,
            ],
        )
        .unwrap();
        let avg = Layer::with_params(
            LayerKind::AvgPool2D {
                window: [2, 2],
                stride: [2, 2],
            },
            &[4, 4, 1],
            vec![],
        )
        .unwrap();
        assert_eq!(layer_forward(&avg, &x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn square_and_poly_replacements() {
        let data: Dataset<f64> = synthetic(SyntheticKind::Blobs, 60, 1).unwrap();
        let parts = data.split(&[48, 12], 0).unwrap();
        let m: Model<f64> = ModelBuilder::new(&[2])
            .dense(6)
            .relu()
            .dense(3)
            .build(0)
            .unwrap();
        let cfg = quick(HefConfig::default());
        let (sq, e) =
            convert_activation(&m, 1, ActivationMode::Square, &parts[0], &parts[1], &cfg).unwrap();
        assert_eq!(sq.layers()[1].kind, LayerKind::SquareAct);
        assert_eq!(sq.param_count(), m.param_count());
        assert_eq!(
            (e.from_kind.as_str(), e.to_kind.as_str()),
            ("ReLU", "SquareAct")
        );

        let no_fine = HefConfig {
            finetune_epochs: 0,
            ..cfg.clone()
        };
        let (p, _) =
            convert_activation(&m, 1, ActivationMode::Poly, &parts[0], &parts[1], &no_fine)
                .unwrap();
        assert_eq!(p.layers()[1].params[0].len(), 3);
        // coefficient-only phase keeps every other parameter bit-identical
        assert_eq!(p.layers()[0], m.layers()[0]);
        assert_eq!(p.layers()[2], m.layers()[2]);
        let untrained = HefConfig {
            transfer_epochs: 0,
            ..no_fine
        };
        let (init, _) = convert_activation(
            &m,
            1,
            ActivationMode::Poly,
            &parts[0],
            &parts[1],
            &untrained,
        )
        .unwrap();
        assert!(init.layers()[1].params[0]
            .data()
            .iter()
            .all(|c| c.abs() <= 0.01));
        assert_ne!(init.layers()[1], p.layers()[1]);
        assert!(matches!(
            convert_activation(&m, 0, ActivationMode::Poly, &parts[0], &parts[1], &cfg),
            Err(Error::WrongLayerKind { index: 0, .. })
        ));
    }

    #[test]
    fn pool_conversion_freezes_the_prefix_during_transfer() {
        let data: Dataset<f64> = synthetic(SyntheticKind::MnistLike, 40, 2).unwrap();
        let parts = data.split(&[32, 8], 0).unwrap();
        let m = cnn();
        let cfg = HefConfig {
            finetune_epochs: 0,
            ..quick(HefConfig::default())
        };
        let (c, e) = convert_pooling(&m, 5, &parts[0], &parts[1], &cfg).unwrap();
        assert!(matches!(
            c.layers()[5].kind,
            LayerKind::AvgPool2D {
                window: [2, 2],
                stride: [2, 2]
            }
        ));
        for i in 0..5 {
            assert_eq!(c.layers()[i], m.layers()[i]);
        }
        assert_ne!(c.layers()[7], m.layers()[7]);
        assert_eq!(e.epochs_used, 2);
        assert!(convert_pooling(&m, 4, &parts[0], &parts[1], &cfg).is_err());
    }

    #[test]
    fn full_pipeline_orders_pools_then_activations_latest_first() {
        let data: Dataset<f64> = synthetic(SyntheticKind::MnistLike, 40, 2).unwrap();
        let parts = data.split(&[32, 8], 0).unwrap();
        let mut m = cnn();
        let layers = m.layers().to_vec();
        m = Model::from_layers(&[28, 28, 1], {
            let mut l = layers;
            l.insert(
                9,
                Layer::with_params(LayerKind::Dropout { rate: 0.2 }, &[8], vec![]).unwrap(),
            );
            l
        })
        .unwrap();
        let (hef, log) =
            make_he_friendly(&m, &parts[0], &parts[1], &quick(HefConfig::default())).unwrap();
        assert!(hef.is_he_friendly());
        let idx: Vec<(usize, &str)> = log
            .entries
            .iter()
            .map(|e| (e.layer_index, e.from_kind.as_str()))
            .collect();
        assert_eq!(
            idx,
            vec![
                (5, "MaxPool2D"),
                (2, "MaxPool2D"),
                (8, "ReLU"),
                (4, "ReLU"),
                (1, "ReLU")
            ]
        );
        let json = log.to_json();
        assert!(json.trim_start().starts_with('[') && json.contains("val_metric_after"));

        let (again, empty) =
            make_he_friendly(&hef, &parts[0], &parts[1], &quick(HefConfig::default())).unwrap();
        assert!(empty.entries.is_empty());
        assert_eq!(again.layers(), hef.layers());
    }
}
