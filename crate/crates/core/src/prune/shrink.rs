use serde::{Deserialize, Serialize};

use super::iterative::PruneState;
use super::masks::prunable_layers;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{
    horner, sigmoid, train, Layer, LayerKind, Model, TrainConfig, TrainHistory, TrainOptions,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Spec<T> {
    kind: LayerKind,
    params: Vec<Tensor<T>>,
    trainable: bool,
}

/// Keeps the columns `keep` of a row-major `(rows, cols)` matrix.
fn select_columns<T: Scalar>(data: &[T], cols: usize, keep: &[usize]) -> Vec<T> {
    data.chunks(cols)
        .flat_map(|row| keep.iter().map(move |&c| row[c]))
        .collect()
}

/// Physically removes the units and filters whose weight columns are fully masked.
///
/// A removed unit still emits its bias, so that constant is pushed through the
/// elementwise, pooling and flatten layers that follow and folded into the next linear
/// layer's bias before the matching weight rows are dropped. The result matches the
/// masked model exactly unless that next layer is a zero-padded convolution.
pub fn shrink_structure<T: Scalar>(model: &Model<T>, state: &PruneState) -> Result<Model<T>> {
    let mut specs: Vec<Spec<T>> = model
        .layers()
        .iter()
        .map(|l| Spec {
            kind: l.kind.clone(),
            params: l.params.clone(),
            trainable: l.trainable,
        })
        .collect();
    let prunable = prunable_layers(model);
    for mask in &state.masks {
        let i = mask.layer_index;
        if !prunable.contains(&i)
            || model.layers()[i].weight_matrix_dims() != Some((mask.rows, mask.cols))
        {
            return Err(Error::InvalidShape(format!(
                "mask for layer {i} does not fit the model"
            )));
        }
        // zero every masked weight so removed columns are exactly their bias
        for (w, keep) in specs[i].params[0]
            .data_mut()
            .iter_mut()
            .zip(mask.element_mask())
        {
            if !keep {
                *w = T::zero();
            }
        }
    }

    for mask in &state.masks {
        let i = mask.layer_index;
        let dead = mask.dead_columns();
        if dead.is_empty() {
            continue;
        }
        if dead.len() == mask.cols {
            return Err(Error::EmptyLayer(i));
        }
        let keep: Vec<usize> = (0..mask.cols).filter(|c| !dead.contains(c)).collect();
        let spec = &mut specs[i];
        let bias = spec.params[1].data().to_vec();
        let mut wshape = spec.params[0].shape().to_vec();
        *wshape.last_mut().expect("weight rank") = keep.len();
        spec.params[0] = Tensor::new(
            wshape,
            select_columns(spec.params[0].data(), mask.cols, &keep),
        )?;
        spec.params[1] = Tensor::new(vec![keep.len()], keep.iter().map(|&c| bias[c]).collect())?;
        match &mut spec.kind {
            LayerKind::Dense { units } => *units = keep.len(),
            LayerKind::Conv2D { filters, .. } => *filters = keep.len(),
            _ => unreachable!("prunable layers are linear"),
        }

        // constant outputs of removed units, indexed along the last axis
        let mut removed: Vec<(usize, T)> = dead.iter().map(|&c| (c, bias[c])).collect();
        let mut width = mask.cols;
        let mut j = i + 1;
        loop {
            let Some(spec) = specs.get_mut(j) else {
                return Err(Error::InvalidShape(format!(
                    "no layer consumes the output of layer {i}"
                )));
            };
            let original = &model.layers()[j];
            match &spec.kind {
                LayerKind::PolyAct { .. } => {
                    let c = spec.params[0].data();
                    removed.iter_mut().for_each(|(_, v)| *v = horner(c, *v));
                }
                LayerKind::SquareAct => removed.iter_mut().for_each(|(_, v)| *v = *v * *v),
                LayerKind::Relu => removed.iter_mut().for_each(|(_, v)| *v = v.max(T::zero())),
                LayerKind::Sigmoid => removed.iter_mut().for_each(|(_, v)| *v = sigmoid(*v)),
                LayerKind::Dropout { .. }
                | LayerKind::MaxPool2D { .. }
                | LayerKind::AvgPool2D { .. } => {}
                LayerKind::BatchNorm { epsilon, .. } => {
                    let eps = T::of(*epsilon);
                    let p: Vec<Vec<T>> = spec.params.iter().map(|t| t.data().to_vec()).collect();
                    for (c, v) in removed.iter_mut() {
                        *v = p[0][*c] * (*v - p[2][*c]) / (p[3][*c] + eps).sqrt() + p[1][*c];
                    }
                    let keep: Vec<usize> = (0..width)
                        .filter(|c| !removed.iter().any(|r| r.0 == *c))
                        .collect();
                    for t in spec.params.iter_mut() {
                        *t = Tensor::new(
                            vec![keep.len()],
                            keep.iter().map(|&c| t.data()[c]).collect(),
                        )?;
                    }
                }
                LayerKind::Flatten => {
                    let positions = original.input_shape().iter().product::<usize>() / width;
                    removed = (0..positions)
                        .flat_map(|p| removed.iter().map(move |&(c, v)| (p * width + c, v)))
                        .collect();
                    width *= positions;
                }
                LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => {
                    let rows_per_channel = spec.params[0].len() / spec.params[1].len() / width;
                    let cols = spec.params[1].len();
                    let gone = |r: usize| {
                        removed
                            .iter()
                            .find(|&&(c, _)| c == r % width)
                            .map(|&(_, v)| v)
                    };
                    let w = spec.params[0].data().to_vec();
                    let b = spec.params[1].data_mut();
                    let mut kept_rows = Vec::new();
                    for (r, row) in w.chunks(cols).enumerate() {
                        match gone(r) {
                            Some(v) => {
                                for (bf, &wf) in b.iter_mut().zip(row) {
                                    *bf += wf * v;
                                }
                            }
                            None => kept_rows.extend_from_slice(row),
                        }
                    }
                    let mut shape = spec.params[0].shape().to_vec();
                    let channel_axis = shape.len() - 2;
                    shape[channel_axis] = width - removed.len();
                    debug_assert_eq!(
                        kept_rows.len(),
                        rows_per_channel * (width - removed.len()) * cols
                    );
                    spec.params[0] = Tensor::new(shape, kept_rows)?;
                    break;
                }
                other => {
                    return Err(Error::Unsupported {
                        index: j,
                        kind: other.name().into(),
                        reason: "cannot carry removed units through this layer".into(),
                    })
                }
            }
            j += 1;
        }
    }

    let mut shape = model.input_shape().to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut layer = Layer::with_params(spec.kind, &shape, spec.params)?;
        layer.trainable = spec.trainable;
        shape = layer.output_shape().to_vec();
        layers.push(layer);
    }
    let mut out = Model::from_layers(model.input_shape(), layers)?;
    out.metadata = model.metadata.clone();
    out.metadata.insert("stage".into(), "shrunk".into());
    Ok(out)
}

/// Removes dead units and filters, then fine-tunes once with `cfg`.
pub fn shrink<T: Scalar>(
    model: &Model<T>,
    state: &PruneState,
    train_set: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainHistory)> {
    if !state.is_frozen() {
        return Err(Error::config("masks must be frozen before shrinking"));
    }
    let mut m = shrink_structure(model, state)?;
    let history = train(&mut m, train_set, val, cfg, TrainOptions::default())?;
    Ok((m, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub kind: String,
    pub original_units: usize,
    pub kept_units: usize,
    /// Fraction of units or filters removed.
    pub unit_sparsity: f64,
    pub original_params: usize,
    pub kept_params: usize,
    /// `1 - kept / original` over weights and biases.
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub per_layer: Vec<LayerSparsity>,
    /// Over every Dense and Conv2D layer, including rows removed from the output layer.
    pub overall: f64,
}

fn nonzero<T: Scalar>(layer: &Layer<T>) -> usize {
    layer
        .params
        .iter()
        .flat_map(|p| p.data())
        .filter(|v| **v != T::zero())
        .count()
}

/// Parameter sparsity of `shrunk` relative to `original`, layer by layer.
pub fn sparsity_report<T: Scalar>(
    original: &Model<T>,
    shrunk: &Model<T>,
) -> Result<SparsityReport> {
    if original.len() != shrunk.len() {
        return Err(Error::InvalidShape(format!(
            "models have {} and {} layers",
            original.len(),
            shrunk.len()
        )));
    }
    let prunable = prunable_layers(original);
    let (mut total, mut kept) = (0usize, 0usize);
    let mut per_layer = Vec::new();
    for (i, (o, s)) in original.layers().iter().zip(shrunk.layers()).enumerate() {
        if !o.kind.is_linear() {
            continue;
        }
        let (op, kp) = (o.param_count(), nonzero(s));
        total += op;
        kept += kp;
        if prunable.contains(&i) {
            let ou = o.weight_matrix_dims().map_or(0, |d| d.1);
            let ku = s.weight_matrix_dims().map_or(0, |d| d.1);
            per_layer.push(LayerSparsity {
                layer: i,
                kind: o.kind.name().into(),
                original_units: ou,
                kept_units: ku,
                unit_sparsity: 1.0 - ku as f64 / ou as f64,
                original_params: op,
                kept_params: kp,
                sparsity: 1.0 - kp as f64 / op as f64,
            });
        }
    }
    Ok(SparsityReport {
        per_layer,
        overall: if total == 0 {
            0.0
        } else {
            1.0 - kept as f64 / total as f64
        },
    })
}
