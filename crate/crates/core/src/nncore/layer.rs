use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{col2im_add, im2col_into, Padding, WindowGeometry};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// The fixed menu of layer types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2D {
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    },
    MaxPool2D {
        window: [usize; 2],
        stride: [usize; 2],
    },
    AvgPool2D {
        window: [usize; 2],
        stride: [usize; 2],
    },
    /// Elementwise `sum_k c_k x^k` with trainable coefficients.
    PolyAct {
        degree: usize,
    },
    SquareAct,
    Relu,
    Sigmoid,
    Softmax,
    Flatten,
    BatchNorm {
        epsilon: f64,
        momentum: f64,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "Dense",
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::MaxPool2D { .. } => "MaxPool2D",
            LayerKind::AvgPool2D { .. } => "AvgPool2D",
            LayerKind::PolyAct { .. } => "PolyAct",
            LayerKind::SquareAct => "SquareAct",
            LayerKind::Relu => "ReLU",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::Softmax => "Softmax",
            LayerKind::Flatten => "Flatten",
            LayerKind::BatchNorm { .. } => "BatchNorm",
            LayerKind::Dropout { .. } => "Dropout",
        }
    }

    /// Dense and Conv2D: the layers that own a weight matrix.
    pub fn is_linear(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2D { .. })
    }

    pub fn is_activation(&self) -> bool {
        matches!(
            self,
            LayerKind::Relu | LayerKind::Sigmoid | LayerKind::PolyAct { .. } | LayerKind::SquareAct
        )
    }

    /// Layers evaluable with additions and multiplications only.
    pub fn is_he_friendly(&self) -> bool {
        matches!(
            self,
            LayerKind::Dense { .. }
                | LayerKind::Conv2D { .. }
                | LayerKind::AvgPool2D { .. }
                | LayerKind::PolyAct { .. }
                | LayerKind::SquareAct
                | LayerKind::Flatten
        )
    }

    /// Number of leading parameter tensors that receive gradients.
    pub fn trainable_params(&self) -> usize {
        match self {
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } | LayerKind::BatchNorm { .. } => 2,
            LayerKind::PolyAct { .. } => 1,
            _ => 0,
        }
    }

    pub fn window_geometry(&self, input: &[usize]) -> Result<Option<WindowGeometry>> {
        Ok(match *self {
            LayerKind::Conv2D {
                kernel,
                stride,
                padding,
                ..
            } => Some(WindowGeometry::new(input, kernel, stride, padding)?),
            LayerKind::MaxPool2D { window, stride } | LayerKind::AvgPool2D { window, stride } => {
                Some(WindowGeometry::new(input, window, stride, Padding::Valid)?)
            }
            _ => None,
        })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.is_empty() || input.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "{} received empty input shape {input:?}",
                self.name()
            )));
        }
        match self {
            LayerKind::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::InvalidShape(format!(
                        "Dense expects a flat input, got {input:?}"
                    )));
                }
                Ok(vec![*units])
            }
            LayerKind::Conv2D { filters, .. } => {
                let g = self.window_geometry(input)?.expect("conv geometry");
                Ok(vec![g.out_h, g.out_w, *filters])
            }
            LayerKind::MaxPool2D { .. } | LayerKind::AvgPool2D { .. } => {
                let g = self.window_geometry(input)?.expect("pool geometry");
                Ok(vec![g.out_h, g.out_w, g.channels])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            _ => Ok(input.to_vec()),
        }
    }

    /// Shapes of every parameter tensor for a given input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        Ok(match self {
            LayerKind::Dense { units } => vec![vec![input[0], *units], vec![*units]],
            LayerKind::Conv2D {
                filters, kernel, ..
            } => {
                let channels = *input.last().expect("conv input");
                vec![
                    vec![kernel[0], kernel[1], channels, *filters],
                    vec![*filters],
                ]
            }
            LayerKind::PolyAct { degree } => vec![vec![degree + 1]],
            LayerKind::BatchNorm { .. } => {
                let c = *input.last().expect("bn input");
                vec![vec![c]; 4]
            }
            _ => vec![],
        })
    }
}

/// A layer together with its parameters and resolved shapes.
///
/// Parameter order: Dense/Conv2D `[W, B]` (Conv2D `W` is `(I, J, K, F)`); PolyAct
/// `[coeffs]` (constant term first); BatchNorm `[gamma, beta, moving_mean, moving_var]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f64> {
    pub kind: LayerKind,
    pub params: Vec<Tensor<T>>,
    pub trainable: bool,
    pub(crate) input_shape: Vec<usize>,
    pub(crate) output_shape: Vec<usize>,
}

/// Intermediate values kept from a training forward pass.
#[derive(Debug)]
pub(crate) enum Cache<T> {
    None,
    Input(Tensor<T>),
    Output(Tensor<T>),
    Cols(Vec<T>),
    ArgMax(Vec<usize>),
    Norm { xhat: Vec<T>, inv_std: Vec<T> },
    Mask(Vec<T>),
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer with explicit parameters, validating every shape.
    pub fn with_params(
        kind: LayerKind,
        input_shape: &[usize],
        params: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let output_shape = kind.output_shape(input_shape)?;
        let expected = kind.param_shapes(input_shape)?;
        if expected.len() != params.len()
            || expected
                .iter()
                .zip(&params)
                .any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(Error::InvalidShape(format!(
                "{} parameters {:?} do not match expected {:?}",
                kind.name(),
                params
                    .iter()
                    .map(|p| p.shape().to_vec())
                    .collect::<Vec<_>>(),
                expected
            )));
        }
        if let LayerKind::Dropout { rate } = kind {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        Ok(Layer {
            kind,
            params,
            trainable: true,
            input_shape: input_shape.to_vec(),
            output_shape,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn weights(&self) -> Option<&Tensor<T>> {
        self.kind.is_linear().then(|| &self.params[0])
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.kind.is_linear().then(|| &self.params[1])
    }

    /// Weight matrix viewed as `(rows, cols)`: Dense `(M, units)`, Conv2D `(I*J*K, F)`.
    pub fn weight_matrix_dims(&self) -> Option<(usize, usize)> {
        let w = self.weights()?;
        let cols = *w.shape().last().expect("weight rank");
        Some((w.len() / cols, cols))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn geometry(&self) -> WindowGeometry {
        self.kind
            .window_geometry(&self.input_shape)
            .expect("validated at construction")
            .expect("windowed layer")
    }

    /// Batched forward pass over `x` of shape `(n, input_shape...)`.
    pub(crate) fn forward_batch(
        &self,
        x: &Tensor<T>,
        training: bool,
        keep_cache: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let n = x.rows();
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&self.output_shape);
        let xd = x.data();
        let (out, cache) = match &self.kind {
            LayerKind::Dense { units } => {
                let m = self.input_shape[0];
                let mut out = vec![T::zero(); n * units];
                let b = self.params[1].data();
                for row in out.chunks_mut(*units) {
                    row.copy_from_slice(b);
                }
                gemm(
                    xd,
                    (n, m),
                    Trans::No,
                    self.params[0].data(),
                    (m, *units),
                    Trans::No,
                    T::one(),
                    &mut out,
                );
                let cache = if keep_cache {
                    Cache::Input(x.clone())
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::Conv2D { filters, .. } => {
                let g = self.geometry();
                let (pos, m) = (g.positions(), g.patch_len());
                let mut cols = vec![T::zero(); n * pos * m];
                for (sample, dst) in xd.chunks(g.input_len()).zip(cols.chunks_mut(pos * m)) {
                    im2col_into(sample, &g, dst);
                }
                let mut out = vec![T::zero(); n * pos * filters];
                let b = self.params[1].data();
                for row in out.chunks_mut(*filters) {
                    row.copy_from_slice(b);
                }
                gemm(
                    &cols,
                    (n * pos, m),
                    Trans::No,
                    self.params[0].data(),
                    (m, *filters),
                    Trans::No,
                    T::one(),
                    &mut out,
                );
                let cache = if keep_cache {
                    Cache::Cols(cols)
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::MaxPool2D { .. } | LayerKind::AvgPool2D { .. } => {
                let g = self.geometry();
                let is_max = matches!(self.kind, LayerKind::MaxPool2D { .. });
                let per_in = g.input_len();
                let per_out = g.positions() * g.channels;
                let inv_k = T::one() / T::of_usize(g.kernel_h * g.kernel_w);
                let mut out = vec![T::zero(); n * per_out];
                let mut argmax = if is_max && keep_cache {
                    vec![0usize; n * per_out]
                } else {
                    vec![]
                };
                for s in 0..n {
                    let xs = &xd[s * per_in..(s + 1) * per_in];
                    for u in 0..g.out_h {
                        for v in 0..g.out_w {
                            for c in 0..g.channels {
                                let o = s * per_out + (u * g.out_w + v) * g.channels + c;
                                let mut best = T::neg_infinity();
                                let mut best_at = 0;
                                let mut acc = T::zero();
                                for i in 0..g.kernel_h {
                                    for j in 0..g.kernel_w {
                                        let at =
                                            ((u * g.stride_h + i) * g.in_w + v * g.stride_w + j)
                                                * g.channels
                                                + c;
                                        let val = xs[at];
                                        acc += val;
                                        if val > best {
                                            best = val;
                                            best_at = s * per_in + at;
                                        }
                                    }
                                }
                                if is_max {
                                    out[o] = best;
                                    if keep_cache {
                                        argmax[o] = best_at;
                                    }
                                } else {
                                    out[o] = acc * inv_k;
                                }
                            }
                        }
                    }
                }
                let cache = if is_max && keep_cache {
                    Cache::ArgMax(argmax)
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::PolyAct { .. } => {
                let c = self.params[0].data();
                let out = xd.iter().map(|&v| horner(c, v)).collect();
                (
                    out,
                    if keep_cache {
                        Cache::Input(x.clone())
                    } else {
                        Cache::None
                    },
                )
            }
            LayerKind::SquareAct => {
                let out = xd.iter().map(|&v| v * v).collect();
                (
                    out,
                    if keep_cache {
                        Cache::Input(x.clone())
                    } else {
                        Cache::None
                    },
                )
            }
            LayerKind::Relu => {
                let out = xd
                    .iter()
                    .map(|&v| if v > T::zero() { v } else { T::zero() })
                    .collect();
                (
                    out,
                    if keep_cache {
                        Cache::Input(x.clone())
                    } else {
                        Cache::None
                    },
                )
            }
            LayerKind::Sigmoid => {
                let out: Vec<T> = xd.iter().map(|&v| sigmoid(v)).collect();
                let cache = if keep_cache {
                    Cache::Output(Tensor::new(x.shape().to_vec(), out.clone())?)
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::Softmax => {
                let w = *self.output_shape.last().expect("softmax shape");
                let mut out = xd.to_vec();
                for row in out.chunks_mut(w) {
                    softmax_in_place(row);
                }
                let cache = if keep_cache {
                    Cache::Output(Tensor::new(x.shape().to_vec(), out.clone())?)
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::Flatten => (xd.to_vec(), Cache::None),
            LayerKind::BatchNorm { epsilon, .. } => {
                let c = *self.input_shape.last().expect("bn shape");
                let eps = T::of(*epsilon);
                let (gamma, beta) = (self.params[0].data(), self.params[1].data());
                if training {
                    let (mean, var) = channel_moments(xd, c);
                    let inv_std: Vec<T> =
                        var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                    let mut xhat = vec![T::zero(); xd.len()];
                    let mut out = vec![T::zero(); xd.len()];
                    for (i, (&v, (h, o))) in xd
                        .iter()
                        .zip(xhat.iter_mut().zip(out.iter_mut()))
                        .enumerate()
                    {
                        let ch = i % c;
                        *h = (v - mean[ch]) * inv_std[ch];
                        *o = gamma[ch] * *h + beta[ch];
                    }
                    let cache = if keep_cache {
                        Cache::Norm { xhat, inv_std }
                    } else {
                        Cache::None
                    };
                    (out, cache)
                } else {
                    let (mm, mv) = (self.params[2].data(), self.params[3].data());
                    let out = xd
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let ch = i % c;
                            gamma[ch] * (v - mm[ch]) / (mv[ch] + eps).sqrt() + beta[ch]
                        })
                        .collect();
                    (out, Cache::None)
                }
            }
            LayerKind::Dropout { rate } => {
                if training && *rate > 0.0 {
                    let rng =
                        rng.ok_or_else(|| Error::config("dropout in training mode needs an rng"))?;
                    let keep = 1.0 - rate;
                    let scale = T::of(1.0 / keep);
                    let mask: Vec<T> = (0..xd.len())
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let out = xd.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    (
                        out,
                        if keep_cache {
                            Cache::Mask(mask)
                        } else {
                            Cache::None
                        },
                    )
                } else {
                    (xd.to_vec(), Cache::None)
                }
            }
        };
        Ok((Tensor::new(out_shape, out)?, cache))
    }

    /// Running-statistics update for BatchNorm during training.
    pub(crate) fn update_running_stats(&mut self, x: &Tensor<T>) {
        if let LayerKind::BatchNorm { momentum, .. } = self.kind {
            let c = *self.input_shape.last().expect("bn shape");
            let (mean, var) = channel_moments(x.data(), c);
            let mo = T::of(momentum);
            for ch in 0..c {
                let mm = &mut self.params[2].data_mut()[ch];
                *mm = mo * *mm + (T::one() - mo) * mean[ch];
                let mv = &mut self.params[3].data_mut()[ch];
                *mv = mo * *mv + (T::one() - mo) * var[ch];
            }
        }
    }

    /// Backward pass. Returns the input gradient (when requested) and gradients for
    /// the leading `trainable_params()` parameter tensors.
    pub(crate) fn backward(
        &self,
        cache: &Cache<T>,
        grad: &Tensor<T>,
        want_input_grad: bool,
        want_param_grads: bool,
    ) -> (Option<Tensor<T>>, Vec<Tensor<T>>) {
        let n = grad.rows();
        let gd = grad.data();
        let mut in_shape = vec![n];
        in_shape.extend_from_slice(&self.input_shape);
        let in_len: usize = in_shape.iter().product();
        let wrap = |v: Vec<T>| Tensor::new(in_shape.clone(), v).expect("gradient shape");
        match (&self.kind, cache) {
            (LayerKind::Dense { units }, Cache::Input(x)) => {
                let m = self.input_shape[0];
                let mut pg = vec![];
                if want_param_grads {
                    let mut dw = vec![T::zero(); m * units];
                    gemm(
                        x.data(),
                        (n, m),
                        Trans::Yes,
                        gd,
                        (n, *units),
                        Trans::No,
                        T::zero(),
                        &mut dw,
                    );
                    pg.push(Tensor::new(vec![m, *units], dw).expect("dw"));
                    pg.push(Tensor::new(vec![*units], column_sums(gd, *units)).expect("db"));
                }
                let dx = want_input_grad.then(|| {
                    let mut dx = vec![T::zero(); n * m];
                    gemm(
                        gd,
                        (n, *units),
                        Trans::No,
                        self.params[0].data(),
                        (m, *units),
                        Trans::Yes,
                        T::zero(),
                        &mut dx,
                    );
                    wrap(dx)
                });
                (dx, pg)
            }
            (LayerKind::Conv2D { filters, .. }, Cache::Cols(cols)) => {
                let g = self.geometry();
                let (pos, m) = (g.positions(), g.patch_len());
                let rows = n * pos;
                let mut pg = vec![];
                if want_param_grads {
                    let mut dw = vec![T::zero(); m * filters];
                    gemm(
                        cols,
                        (rows, m),
                        Trans::Yes,
                        gd,
                        (rows, *filters),
                        Trans::No,
                        T::zero(),
                        &mut dw,
                    );
                    pg.push(Tensor::new(self.params[0].shape().to_vec(), dw).expect("dw"));
                    pg.push(Tensor::new(vec![*filters], column_sums(gd, *filters)).expect("db"));
                }
                let dx = want_input_grad.then(|| {
                    let mut dcols = vec![T::zero(); rows * m];
                    gemm(
                        gd,
                        (rows, *filters),
                        Trans::No,
                        self.params[0].data(),
                        (m, *filters),
                        Trans::Yes,
                        T::zero(),
                        &mut dcols,
                    );
                    let mut dx = vec![T::zero(); in_len];
                    for (dc, d) in dcols.chunks(pos * m).zip(dx.chunks_mut(g.input_len())) {
                        col2im_add(dc, &g, d);
                    }
                    wrap(dx)
                });
                (dx, pg)
            }
            (LayerKind::MaxPool2D { .. }, Cache::ArgMax(idx)) => {
                let mut dx = vec![T::zero(); in_len];
                for (&at, &g) in idx.iter().zip(gd) {
                    dx[at] += g;
                }
                (Some(wrap(dx)), vec![])
            }
            (LayerKind::AvgPool2D { .. }, _) => {
                let g = self.geometry();
                let per_in = g.input_len();
                let per_out = g.positions() * g.channels;
                let inv_k = T::one() / T::of_usize(g.kernel_h * g.kernel_w);
                let mut dx = vec![T::zero(); in_len];
                for s in 0..n {
                    for u in 0..g.out_h {
                        for v in 0..g.out_w {
                            for c in 0..g.channels {
                                let go =
                                    gd[s * per_out + (u * g.out_w + v) * g.channels + c] * inv_k;
                                for i in 0..g.kernel_h {
                                    for j in 0..g.kernel_w {
                                        let at =
                                            ((u * g.stride_h + i) * g.in_w + v * g.stride_w + j)
                                                * g.channels
                                                + c;
                                        dx[s * per_in + at] += go;
                                    }
                                }
                            }
                        }
                    }
                }
                (Some(wrap(dx)), vec![])
            }
            (LayerKind::PolyAct { degree }, Cache::Input(x)) => {
                let c = self.params[0].data();
                let mut pg = vec![];
                if want_param_grads {
                    let mut dc = vec![T::zero(); degree + 1];
                    for (&xv, &g) in x.data().iter().zip(gd) {
                        let mut p = T::one();
                        for d in dc.iter_mut() {
                            *d += g * p;
                            p *= xv;
                        }
                    }
                    pg.push(Tensor::new(vec![degree + 1], dc).expect("dc"));
                }
                let dx = want_input_grad.then(|| {
                    let deriv: Vec<T> = c
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, &ck)| ck * T::of_usize(k))
                        .collect();
                    wrap(
                        x.data()
                            .iter()
                            .zip(gd)
                            .map(|(&xv, &g)| g * horner(&deriv, xv))
                            .collect(),
                    )
                });
                (dx, pg)
            }
            (LayerKind::SquareAct, Cache::Input(x)) => {
                let two = T::of(2.0);
                (
                    Some(wrap(
                        x.data()
                            .iter()
                            .zip(gd)
                            .map(|(&xv, &g)| two * xv * g)
                            .collect(),
                    )),
                    vec![],
                )
            }
            (LayerKind::Relu, Cache::Input(x)) => (
                Some(wrap(
                    x.data()
                        .iter()
                        .zip(gd)
                        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
                        .collect(),
                )),
                vec![],
            ),
            (LayerKind::Sigmoid, Cache::Output(y)) => (
                Some(wrap(
                    y.data()
                        .iter()
                        .zip(gd)
                        .map(|(&yv, &g)| g * yv * (T::one() - yv))
                        .collect(),
                )),
                vec![],
            ),
            (LayerKind::Softmax, Cache::Output(y)) => {
                let w = *self.output_shape.last().expect("softmax shape");
                let mut dx = vec![T::zero(); in_len];
                for ((yr, gr), dr) in y.data().chunks(w).zip(gd.chunks(w)).zip(dx.chunks_mut(w)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (g - dot);
                    }
                }
                (Some(wrap(dx)), vec![])
            }
            (LayerKind::Flatten, _) => (Some(wrap(gd.to_vec())), vec![]),
            (LayerKind::BatchNorm { .. }, Cache::Norm { xhat, inv_std }) => {
                let c = inv_std.len();
                let gamma = self.params[0].data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (i, (&g, &h)) in gd.iter().zip(xhat).enumerate() {
                    dgamma[i % c] += g * h;
                    dbeta[i % c] += g;
                }
                let count = T::of_usize(gd.len() / c);
                let dx = want_input_grad.then(|| {
                    // dxhat = g * gamma; sum(dxhat) = gamma * dbeta; sum(dxhat * xhat) = gamma * dgamma
                    wrap(
                        gd.iter()
                            .zip(xhat)
                            .enumerate()
                            .map(|(i, (&g, &h))| {
                                let ch = i % c;
                                gamma[ch] * inv_std[ch] / count
                                    * (count * g - dbeta[ch] - h * dgamma[ch])
                            })
                            .collect(),
                    )
                });
                let pg = if want_param_grads {
                    vec![
                        Tensor::new(vec![c], dgamma).expect("dgamma"),
                        Tensor::new(vec![c], dbeta).expect("dbeta"),
                    ]
                } else {
                    vec![]
                };
                (dx, pg)
            }
            (LayerKind::BatchNorm { .. }, Cache::None) => (Some(wrap(gd.to_vec())), vec![]),
            (LayerKind::Dropout { .. }, Cache::Mask(mask)) => (
                Some(wrap(gd.iter().zip(mask).map(|(&g, &m)| g * m).collect())),
                vec![],
            ),
            (LayerKind::Dropout { .. }, _) => (Some(wrap(gd.to_vec())), vec![]),
            (kind, _) => unreachable!("missing training cache for {}", kind.name()),
        }
    }
}

/// Evaluates `sum_k c[k] x^k`.
#[inline]
pub(crate) fn horner<T: Scalar>(c: &[T], x: T) -> T {
    c.iter().rev().fold(T::zero(), |acc, &ck| acc * x + ck)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn column_sums<T: Scalar>(data: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in data.chunks(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn channel_moments<T: Scalar>(data: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let count = T::of_usize(data.len() / c);
    let mut mean = column_sums(data, c);
    for m in mean.iter_mut() {
        *m /= count;
    }
    let mut var = vec![T::zero(); c];
    for row in data.chunks(c) {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    for v in var.iter_mut() {
        *v /= count;
    }
    (mean, var)
}

/// Forward pass of a single layer on one sample (shape == input shape) or on a
/// batch (shape == `[n] ++ input shape`), in inference mode.
pub fn layer_forward<T: Scalar>(layer: &Layer<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    layer_forward_at(layer, input, 0)
}

pub(crate) fn layer_forward_at<T: Scalar>(
    layer: &Layer<T>,
    input: &Tensor<T>,
    index: usize,
) -> Result<Tensor<T>> {
    if input.shape() == layer.input_shape() {
        let mut batched = vec![1];
        batched.extend_from_slice(input.shape());
        let x = input.clone().reshape(&batched)?;
        let (y, _) = layer.forward_batch(&x, false, false, None)?;
        return y.reshape(layer.output_shape());
    }
    if input.rank() != layer.input_shape().len() + 1 || &input.shape()[1..] != layer.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: index,
            expected: layer.input_shape().to_vec(),
            actual: input.shape().to_vec(),
        });
    }
    Ok(layer.forward_batch(input, false, false, None)?.0)
}
