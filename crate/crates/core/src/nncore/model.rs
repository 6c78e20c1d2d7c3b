use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::Padding;
use super::layer::{layer_forward_at, Cache, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered stack of layers over a fixed per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f64> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    pub metadata: BTreeMap<String, String>,
}

impl<T: Scalar> Model<T> {
    /// A model with no layers: the identity on `input_shape`.
    pub fn empty(input_shape: &[usize]) -> Self {
        Model {
            input_shape: input_shape.to_vec(),
            layers: vec![],
            metadata: BTreeMap::new(),
        }
    }

    /// Assembles a model from layers, checking that consecutive shapes agree.
    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    layer: i,
                    expected: layer.input_shape().to_vec(),
                    actual: shape,
                });
            }
            shape = layer.output_shape().to_vec();
        }
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layers,
            metadata: BTreeMap::new(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map_or(self.input_shape.as_slice(), |l| l.output_shape())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer<T> {
        &mut self.layers[index]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Index of the output layer: the last Dense or Conv2D layer.
    pub fn output_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.kind.is_linear())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_he_friendly(&self) -> bool {
        self.layers.iter().all(|l| l.kind.is_he_friendly())
    }

    /// The same model with every parameter converted to `U`.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                kind: l.kind.clone(),
                params: l.params.iter().map(Tensor::cast).collect(),
                trainable: l.trainable,
                input_shape: l.input_shape().to_vec(),
                output_shape: l.output_shape().to_vec(),
            })
            .collect();
        Model {
            input_shape: self.input_shape.clone(),
            layers,
            metadata: self.metadata.clone(),
        }
    }

    /// Inference-mode forward pass over a batch `(n, input_shape...)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_range(x, self.layers.len())
    }

    /// Forward pass through the first `upto` layers.
    pub fn forward_range(&self, x: &Tensor<T>, upto: usize) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut cur = x.clone();
        for (i, layer) in self.layers[..upto].iter().enumerate() {
            cur = layer_forward_at(layer, &cur, i)?;
        }
        Ok(cur)
    }

    pub(crate) fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                actual: x.shape().get(1..).unwrap_or_default().to_vec(),
            });
        }
        Ok(())
    }

    /// Training-mode forward through the first `upto` layers, keeping caches from
    /// layer `cache_from` onward.
    pub(crate) fn forward_train(
        &mut self,
        x: &Tensor<T>,
        upto: usize,
        cache_from: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(upto);
        let mut cur = x.clone();
        for i in 0..upto {
            let layer = &mut self.layers[i];
            if matches!(layer.kind, LayerKind::BatchNorm { .. }) {
                layer.update_running_stats(&cur);
            }
            let (y, cache) = layer.forward_batch(&cur, true, i >= cache_from, Some(rng))?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, caches))
    }
}

/// Fluent construction of a model with seeded initialization.
///
/// Weights are He-uniform when the next nonlinearity is ReLU, Glorot-uniform
/// otherwise; biases start at zero; polynomial coefficients uniform in
/// `[-poly_init, poly_init]`; batch-norm starts as the identity.
#[derive(Clone, Debug)]
pub struct ModelBuilder {
    input_shape: Vec<usize>,
    kinds: Vec<LayerKind>,
    poly_init: f64,
}

impl ModelBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        ModelBuilder {
            input_shape: input_shape.to_vec(),
            kinds: vec![],
            poly_init: 0.01,
        }
    }

    pub fn layer(mut self, kind: LayerKind) -> Self {
        self.kinds.push(kind);
        self
    }

    pub fn dense(self, units: usize) -> Self {
        self.layer(LayerKind::Dense { units })
    }

    pub fn conv(self, filters: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        self.layer(LayerKind::Conv2D {
            filters,
            kernel: [kernel, kernel],
            stride: [stride, stride],
            padding,
        })
    }

    pub fn max_pool(self, window: usize) -> Self {
        self.layer(LayerKind::MaxPool2D {
            window: [window, window],
            stride: [window, window],
        })
    }

    pub fn avg_pool(self, window: usize) -> Self {
        self.layer(LayerKind::AvgPool2D {
            window: [window, window],
            stride: [window, window],
        })
    }

    pub fn relu(self) -> Self {
        self.layer(LayerKind::Relu)
    }

    pub fn poly(self, degree: usize) -> Self {
        self.layer(LayerKind::PolyAct { degree })
    }

    pub fn square(self) -> Self {
        self.layer(LayerKind::SquareAct)
    }

    pub fn flatten(self) -> Self {
        self.layer(LayerKind::Flatten)
    }

    pub fn softmax(self) -> Self {
        self.layer(LayerKind::Softmax)
    }

    pub fn poly_init(mut self, scale: f64) -> Self {
        self.poly_init = scale;
        self
    }

    pub fn build<T: Scalar>(self, seed: u64) -> Result<Model<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.kinds.len());
        for (i, kind) in self.kinds.iter().enumerate() {
            let next_is_relu = self.kinds[i + 1..]
                .iter()
                .find(|k| !matches!(k, LayerKind::BatchNorm { .. } | LayerKind::Dropout { .. }))
                .is_some_and(|k| matches!(k, LayerKind::Relu));
            let params = init_params(kind, &shape, next_is_relu, self.poly_init, &mut rng)?;
            let layer = Layer::with_params(kind.clone(), &shape, params)?;
            shape = layer.output_shape().to_vec();
            layers.push(layer);
        }
        Model::from_layers(&self.input_shape, layers)
    }
}

pub(crate) fn init_params<T: Scalar>(
    kind: &LayerKind,
    input: &[usize],
    he: bool,
    poly_init: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor<T>>> {
    let shapes = kind.param_shapes(input)?;
    Ok(match kind {
        LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => {
            let wshape = &shapes[0];
            let fan_out = *wshape.last().expect("weight rank");
            let count: usize = wshape.iter().product();
            let fan_in = count / fan_out;
            let limit = if he {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let w = (0..count)
                .map(|_| T::of(rng.gen_range(-limit..limit)))
                .collect();
            vec![Tensor::new(wshape.clone(), w)?, Tensor::zeros(&shapes[1])]
        }
        LayerKind::PolyAct { .. } => {
            let n = shapes[0][0];
            let c = (0..n)
                .map(|_| {
                    T::of(if poly_init > 0.0 {
                        rng.gen_range(-poly_init..=poly_init)
                    } else {
                        0.0
                    })
                })
                .collect();
            vec![Tensor::new(shapes[0].clone(), c)?]
        }
        LayerKind::BatchNorm { .. } => vec![
            Tensor::full(&shapes[0], T::one()),
            Tensor::zeros(&shapes[1]),
            Tensor::zeros(&shapes[2]),
            Tensor::full(&shapes[3], T::one()),
        ],
        _ => vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_resolves_lenet_shapes() {
        let m: Model<f64> = ModelBuilder::new(&[28, 28, 1])
            .conv(6, 5, 1, Padding::Same)
            .relu()
            .max_pool(2)
            .conv(16, 5, 1, Padding::Valid)
            .relu()
            .max_pool(2)
            .flatten()
            .dense(10)
            .build(1)
            .unwrap();
        assert_eq!(m.layers()[0].output_shape(), &[28, 28, 6]);
        assert_eq!(m.layers()[3].output_shape(), &[10, 10, 16]);
        assert_eq!(m.output_shape(), &[10]);
        assert_eq!(m.output_layer(), Some(7));
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let a = Layer::<f64>::with_params(LayerKind::Relu, &[4], vec![]).unwrap();
        let b = Layer::<f64>::with_params(LayerKind::Relu, &[5], vec![]).unwrap();
        assert!(matches!(
            Model::from_layers(&[4], vec![a, b]),
            Err(Error::ShapeMismatch { layer: 1, .. })
        ));
    }

    #[test]
    fn forward_is_deterministic_for_a_seed() {
        let build = || -> Model<f64> {
            ModelBuilder::new(&[6])
                .dense(5)
                .relu()
                .dense(3)
                .build(42)
                .unwrap()
        };
        let x = Tensor::from_f64(
            &[2, 6],
            &(0..12).map(|v| v as f64 / 7.0).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(build().forward(&x).unwrap(), build().forward(&x).unwrap());
    }

    #[test]
    fn empty_model_is_identity() {
        let m = Model::<f64>::empty(&[3]);
        let x = Tensor::from_f64(&[1, 3], &[1., 2., 3.]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), x);
    }
}
