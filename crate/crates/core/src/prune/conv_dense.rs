use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{im2col_into, Layer, LayerKind, WindowGeometry};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dimensions of a convolution seen as a dense product `X (N x M) * W (M x F)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDenseShapes {
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// `I * J * K`.
    pub m: usize,
    /// `U * V`.
    pub n: usize,
}

fn geometry<T: Scalar>(conv: &Layer<T>) -> Result<(WindowGeometry, usize)> {
    match conv.kind {
        LayerKind::Conv2D { filters, .. } => Ok((
            conv.kind
                .window_geometry(conv.input_shape())?
                .expect("conv geometry"),
            filters,
        )),
        _ => Err(Error::WrongLayerKind {
            index: 0,
            found: conv.kind.name().into(),
            expected: "Conv2D",
        }),
    }
}

/// The kernel reshaped to `(M, F)`, rows in `(i, j, k)` order, one column per filter.
pub fn conv_to_dense_view<T: Scalar>(conv: &Layer<T>) -> Result<(Tensor<T>, ConvDenseShapes)> {
    let (g, filters) = geometry(conv)?;
    let shapes = ConvDenseShapes {
        filters,
        kernel_h: g.kernel_h,
        kernel_w: g.kernel_w,
        channels: g.channels,
        out_h: g.out_h,
        out_w: g.out_w,
        m: g.patch_len(),
        n: g.positions(),
    };
    let w = conv.params[0].clone().reshape(&[shapes.m, filters])?;
    Ok((w, shapes))
}

/// Patch matrix `(N, M)` of one input sample shaped like the layer input.
pub fn im2col<T: Scalar>(input: &Tensor<T>, conv: &Layer<T>) -> Result<Tensor<T>> {
    let (g, _) = geometry(conv)?;
    if input.shape() != conv.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: conv.input_shape().to_vec(),
            actual: input.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); g.positions() * g.patch_len()];
    im2col_into(input.data(), &g, &mut out);
    Tensor::new(vec![g.positions(), g.patch_len()], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Padding;

    #[test]
    fn example_dimensions() {
        let kind = LayerKind::Conv2D {
            filters: 3,
            kernel: [2, 2],
            stride: [1, 1],
            padding: Padding::Valid,
        };
        let shapes_in = kind.param_shapes(&[3, 3, 4]).unwrap();
        let params = shapes_in.iter().map(|s| Tensor::<f64>::zeros(s)).collect();
        let conv = Layer::with_params(kind, &[3, 3, 4], params).unwrap();
        let (w, s) = conv_to_dense_view(&conv).unwrap();
        assert_eq!((s.m, s.n), (16, 4));
        assert_eq!(w.shape(), &[16, 3]);
        let x = im2col(&Tensor::zeros(&[3, 3, 4]), &conv).unwrap();
        assert_eq!(x.shape(), &[4, 16]);
    }

    #[test]
    fn pointwise_single_filter() {
        let kind = LayerKind::Conv2D {
            filters: 1,
            kernel: [1, 1],
            stride: [1, 1],
            padding: Padding::Valid,
        };
        let conv = Layer::with_params(
            kind,
            &[2, 3, 1],
            vec![
                Tensor::<f64>::from_f64(&[1, 1, 1, 1], &[2.0]).unwrap(),
                Tensor::zeros(&[1]),
            ],
        )
        .unwrap();
        let (w, _) = conv_to_dense_view(&conv).unwrap();
        assert_eq!(w.shape(), &[1, 1]);
        let x = Tensor::from_f64(&[2, 3, 1], &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(
            im2col(&x, &conv).unwrap().into_data(),
            vec![1., 2., 3., 4., 5., 6.]
        );
        assert!(im2col(&Tensor::zeros(&[3, 2, 1]), &conv).is_err());
        let dense = Layer::<f64>::with_params(LayerKind::Relu, &[2], vec![]).unwrap();
        assert!(conv_to_dense_view(&dense).is_err());
    }
}
