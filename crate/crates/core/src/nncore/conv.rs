//! Geometry and patch extraction for channel-last 2-D convolution and pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Zero padding giving an output of `ceil(in / stride)` per spatial axis.
    Same,
}

/// Resolved shapes of one windowed (convolution or pooling) layer for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl WindowGeometry {
    pub fn new(
        input: &[usize],
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    ) -> Result<Self> {
        let &[in_h, in_w, channels] = input else {
            return Err(Error::InvalidShape(format!(
                "windowed layer expects (H, W, C) input, got {input:?}"
            )));
        };
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        let axis = |n: usize, k: usize, s: usize| -> Result<(usize, usize)> {
            match padding {
                Padding::Valid => {
                    if n < k {
                        return Err(Error::InvalidShape(format!(
                            "window {k} larger than input extent {n}"
                        )));
                    }
                    Ok(((n - k) / s + 1, 0))
                }
                Padding::Same => {
                    let out = n.div_ceil(s);
                    let total = ((out - 1) * s + k).saturating_sub(n);
                    Ok((out, total / 2))
                }
            }
        };
        let (out_h, pad_top) = axis(in_h, kernel[0], stride[0])?;
        let (out_w, pad_left) = axis(in_w, kernel[1], stride[1])?;
        Ok(WindowGeometry {
            in_h,
            in_w,
            channels,
            kernel_h: kernel[0],
            kernel_w: kernel[1],
            stride_h: stride[0],
            stride_w: stride[1],
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    /// Values per flattened patch: `I * J * K`.
    pub fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    /// Output spatial positions: `U * V`.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.channels
    }

    /// Input offset read by patch column `m` at output position `(u, v)`, or `None`
    /// when the cell falls in the zero padding.
    #[inline]
    pub fn source(&self, u: usize, v: usize, m: usize) -> Option<usize> {
        let k = m % self.channels;
        let ij = m / self.channels;
        let j = ij % self.kernel_w;
        let i = ij / self.kernel_w;
        let h = (u * self.stride_h + i).checked_sub(self.pad_top)?;
        let w = (v * self.stride_w + j).checked_sub(self.pad_left)?;
        if h >= self.in_h || w >= self.in_w {
            return None;
        }
        Some((h * self.in_w + w) * self.channels + k)
    }
}

/// Writes the `(U*V) x (I*J*K)` patch matrix of one sample into `out`.
///
/// Rows enumerate output positions row-major; columns follow `(i, j, k)` row-major order.
pub fn im2col_into<T: Scalar>(x: &[T], g: &WindowGeometry, out: &mut [T]) {
    let m = g.patch_len();
    debug_assert_eq!(x.len(), g.input_len());
    debug_assert_eq!(out.len(), g.positions() * m);
    let row_len = g.kernel_w * g.channels;
    for u in 0..g.out_h {
        for v in 0..g.out_w {
            let row = &mut out[(u * g.out_w + v) * m..(u * g.out_w + v + 1) * m];
            for i in 0..g.kernel_h {
                let dst = &mut row[i * row_len..(i + 1) * row_len];
                let h = (u * g.stride_h + i) as isize - g.pad_top as isize;
                if h < 0 || h as usize >= g.in_h {
                    dst.fill(T::zero());
                    continue;
                }
                for j in 0..g.kernel_w {
                    let cell = &mut dst[j * g.channels..(j + 1) * g.channels];
                    let w = (v * g.stride_w + j) as isize - g.pad_left as isize;
                    if w < 0 || w as usize >= g.in_w {
                        cell.fill(T::zero());
                    } else {
                        let src = (h as usize * g.in_w + w as usize) * g.channels;
                        cell.copy_from_slice(&x[src..src + g.channels]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: accumulates patch gradients back onto the input.
pub fn col2im_add<T: Scalar>(cols: &[T], g: &WindowGeometry, dx: &mut [T]) {
    let m = g.patch_len();
    let row_len = g.kernel_w * g.channels;
    for u in 0..g.out_h {
        for v in 0..g.out_w {
            let row = &cols[(u * g.out_w + v) * m..(u * g.out_w + v + 1) * m];
            for i in 0..g.kernel_h {
                let h = (u * g.stride_h + i) as isize - g.pad_top as isize;
                if h < 0 || h as usize >= g.in_h {
                    continue;
                }
                for j in 0..g.kernel_w {
                    let w = (v * g.stride_w + j) as isize - g.pad_left as isize;
                    if w < 0 || w as usize >= g.in_w {
                        continue;
                    }
                    let src =
                        &row[i * row_len + j * g.channels..i * row_len + (j + 1) * g.channels];
                    let dst = (h as usize * g.in_w + w as usize) * g.channels;
                    for (d, s) in dx[dst..dst + g.channels].iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_keeps_ceil_extent() {
        let g = WindowGeometry::new(&[28, 28, 1], [5, 5], [1, 1], Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (28, 28, 2, 2));
        let g = WindowGeometry::new(&[7, 8, 2], [3, 3], [2, 2], Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (4, 4));
        let g = WindowGeometry::new(&[14, 14, 6], [5, 5], [1, 1], Padding::Valid).unwrap();
        assert_eq!((g.out_h, g.out_w, g.patch_len()), (10, 10, 150));
    }

    #[test]
    fn valid_window_larger_than_input_is_rejected() {
        assert!(WindowGeometry::new(&[2, 2, 1], [3, 3], [1, 1], Padding::Valid).is_err());
    }

    #[test]
    fn im2col_agrees_with_source_map() {
        let g = WindowGeometry::new(&[5, 4, 3], [3, 2], [2, 1], Padding::Same).unwrap();
        let x: Vec<f64> = (0..g.input_len()).map(|v| v as f64 + 1.0).collect();
        let mut cols = vec![0.0; g.positions() * g.patch_len()];
        im2col_into(&x, &g, &mut cols);
        for u in 0..g.out_h {
            for v in 0..g.out_w {
                for m in 0..g.patch_len() {
                    let want = g.source(u, v, m).map_or(0.0, |s| x[s]);
                    assert_eq!(cols[(u * g.out_w + v) * g.patch_len() + m], want);
                }
            }
        }
    }
}
