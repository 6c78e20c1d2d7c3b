use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Small generated datasets for smoke tests and demos.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Points in the unit square labelled by which diagonal quadrant pair they fall in; 2 classes.
    Xor,
    /// Regression target `x . w + 0.5` over 4 inputs in `[-1, 1]`.
    Linear,
    /// Three well separated clusters in the plane; 3 classes.
    Blobs,
    /// 28x28x1 images: a bright 6x6 patch on a noisy background whose position encodes the class; 10 classes.
    MnistLike,
}

pub fn synthetic<T: Scalar>(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_t = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    match kind {
        SyntheticKind::Xor => {
            let mut x = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                x.extend([a, b]);
                labels.push(usize::from((a > 0.5) != (b > 0.5)));
            }
            Dataset::new(Tensor::new(vec![n, 2], to_t(x))?, one_hot(&labels, 2))
        }
        SyntheticKind::Linear => {
            const W: [f64; 4] = [0.8, -0.5, 0.3, 1.2];
            let mut x = Vec::with_capacity(4 * n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                y.push(row.iter().zip(W).map(|(a, w)| a * w).sum::<f64>() + 0.5);
                x.extend(row);
            }
            Dataset::new(
                Tensor::new(vec![n, 4], to_t(x))?,
                Tensor::new(vec![n, 1], to_t(y))?,
            )
        }
        SyntheticKind::Blobs => {
            const CENTERS: [[f64; 2]; 3] = [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]];
            let mut x = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % 3;
                x.extend(CENTERS[c].iter().map(|m| m + rng.gen_range(-0.7..0.7)));
                labels.push(c);
            }
            Dataset::new(Tensor::new(vec![n, 2], to_t(x))?, one_hot(&labels, 3))
        }
        SyntheticKind::MnistLike => {
            let mut x = Vec::with_capacity(784 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % 10;
                let (top, left) = (
                    2 + (c / 5) * 14 + rng.gen_range(0..3),
                    1 + (c % 5) * 5 + rng.gen_range(0..2),
                );
                for r in 0..28 {
                    for col in 0..28 {
                        let inside = (top..top + 6).contains(&r)
                            && (left..(left + 6).min(28)).contains(&col);
                        let base = if inside { 0.8 } else { 0.0 };
                        x.push(base + rng.gen_range(0.0..0.2));
                    }
                }
                labels.push(c);
            }
            Dataset::new(
                Tensor::new(vec![n, 28, 28, 1], to_t(x))?,
                one_hot(&labels, 10),
            )
        }
    }
}
