//! Dataset container, loaders and deterministic splits.

mod egss;
mod idx;
mod synthetic;

pub use egss::{load_egss_csv, load_egss_csv_with, EgssSplits, MinMaxScaler, EGSS_FEATURES};
pub use idx::{load_mnist_idx, normalize_pixels, read_idx_images, read_idx_labels};
pub use synthetic::{synthetic, SyntheticKind};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Environment variable naming the directory that holds downloaded datasets.
pub const DATA_DIR_ENV: &str = "MOFHEI_DATA_DIR";

/// Inputs `(n, ...)` paired with targets `(n, k)`: one-hot rows for classification,
/// reconstruction targets for regression.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T = f64> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Tensor<T>, y: Tensor<T>) -> Result<Self> {
        if x.rows() != y.rows() || x.rank() < 2 || y.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "dataset inputs {:?} and targets {:?} do not pair up",
                x.shape(),
                y.shape()
            )));
        }
        Ok(Dataset { x, y })
    }

    /// Autoencoder dataset: targets are the flattened inputs.
    pub fn reconstruction(x: Tensor<T>) -> Result<Self> {
        let n = x.rows();
        let w = x.row_len();
        let y = x.clone().reshape(&[n, w])?;
        Dataset::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
        }
    }

    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded shuffle, then consecutive chunks of the requested sizes.
    pub fn split(&self, sizes: &[usize], seed: u64) -> Result<Vec<Self>> {
        let total: usize = sizes.iter().sum();
        if total > self.len() {
            return Err(Error::config(format!(
                "split sizes {sizes:?} exceed dataset of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&s| {
                let part = self.subset(&order[start..start + s]);
                start += s;
                part
            })
            .collect())
    }

    /// Flattens each sample into a vector, e.g. for fully connected autoencoders.
    pub fn flatten_inputs(self) -> Result<Self> {
        let (n, w) = (self.x.rows(), self.x.row_len());
        Ok(Dataset {
            x: self.x.reshape(&[n, w])?,
            y: self.y,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            x: self.x.cast(),
            y: self.y.cast(),
        }
    }
}

/// Train / validation / test partition.
#[derive(Clone, Debug)]
pub struct Splits<T = f64> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
}

/// One-hot encodes integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut y = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        y.data_mut()[i * classes + l] = T::one();
    }
    y
}

/// MNIST training files split into the 57K/3K train/validation partition (first
/// 57K / last 3K after a seeded shuffle) plus the test files as test split.
pub fn mnist_splits<T: Scalar>(
    train: Dataset<T>,
    test: Dataset<T>,
    seed: u64,
) -> Result<Splits<T>> {
    let val = train.len() / 20;
    let mut parts = train.split(&[train.len() - val, val], seed)?;
    let val = parts.pop().expect("two parts");
    let train = parts.pop().expect("two parts");
    Ok(Splits { train, val, test })
}

/// `dir/stem`, or its gzipped form, whichever exists.
pub fn find_file(dir: impl AsRef<Path>, stem: &str) -> Option<PathBuf> {
    let plain = dir.as_ref().join(stem);
    let gz = dir.as_ref().join(format!("{stem}.gz"));
    [plain, gz].into_iter().find(|p| p.is_file())
}

/// Loads the four standard MNIST IDX files from `dir` and splits them with
/// [`mnist_splits`].
pub fn load_mnist_dir<T: Scalar>(dir: impl AsRef<Path>, seed: u64) -> Result<Splits<T>> {
    let dir = dir.as_ref();
    let file = |stem: &str| {
        find_file(dir, stem).ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{stem} not found in {}", dir.display()),
            ))
        })
    };
    let train = load_mnist_idx(
        file("train-images-idx3-ubyte")?,
        file("train-labels-idx1-ubyte")?,
    )?;
    let test = load_mnist_idx(
        file("t10k-images-idx3-ubyte")?,
        file("t10k-labels-idx1-ubyte")?,
    )?;
    mnist_splits(train, test, seed)
}
