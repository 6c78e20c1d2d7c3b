//! Resolves `--dataset` values into train/validation/test splits.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mofhei::datasets::{
    find_file, load_egss_csv, load_mnist_dir, synthetic, Dataset, Splits, SyntheticKind,
    DATA_DIR_ENV,
};

use crate::CliError;

pub const EGSS_CSV: &str = "Data_for_UCI_named.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetSpec {
    Mnist,
    Egss,
    Synthetic(SyntheticKind),
}

impl FromStr for DatasetSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "mnist" => Ok(DatasetSpec::Mnist),
            "egss" => Ok(DatasetSpec::Egss),
            _ => {
                let kind = s
                    .strip_prefix("synthetic:")
                    .ok_or_else(|| CliError::args(format!("unknown dataset {s:?}")))?;
                serde_json::from_value(serde_json::Value::String(kind.into()))
                    .map(DatasetSpec::Synthetic)
                    .map_err(|_| CliError::args(format!("unknown synthetic dataset {kind:?}")))
            }
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Mnist => f.write_str("mnist"),
            DatasetSpec::Egss => f.write_str("egss"),
            DatasetSpec::Synthetic(k) => {
                let name = serde_json::to_value(k).expect("kind serializes");
                write!(f, "synthetic:{}", name.as_str().unwrap_or_default())
            }
        }
    }
}

/// What the model learns from the inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Reconstruction,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Reconstruction => "reconstruction",
        }
    }

    pub fn parse(name: &str) -> Option<Task> {
        [Task::Classification, Task::Reconstruction]
            .into_iter()
            .find(|t| t.name() == name)
    }
}

/// `$MOFHEI_DATA_DIR`, or `data` under the working directory.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

fn first_existing(candidates: &[PathBuf], what: &str) -> Result<PathBuf, CliError> {
    candidates
        .iter()
        .find(|p| p.exists())
        .cloned()
        .ok_or_else(|| {
            CliError::args(format!(
                "{what} not found; looked in {}",
                candidates
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
}

fn mnist_root(dir: &Path) -> Result<PathBuf, CliError> {
    let candidates = [dir.join("mnist"), dir.to_path_buf()];
    let root = candidates
        .iter()
        .find(|d| find_file(d, "train-images-idx3-ubyte").is_some());
    root.cloned().ok_or_else(|| {
        CliError::args(format!(
            "MNIST IDX files not found under {} (set {DATA_DIR_ENV})",
            dir.display()
        ))
    })
}

/// Loads and splits a dataset. `samples` sizes synthetic data; `limit` caps each split.
pub fn load(
    spec: DatasetSpec,
    task: Task,
    seed: u64,
    samples: usize,
    limit: Option<usize>,
) -> Result<Splits<f64>, CliError> {
    let dir = data_dir();
    let splits = match spec {
        DatasetSpec::Mnist => load_mnist_dir(mnist_root(&dir)?, seed)?,
        DatasetSpec::Egss => {
            let csv = first_existing(
                &[dir.join("egss").join(EGSS_CSV), dir.join(EGSS_CSV)],
                "EGSS CSV",
            )?;
            load_egss_csv(csv, seed)?.splits
        }
        DatasetSpec::Synthetic(kind) => {
            let d: Dataset<f64> = synthetic(kind, samples, seed)?;
            let (val, test) = (samples / 10, samples / 10);
            let mut parts = d
                .split(&[samples - val - test, val, test], seed)?
                .into_iter();
            let mut next = || parts.next().expect("three parts");
            Splits {
                train: next(),
                val: next(),
                test: next(),
            }
        }
    };
    let cap = |d: Dataset<f64>| match limit {
        Some(n) => d.head(n),
        None => d,
    };
    let splits = Splits {
        train: cap(splits.train),
        val: cap(splits.val),
        test: cap(splits.test),
    };
    match task {
        Task::Classification => Ok(splits),
        Task::Reconstruction => {
            let rec = |d: Dataset<f64>| Dataset::reconstruction(d.flatten_inputs()?.x);
            Ok(Splits {
                train: rec(splits.train)?,
                val: rec(splits.val)?,
                test: rec(splits.test)?,
            })
        }
    }
}
