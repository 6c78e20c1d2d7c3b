use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{one_hot, Dataset, Splits};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Predictor columns of the electrical grid stability data; `stab` and `stabf` are targets.
pub const EGSS_FEATURES: [&str; 12] = [
    "tau1", "tau2", "tau3", "tau4", "p1", "p2", "p3", "p4", "g1", "g2", "g3", "g4",
];

/// Per-column linear scaling into `[0, 1]`, fit on one split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Zero-range columns map to 0.
    pub fn apply(&self, v: f64, column: usize) -> f64 {
        let range = self.max[column] - self.min[column];
        if range > 0.0 {
            (v - self.min[column]) / range
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct EgssSplits<T = f64> {
    pub splits: Splits<T>,
    pub scaler: MinMaxScaler,
}

/// Loads the grid-stability CSV with the 8550/450/1000 split (scaled proportionally
/// for other row counts).
pub fn load_egss_csv<T: Scalar>(path: impl AsRef<Path>, seed: u64) -> Result<EgssSplits<T>> {
    let rdr = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Csv {
        row: 0,
        message: e.to_string(),
    })?;
    load_egss_csv_with(rdr, seed)
}

pub fn load_egss_csv_with<T: Scalar, R: std::io::Read>(
    mut rdr: csv::Reader<R>,
    seed: u64,
) -> Result<EgssSplits<T>> {
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Csv {
                row: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let feature_cols = EGSS_FEATURES
        .iter()
        .map(|n| column(n))
        .collect::<Result<Vec<_>>>()?;
    let label_col = column("stabf")?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            message: e.to_string(),
        })?;
        let feats = feature_cols
            .iter()
            .map(|&c| {
                let cell = rec.get(c).unwrap_or("").trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Csv {
                        row,
                        message: format!("non-numeric value `{cell}` in column `{}`", &headers[c]),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match rec.get(label_col).unwrap_or("").trim() {
            "stable" => 1,
            "unstable" => 0,
            other => {
                return Err(Error::Csv {
                    row,
                    message: format!("stabf must be stable/unstable, got `{other}`"),
                })
            }
        };
        rows.push(feats);
        labels.push(label);
    }
    let n = rows.len();
    if n < 3 {
        return Err(Error::EmptyDataset);
    }
    let val = (n * 450 / 10_000).max(1);
    let test = (n * 1_000 / 10_000).max(1);
    let train = n - val - test;

    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    }
    let train_idx = &order[..train];
    let scaler = MinMaxScaler::fit(
        &train_idx
            .iter()
            .map(|&i| rows[i].clone())
            .collect::<Vec<_>>(),
    );
    let build = |idx: &[usize]| -> Result<Dataset<T>> {
        let mut data = Vec::with_capacity(idx.len() * EGSS_FEATURES.len());
        for &i in idx {
            data.extend(
                rows[i]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| T::of(scaler.apply(v, j))),
            );
        }
        let y = one_hot(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), 2);
        Dataset::new(Tensor::new(vec![idx.len(), EGSS_FEATURES.len()], data)?, y)
    };
    let splits = Splits {
        train: build(train_idx)?,
        val: build(&order[train..train + val])?,
        test: build(&order[train + val..])?,
    };
    Ok(EgssSplits { splits, scaler })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(n: usize, constant_g4: bool) -> String {
        let mut s = String::from("tau1,tau2,tau3,tau4,p1,p2,p3,p4,g1,g2,g3,g4,stab,stabf\n");
        for i in 0..n {
            let f = i as f64;
            let g4 = if constant_g4 { 0.5 } else { (f * 0.37) % 1.0 };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{g4},{},{}\n",
                f % 10.0,
                (f * 1.3) % 10.0,
                (f * 2.1) % 10.0,
                (f * 0.7) % 10.0,
                3.0 + f % 2.0,
                -1.0 - (f * 0.3) % 0.5,
                -0.5 - (f * 0.07) % 1.0,
                -1.5 + (f * 0.09) % 1.0,
                (f * 0.11) % 1.0,
                (f * 0.13) % 1.0,
                (f * 0.17) % 1.0,
                f - 5.0,
                if i % 2 == 0 { "stable" } else { "unstable" }
            ));
        }
        s
    }

    #[test]
    fn ten_thousand_rows_split_as_published() {
        let text = csv_text(10_000, false);
        let rdr = csv::Reader::from_reader(text.as_bytes());
        let d: EgssSplits<f64> = load_egss_csv_with(rdr, 1).unwrap();
        assert_eq!(
            (
                d.splits.train.len(),
                d.splits.val.len(),
                d.splits.test.len()
            ),
            (8550, 450, 1000)
        );
        // min/max of every scaled training column is exactly 0 and 1
        for j in 0..12 {
            let col: Vec<f64> = d
                .splits
                .train
                .x
                .data()
                .iter()
                .skip(j)
                .step_by(12)
                .copied()
                .collect();
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((min, max), (0.0, 1.0), "column {j}");
        }
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let text = csv_text(100, true);
        let rdr = csv::Reader::from_reader(text.as_bytes());
        let d: EgssSplits<f64> = load_egss_csv_with(rdr, 1).unwrap();
        assert!(d
            .splits
            .train
            .x
            .data()
            .iter()
            .skip(11)
            .step_by(12)
            .all(|&v| v == 0.0));
        assert!(d
            .splits
            .test
            .x
            .data()
            .iter()
            .skip(11)
            .step_by(12)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn parse_errors_name_the_row() {
        let text = csv_text(5, false).replacen("\n3,", "\nabc,", 1);
        match load_egss_csv_with::<f64, _>(csv::Reader::from_reader(text.as_bytes()), 0) {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 5),
            other => panic!("{other:?}"),
        }
        let missing = "tau1,tau2\n1,2\n";
        assert!(matches!(
            load_egss_csv_with::<f64, _>(csv::Reader::from_reader(missing.as_bytes()), 0),
            Err(Error::Csv { row: 1, .. })
        ));
    }
}
