use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::nncore::Model;
use crate::scalar::Scalar;

/// Binary block grid laid over one layer's `(rows, cols)` weight matrix; `false` marks
/// a pruned block. Conv2D kernels are viewed as `(I*J*K, F)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMask {
    pub layer_index: usize,
    pub block_shape: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    #[serde(serialize_with = "grid_out", deserialize_with = "grid_in")]
    pub grid: Vec<Vec<bool>>,
    pub frozen: bool,
}

fn grid_out<S: Serializer>(grid: &[Vec<bool>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<String> = grid
        .iter()
        .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
        .collect();
    rows.serialize(s)
}

fn grid_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<bool>>, D::Error> {
    let rows = Vec::<String>::deserialize(d)?;
    rows.iter()
        .map(|r| {
            r.chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(serde::de::Error::custom(format!("mask bit {other:?}"))),
                })
                .collect()
        })
        .collect()
}

impl BlockMask {
    pub fn new(layer_index: usize, rows: usize, cols: usize, block_shape: (usize, usize)) -> Self {
        let (gr, gc) = (rows.div_ceil(block_shape.0), cols.div_ceil(block_shape.1));
        BlockMask {
            layer_index,
            block_shape,
            rows,
            cols,
            grid: vec![vec![true; gc]; gr],
            frozen: false,
        }
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid.len(), self.grid.first().map_or(0, Vec::len))
    }

    pub fn total_blocks(&self) -> usize {
        let (r, c) = self.grid_shape();
        r * c
    }

    pub fn pruned_blocks(&self) -> usize {
        self.grid.iter().flatten().filter(|&&b| !b).count()
    }

    /// Whether weight `(r, c)` survives.
    pub fn keeps(&self, r: usize, c: usize) -> bool {
        self.grid[r / self.block_shape.0][c / self.block_shape.1]
    }

    /// Row-major keep flags over the whole weight matrix.
    pub fn element_mask(&self) -> Vec<bool> {
        (0..self.rows * self.cols)
            .map(|i| self.keeps(i / self.cols, i % self.cols))
            .collect()
    }

    /// Columns whose every weight is pruned.
    pub fn dead_columns(&self) -> Vec<usize> {
        (0..self.cols)
            .filter(|&c| (0..self.grid.len()).all(|br| !self.grid[br][c / self.block_shape.1]))
            .collect()
    }

    /// Recomputes the grid from scratch: the `floor(s * blocks)` blocks with the smallest
    /// mean absolute weight are pruned, ties broken by block position, and at least one
    /// block always survives.
    pub fn recompute<T: Scalar>(&mut self, weights: &[T], sparsity: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::MasksFrozen);
        }
        let (bh, bw) = self.block_shape;
        let (gr, gc) = self.grid_shape();
        let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(gr * gc);
        for br in 0..gr {
            for bc in 0..gc {
                let (r0, c0) = (br * bh, bc * bw);
                let (r1, c1) = ((r0 + bh).min(self.rows), (c0 + bw).min(self.cols));
                let mut sum = 0.0;
                for r in r0..r1 {
                    for c in c0..c1 {
                        sum += weights[r * self.cols + c].as_f64().abs();
                    }
                }
                scored.push((sum / ((r1 - r0) * (c1 - c0)) as f64, br, bc));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let total = scored.len();
        let prune = ((sparsity * total as f64).floor() as usize).min(total.saturating_sub(1));
        for row in &mut self.grid {
            row.fill(true);
        }
        for &(_, br, bc) in &scored[..prune] {
            self.grid[br][bc] = false;
        }
        Ok(())
    }
}

/// Block shape per prunable layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockShapes {
    /// `(rows, 1)`: each block is one whole output column (a unit or a filter).
    #[default]
    Columns,
    /// The same block shape for every layer.
    Uniform(usize, usize),
}

impl BlockShapes {
    pub fn for_matrix(&self, rows: usize) -> (usize, usize) {
        match *self {
            BlockShapes::Columns => (rows, 1),
            BlockShapes::Uniform(r, c) => (r, c),
        }
    }
}

/// Dense and Conv2D layers except the output layer.
pub fn prunable_layers<T: Scalar>(model: &Model<T>) -> Vec<usize> {
    let output = model.output_layer();
    (0..model.len())
        .filter(|&i| model.layers()[i].kind.is_linear() && Some(i) != output)
        .collect()
}

/// One all-ones mask per prunable layer.
pub fn generate_block_masks<T: Scalar>(
    model: &Model<T>,
    shapes: &BlockShapes,
) -> Result<Vec<BlockMask>> {
    prunable_layers(model)
        .into_iter()
        .map(|i| {
            let (rows, cols) = model.layers()[i]
                .weight_matrix_dims()
                .expect("linear layer");
            let shape = shapes.for_matrix(rows);
            if shape.0 == 0 || shape.1 == 0 {
                return Err(Error::config(format!(
                    "block shape {shape:?} must be positive"
                )));
            }
            Ok(BlockMask::new(i, rows, cols, shape))
        })
        .collect()
}

/// Recomputes every mask from the current weights at sparsity `s`.
pub fn prune_step<T: Scalar>(masks: &mut [BlockMask], model: &Model<T>, s: f64) -> Result<()> {
    if masks.iter().any(|m| m.frozen) {
        return Err(Error::MasksFrozen);
    }
    masks
        .par_iter_mut()
        .try_for_each(|m| m.recompute(model.layers()[m.layer_index].params[0].data(), s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{Layer, LayerKind, ModelBuilder};
    use crate::tensor::Tensor;

    fn dense_model(w: &[f64], rows: usize, cols: usize) -> Model<f64> {
        let l = Layer::with_params(
            LayerKind::Dense { units: cols },
            &[rows],
            vec![
                Tensor::from_f64(&[rows, cols], w).unwrap(),
                Tensor::zeros(&[cols]),
            ],
        )
        .unwrap();
        let out = Layer::with_params(
            LayerKind::Dense { units: 1 },
            &[cols],
            vec![Tensor::zeros(&[cols, 1]), Tensor::zeros(&[1])],
        )
        .unwrap();
        Model::from_layers(&[rows], vec![l, out]).unwrap()
    }

    #[test]
    fn column_means_pick_the_weakest_columns() {
        let w = [0.1, -0.5, 0.02, 0.9, -0.2, 0.4, 0.01, -0.8];
        let m = dense_model(&w, 2, 4);
        let mut masks = generate_block_masks(&m, &BlockShapes::Columns).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].block_shape, (2, 1));
        prune_step(&mut masks, &m, 0.5).unwrap();
        assert_eq!(masks[0].grid, vec![vec![false, true, false, true]]);
        assert_eq!(masks[0].dead_columns(), vec![0, 2]);
        prune_step(&mut masks, &m, 0.0).unwrap();
        assert_eq!(masks[0].grid, vec![vec![true; 4]]);
    }

    #[test]
    fn ties_break_by_block_position() {
        let m = dense_model(&[1.0; 8], 2, 4);
        let mut masks = generate_block_masks(&m, &BlockShapes::Columns).unwrap();
        prune_step(&mut masks, &m, 0.5).unwrap();
        assert_eq!(masks[0].grid, vec![vec![false, false, true, true]]);
    }

    #[test]
    fn padded_grid_and_survivor_rule() {
        let m = dense_model(&(0..35).map(f64::from).collect::<Vec<_>>(), 5, 7);
        let mut masks = generate_block_masks(&m, &BlockShapes::Uniform(2, 3)).unwrap();
        assert_eq!(masks[0].grid_shape(), (3, 3));
        prune_step(&mut masks, &m, 0.999).unwrap();
        assert_eq!(masks[0].pruned_blocks(), 8);
        // the surviving block holds the largest weights
        assert!(masks[0].grid[2][2]);
    }

    #[test]
    fn lenet_dense_grid_and_no_output_mask() {
        let m: Model<f64> = ModelBuilder::new(&[120])
            .dense(84)
            .square()
            .dense(10)
            .build(0)
            .unwrap();
        let masks = generate_block_masks(&m, &BlockShapes::Columns).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].grid_shape(), (1, 84));
        assert_eq!(masks[0].block_shape, (120, 1));
    }

    #[test]
    fn frozen_masks_refuse_updates_and_round_trip_as_bits() {
        let m = dense_model(&[0.3, 0.1, 0.2, 0.4], 2, 2);
        let mut masks = generate_block_masks(&m, &BlockShapes::Columns).unwrap();
        prune_step(&mut masks, &m, 0.5).unwrap();
        masks[0].frozen = true;
        assert!(matches!(
            prune_step(&mut masks, &m, 0.0),
            Err(Error::MasksFrozen)
        ));
        let json = serde_json::to_string(&masks[0]).unwrap();
        assert!(json.contains(r#""grid":["01"]"#), "{json}");
        assert_eq!(serde_json::from_str::<BlockMask>(&json).unwrap(), masks[0]);
    }
}
