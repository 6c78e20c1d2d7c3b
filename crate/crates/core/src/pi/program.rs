use crate::error::{Error, Result};
use crate::hesim::PackingConfig;
use crate::nncore::{LayerKind, Model, WindowGeometry};
use crate::scalar::Scalar;

/// Multiplicative depth of a degree-`d` polynomial evaluated by binary-split powers.
pub fn poly_depth(degree: usize) -> u32 {
    degree.next_power_of_two().trailing_zeros() + 1
}

/// One output column of a linear layer: its nonzero weights by patch row, and bias.
#[derive(Clone, Debug)]
pub(crate) struct Column<T> {
    pub terms: Vec<(usize, T)>,
    pub bias: T,
}

#[derive(Clone, Debug)]
pub(crate) enum StepOp<T> {
    /// Dense (no geometry) or Conv2D through its patch-matrix view.
    Linear {
        geometry: Option<WindowGeometry>,
        rows: usize,
        columns: Vec<Column<T>>,
    },
    AvgPool {
        geometry: WindowGeometry,
    },
    Square,
    Poly {
        coeffs: Vec<T>,
    },
    Flatten,
}

/// One compiled layer.
#[derive(Clone, Debug)]
pub struct Step<T = f64> {
    pub layer: usize,
    pub kind: &'static str,
    pub in_len: usize,
    pub out_len: usize,
    pub in_level: u32,
    pub out_level: u32,
    pub(crate) op: StepOp<T>,
}

impl<T: Scalar> Step<T> {
    /// Independent output jobs this layer can be split into.
    pub fn task_count(&self) -> usize {
        self.out_len
    }

    /// Output units (Dense) or filters (Conv2D).
    pub fn units(&self) -> Option<usize> {
        match &self.op {
            StepOp::Linear { columns, .. } => Some(columns.len()),
            _ => None,
        }
    }

    pub fn depth(&self) -> u32 {
        self.in_level - self.out_level
    }
}

/// A model lowered to per-output packed-op tasks over a fixed parameter set.
#[derive(Clone, Debug)]
pub struct PiProgram<T = f64> {
    pub cfg: PackingConfig,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub steps: Vec<Step<T>>,
    pub static_depth: u32,
}

impl<T: Scalar> PiProgram<T> {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }
}

/// Lowers an HE-friendly model; fails on other layer kinds or when the static depth
/// exceeds the level budget.
pub fn compile<T: Scalar>(model: &Model<T>, cfg: &PackingConfig) -> Result<PiProgram<T>> {
    let program = lower(model, cfg)?;
    if program.static_depth > cfg.max_depth {
        return Err(Error::DepthBudget {
            depth: program.static_depth,
            budget: cfg.max_depth,
        });
    }
    Ok(program)
}

/// Levels are tracked from `max_depth` downward and saturate at zero, so an
/// over-budget program still lowers and can be costed.
pub(crate) fn lower<T: Scalar>(model: &Model<T>, cfg: &PackingConfig) -> Result<PiProgram<T>> {
    cfg.validate()?;
    let mut steps = Vec::with_capacity(model.len());
    let mut level = cfg.max_depth;
    let mut depth = 0u32;
    for (index, layer) in model.layers().iter().enumerate() {
        let in_len: usize = layer.input_shape().iter().product();
        let out_len: usize = layer.output_shape().iter().product();
        let unsupported = |reason: &str| Error::Unsupported {
            index,
            kind: layer.kind.name().into(),
            reason: reason.into(),
        };
        let (op, d) = match &layer.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => {
                let (rows, cols) = layer.weight_matrix_dims().expect("linear layer");
                let w = layer.params[0].data();
                let b = layer.params[1].data();
                let columns = (0..cols)
                    .map(|f| Column {
                        terms: (0..rows)
                            .filter_map(|m| {
                                let v = w[m * cols + f];
                                (v != T::zero()).then_some((m, v))
                            })
                            .collect(),
                        bias: b[f],
                    })
                    .collect();
                let geometry = layer.kind.window_geometry(layer.input_shape())?;
                (
                    StepOp::Linear {
                        geometry,
                        rows,
                        columns,
                    },
                    1,
                )
            }
            LayerKind::AvgPool2D { .. } => {
                let geometry = layer
                    .kind
                    .window_geometry(layer.input_shape())?
                    .expect("pool geometry");
                (StepOp::AvgPool { geometry }, 1)
            }
            LayerKind::SquareAct => (StepOp::Square, 1),
            LayerKind::PolyAct { degree } => {
                if *degree == 0 {
                    return Err(unsupported(
                        "constant polynomial has no ciphertext dependence",
                    ));
                }
                (
                    StepOp::Poly {
                        coeffs: layer.params[0].data().to_vec(),
                    },
                    poly_depth(*degree),
                )
            }
            LayerKind::Flatten => (StepOp::Flatten, 0),
            _ => {
                return Err(unsupported(
                    "not evaluable with additions and multiplications",
                ))
            }
        };
        depth += d;
        let out_level = level.saturating_sub(d);
        steps.push(Step {
            layer: index,
            kind: layer.kind.name(),
            in_len,
            out_len,
            in_level: level,
            out_level,
            op,
        });
        level = out_level;
    }
    Ok(PiProgram {
        cfg: cfg.clone(),
        input_shape: model.input_shape().to_vec(),
        output_shape: model.output_shape().to_vec(),
        steps,
        static_depth: depth,
    })
}
