use serde::{Deserialize, Serialize};

use super::program::{lower, Step, StepOp};
use crate::error::Result;
use crate::hesim::{OpCounters, PackingConfig};
use crate::nncore::{LayerKind, Model};
use crate::scalar::Scalar;

/// Operation counts and live memory of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: String,
    /// Units (Dense) or filters (Conv2D).
    pub units: Option<usize>,
    pub counters: OpCounters,
    /// Executed plus skipped operations.
    pub total: u64,
    pub executed: u64,
    /// Layer input and output ciphertexts, the widest task's plaintexts, and the
    /// encrypted model input, which stays resident for the whole inference.
    pub live_bytes: u64,
    pub output_level: u32,
}

/// Per-layer and whole-model HE cost, either computed analytically or measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_layer: Vec<LayerCost>,
    /// Summed counters; `peak_live_bytes` is the maximum over layers.
    pub totals: OpCounters,
    /// Executed plus skipped operations.
    pub total_ops: u64,
    pub executed_ops: u64,
    pub skipped_ops: u64,
    pub peak_memory_bytes: u64,
    pub static_depth: u32,
    pub max_depth: u32,
    pub depth_ok: bool,
    pub slots: usize,
    pub poly_modulus_degree: usize,
    pub coeff_modulus_bits: u32,
    /// Wall-clock seconds of a measured run; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl CostReport {
    pub(crate) fn assemble(
        per_layer: Vec<LayerCost>,
        static_depth: u32,
        cfg: &PackingConfig,
        wall_time_s: Option<f64>,
    ) -> Self {
        let mut totals = OpCounters::default();
        for l in &per_layer {
            totals += l.counters;
        }
        CostReport {
            total_ops: totals.executed() + totals.skipped(),
            executed_ops: totals.executed(),
            skipped_ops: totals.skipped(),
            peak_memory_bytes: totals.peak_live_bytes,
            totals,
            per_layer,
            static_depth,
            max_depth: cfg.max_depth,
            depth_ok: static_depth <= cfg.max_depth,
            slots: cfg.slots,
            poly_modulus_degree: cfg.poly_modulus_degree,
            coeff_modulus_bits: cfg.coeff_modulus_bits,
            wall_time_s,
        }
    }

    /// Executed-operation reduction relative to `baseline`, as a fraction.
    pub fn reduction_vs(&self, baseline: &CostReport) -> f64 {
        1.0 - self.executed_ops as f64 / baseline.executed_ops as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table with one row per Dense/Conv2D layer plus a total row. The reduction factor
    /// column compares unit counts with the same layer of `baseline`.
    pub fn to_csv(&self, baseline: Option<&CostReport>) -> String {
        let mut out = String::from("layer,kind,units,reduction_factor,heo,skipped\n");
        for l in self.per_layer.iter().filter(|l| l.units.is_some()) {
            let units = l.units.unwrap_or(0);
            let factor = baseline
                .and_then(|b| b.per_layer.iter().find(|x| x.layer == l.layer))
                .and_then(|b| b.units)
                .filter(|_| units > 0)
                .map(|b| format!("{:.1}", b as f64 / units as f64))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{},{},{units},{factor},{},{}\n",
                l.layer,
                l.kind,
                l.executed,
                l.counters.skipped()
            ));
        }
        out.push_str(&format!(
            "total,,,,{},{}\n",
            self.executed_ops, self.skipped_ops
        ));
        out
    }
}

/// Plaintext bytes one task of `step` holds while it runs.
pub(crate) fn task_plaintext_bytes<T: Scalar>(
    step: &Step<T>,
    cfg: &PackingConfig,
    nonzero: usize,
) -> u64 {
    let (lin, lout) = (step.in_level, step.out_level);
    match &step.op {
        StepOp::Linear { .. } => {
            nonzero as u64 * cfg.plaintext_bytes(lin) + cfg.plaintext_bytes(lout)
        }
        StepOp::AvgPool { .. } => cfg.plaintext_bytes(lin),
        StepOp::Square | StepOp::Flatten => 0,
        StepOp::Poly { coeffs } => {
            let d = coeffs.len() - 1;
            (1..=d)
                .map(|k| {
                    cfg.plaintext_bytes(lin.saturating_sub(k.next_power_of_two().trailing_zeros()))
                })
                .sum::<u64>()
                + cfg.plaintext_bytes(lout)
        }
    }
}

/// Closed-form operation counts, skip counts, depth and peak memory, without executing.
pub fn analyze_cost<T: Scalar>(model: &Model<T>, cfg: &PackingConfig) -> Result<CostReport> {
    let program = lower(model, cfg)?;
    let mut per_layer = Vec::with_capacity(program.steps.len());
    let input_bytes = program.input_len() as u64
        * cfg.ciphertext_bytes(program.steps.first().map_or(0, |s| s.in_level));
    for (i, (step, layer)) in program.steps.iter().zip(model.layers()).enumerate() {
        let mut c = OpCounters::default();
        let n = step.out_len as u64;
        let mut widest = 0usize;
        match &layer.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => {
                let (rows, cols) = layer.weight_matrix_dims().expect("linear layer");
                let positions = (step.out_len / cols) as u64;
                let w = layer.params[0].data();
                let m = rows as u64;
                for f in 0..cols {
                    let k = (0..rows).filter(|&r| w[r * cols + f] != T::zero()).count();
                    widest = widest.max(k);
                    let k = k as u64;
                    let adds = k.saturating_sub(1);
                    c.ct_pt_mul += positions * k;
                    c.ct_add += positions * adds;
                    c.ct_pt_add += positions;
                    c.skipped_mul += positions * (m - k);
                    c.skipped_add += positions * ((m - 1) - adds);
                }
            }
            LayerKind::AvgPool2D { window, .. } => {
                c.ct_add += n * (window[0] * window[1] - 1) as u64;
                c.ct_pt_mul += n;
            }
            LayerKind::SquareAct => c.ct_ct_mul += n,
            LayerKind::PolyAct { degree } => {
                let d = *degree as u64;
                c.ct_ct_mul += n * (d - 1);
                c.ct_pt_mul += n * d;
                c.ct_add += n * (d - 1);
                c.ct_pt_add += n;
            }
            _ => {}
        }
        let resident = if i == 0 { 0 } else { input_bytes };
        let live = resident
            + match step.op {
                StepOp::Flatten => step.in_len as u64 * cfg.ciphertext_bytes(step.in_level),
                _ => {
                    step.in_len as u64 * cfg.ciphertext_bytes(step.in_level)
                        + step.out_len as u64 * cfg.ciphertext_bytes(step.out_level)
                        + task_plaintext_bytes(step, cfg, widest)
                }
            };
        c.observe_live_bytes(live);
        per_layer.push(LayerCost {
            layer: step.layer,
            kind: step.kind.into(),
            units: step.units(),
            total: c.executed() + c.skipped(),
            executed: c.executed(),
            live_bytes: live,
            output_level: step.out_level,
            counters: c,
        });
    }
    Ok(CostReport::assemble(
        per_layer,
        program.static_depth,
        cfg,
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{Layer, ModelBuilder, Padding};
    use crate::tensor::Tensor;

    #[test]
    fn dense_counts_two_m_per_unit() {
        let m: Model<f64> = ModelBuilder::new(&[120]).dense(84).build(0).unwrap();
        let r = analyze_cost(&m, &PackingConfig::default()).unwrap();
        assert_eq!(r.total_ops, 20_160);
        assert_eq!(r.totals.ct_pt_mul, 84 * 120);
        assert_eq!(r.totals.ct_add, 84 * 119);
        assert_eq!(r.totals.ct_pt_add, 84);
    }

    #[test]
    fn same_padded_conv_counts_every_patch_cell() {
        let m: Model<f64> = ModelBuilder::new(&[28, 28, 1])
            .conv(6, 5, 1, Padding::Same)
            .build(0)
            .unwrap();
        let r = analyze_cost(&m, &PackingConfig::default()).unwrap();
        assert_eq!(r.total_ops, 235_200);
        assert_eq!(r.skipped_ops, 0);
    }

    #[test]
    fn zero_weights_move_to_skipped() {
        let w = Tensor::<f64>::zeros(&[3, 2]);
        let layer = Layer::with_params(
            LayerKind::Dense { units: 2 },
            &[3],
            vec![w, Tensor::zeros(&[2])],
        )
        .unwrap();
        let m = Model::from_layers(&[3], vec![layer]).unwrap();
        let r = analyze_cost(&m, &PackingConfig::default()).unwrap();
        assert_eq!(r.executed_ops, 2);
        assert_eq!(r.totals.ct_pt_add, 2);
        assert_eq!((r.totals.skipped_mul, r.totals.skipped_add), (6, 4));
        assert_eq!(r.total_ops, 12);
    }

    #[test]
    fn pool_and_activation_formulas() {
        let m: Model<f64> = ModelBuilder::new(&[4, 4, 2])
            .avg_pool(2)
            .square()
            .poly(2)
            .poly(3)
            .build(0)
            .unwrap();
        let r = analyze_cost(&m, &PackingConfig::default()).unwrap();
        let totals: Vec<u64> = r.per_layer.iter().map(|l| l.total).collect();
        assert_eq!(totals, vec![8 * 4, 8, 8 * 5, 8 * 8]);
        assert_eq!(r.static_depth, 1 + 1 + 2 + 3);
    }

    #[test]
    fn over_budget_models_are_costed_and_flagged() {
        let cfg = PackingConfig::new(8192, 200).unwrap();
        let m: Model<f64> = ModelBuilder::new(&[4])
            .dense(3)
            .poly(2)
            .dense(3)
            .poly(2)
            .build(0)
            .unwrap();
        let r = analyze_cost(&m, &cfg).unwrap();
        assert!(!r.depth_ok);
        assert_eq!(r.static_depth, 6);
    }

    #[test]
    fn csv_lists_linear_layers_with_reduction_factor() {
        let cfg = PackingConfig::default();
        let big: Model<f64> = ModelBuilder::new(&[10])
            .dense(8)
            .square()
            .dense(2)
            .build(0)
            .unwrap();
        let small: Model<f64> = ModelBuilder::new(&[10])
            .dense(4)
            .square()
            .dense(2)
            .build(0)
            .unwrap();
        let (a, b) = (
            analyze_cost(&big, &cfg).unwrap(),
            analyze_cost(&small, &cfg).unwrap(),
        );
        let csv = b.to_csv(Some(&a));
        assert!(
            csv.starts_with("layer,kind,units,reduction_factor,heo,skipped\n0,Dense,4,2.0,80,0\n")
        );
        assert!(b.reduction_vs(&a) > 0.4);
    }
}
