//! Merged comparison of an HE-friendly model and its pruned versions.

use std::fs;

use mofhei::nncore::evaluate;
use mofhei::pi::{analyze_cost, CostReport};
use mofhei::prune::{prunable_layers, sparsity_report};
use mofhei::Model64;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{self, DatasetSpec};
use crate::{metric_for, packing_for, read_model, task_of, CliError, ReportArgs};

pub const REPORT_FORMAT: &str = "mofhei-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// JSON schema that every `report` output validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerColumn {
    pub layer: usize,
    pub kind: String,
    pub units: usize,
    /// HE-friendly units divided by these units; absent for the HE-friendly column.
    pub reduction_factor: Option<f64>,
    pub heo: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub label: String,
    pub model: String,
    pub stage: String,
    pub target_sparsity: Option<f64>,
    /// Parameter sparsity relative to the HE-friendly model.
    pub sparsity: Option<f64>,
    pub metric_value: f64,
    pub layers: Vec<LayerColumn>,
    pub total_heo: u64,
    pub reduction_vs_hef: f64,
    pub peak_memory_bytes: u64,
    pub static_depth: u32,
    pub depth_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub schema_version: u32,
    pub seed: u64,
    pub dataset: String,
    pub metric: String,
    pub columns: Vec<ReportColumn>,
}

fn column(
    label: String,
    path: &str,
    model: &Model64,
    hef: &Model64,
    hef_cost: &CostReport,
    cost: &CostReport,
    metric_value: f64,
) -> Result<ReportColumn, CliError> {
    let is_hef = std::ptr::eq(model, hef);
    let layers = prunable_layers(hef)
        .into_iter()
        .map(|i| {
            let units = model.layers()[i].weight_matrix_dims().map_or(0, |d| d.1);
            let base = hef.layers()[i].weight_matrix_dims().map_or(0, |d| d.1);
            LayerColumn {
                layer: i,
                kind: model.layers()[i].kind.name().into(),
                units,
                reduction_factor: (!is_hef && units > 0).then(|| base as f64 / units as f64),
                heo: cost
                    .per_layer
                    .iter()
                    .find(|l| l.layer == i)
                    .map_or(0, |l| l.executed),
            }
        })
        .collect();
    let sparsity = if is_hef {
        None
    } else {
        Some(sparsity_report(hef, model)?.overall)
    };
    Ok(ReportColumn {
        label,
        model: path.into(),
        stage: model.metadata.get("stage").cloned().unwrap_or_default(),
        target_sparsity: model.metadata.get("sparsity").and_then(|s| s.parse().ok()),
        sparsity,
        metric_value,
        layers,
        total_heo: cost.executed_ops,
        reduction_vs_hef: cost.reduction_vs(hef_cost),
        peak_memory_bytes: cost.peak_memory_bytes,
        static_depth: cost.static_depth,
        depth_ok: cost.depth_ok,
    })
}

impl Report {
    /// Rows of information, one column per model, in the shape of a comparison table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("information");
        for c in &self.columns {
            out.push_str(&format!(",{}", c.label));
        }
        out.push('\n');
        let row = |name: String, cell: &dyn Fn(&ReportColumn) -> String| {
            let mut line = name;
            for c in &self.columns {
                line.push(',');
                line.push_str(&cell(c));
            }
            line.push('\n');
            line
        };
        out.push_str(&row("sparsity".into(), &|c| {
            c.sparsity.map_or("-".into(), |s| format!("{s:.2}"))
        }));
        if let Some(first) = self.columns.first() {
            for (j, l) in first.layers.iter().enumerate() {
                out.push_str(&row(format!("{} {}", l.kind, l.layer), &|c| {
                    let x = &c.layers[j];
                    let f = x.reduction_factor.map_or("-".into(), |f| format!("{f:.1}"));
                    format!("{} / {f} / {:.1e}", x.units, x.heo as f64)
                }));
            }
        }
        out.push_str(&row(self.metric.clone(), &|c| {
            format!("{:.4}", c.metric_value)
        }));
        out.push_str(&row("heo / mpi_gb".into(), &|c| {
            format!(
                "{:.1e} / {:.0}",
                c.total_heo as f64,
                c.peak_memory_bytes as f64 / 1e9
            )
        }));
        out
    }
}

pub(crate) fn cmd_report(
    seed: u64,
    cfg: &Config,
    dataset: Option<DatasetSpec>,
    samples: usize,
    limit: Option<usize>,
    a: ReportArgs,
) -> Result<(), CliError> {
    let hef = read_model(&a.hef)?;
    let pruned: Vec<Model64> = a
        .pruned
        .iter()
        .map(|p| read_model(p))
        .collect::<Result<_, _>>()?;
    let task = task_of(&hef);
    let spec = match dataset {
        Some(d) => d,
        None => hef
            .metadata
            .get("dataset")
            .ok_or_else(|| CliError::args("--dataset is required"))?
            .parse()?,
    };
    let test = data::load(spec, task, seed, samples, limit)?.test;
    let metric = metric_for(task);
    let pc = packing_for(cfg, &hef)?;
    let hef_cost = analyze_cost(&hef, &pc)?;
    let mut columns = vec![column(
        "HEF".into(),
        &a.hef.display().to_string(),
        &hef,
        &hef,
        &hef_cost,
        &hef_cost,
        evaluate(&hef, &test, metric)?,
    )?];
    for (path, m) in a.pruned.iter().zip(&pruned) {
        let cost = analyze_cost(m, &pc)?;
        let label = m
            .metadata
            .get("sparsity")
            .and_then(|s| s.parse::<f64>().ok())
            .map_or_else(
                || path.display().to_string(),
                |s| format!("{:.0}%", s * 100.0),
            );
        columns.push(column(
            label,
            &path.display().to_string(),
            m,
            &hef,
            &hef_cost,
            &cost,
            evaluate(m, &test, metric)?,
        )?);
    }
    let report = Report {
        format: REPORT_FORMAT.into(),
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        dataset: spec.to_string(),
        metric: serde_json::to_value(metric)
            .expect("metric")
            .as_str()
            .unwrap_or_default()
            .into(),
        columns,
    };
    fs::write(
        &a.out,
        serde_json::to_string_pretty(&report).expect("report json") + "\n",
    )?;
    let csv = report.to_csv();
    if let Some(path) = &a.csv {
        fs::write(path, &csv)?;
    }
    print!("{csv}");
    Ok(())
}
