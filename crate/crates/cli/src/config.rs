//! TOML pipeline configuration. Command-line flags override file values.

use std::path::Path;

use mofhei::hesim::PackingConfig;
use mofhei::nncore::TrainConfig;
use mofhei::prune::BlockShapes;
use mofhei::transform::HefConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub train: TrainConfig,
    pub hef: HefConfig,
    pub prune: PruneSection,
    pub crypto: CryptoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub sparsity: f64,
    pub initial_sparsity: f64,
    /// `RxC`, or `columns` for one block per weight column.
    pub block_shape: String,
    /// Pruning epochs.
    pub epochs: usize,
    /// Number of pruning events; defaults to 60% of the pruning epochs.
    pub steps: Option<usize>,
    /// Training steps between events; defaults to one epoch.
    pub delta_t: Option<usize>,
    pub start_step: usize,
    pub learning_rate: f64,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            sparsity: 0.5,
            initial_sparsity: 0.0,
            block_shape: "columns".into(),
            epochs: 100,
            steps: None,
            delta_t: None,
            start_step: 0,
            learning_rate: 1e-3,
            finetune_lr: 1e-4,
            finetune_epochs: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CryptoSection {
    pub pmd: Option<usize>,
    pub cm_bits: Option<u32>,
    pub max_depth: Option<u32>,
    pub slots: Option<usize>,
}

impl CryptoSection {
    /// Packing parameters, falling back to `defaults` for unset fields.
    pub fn packing(&self, defaults: (usize, u32)) -> Result<PackingConfig, CliError> {
        let mut cfg = PackingConfig::new(
            self.pmd.unwrap_or(defaults.0),
            self.cm_bits.unwrap_or(defaults.1),
        )?;
        if let Some(d) = self.max_depth {
            cfg = cfg.with_max_depth(d)?;
        }
        if let Some(s) = self.slots {
            cfg = cfg.with_slots(s)?;
        }
        Ok(cfg)
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::args(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let offset = e.span().map_or(0, |s| s.start);
            CliError::parse(format!(
                "{} (byte {offset}): {}",
                path.display(),
                e.message()
            ))
        })
    }
}

/// Parses `RxC` or `columns`.
pub fn parse_block_shape(text: &str) -> Result<BlockShapes, CliError> {
    if text.eq_ignore_ascii_case("columns") {
        return Ok(BlockShapes::Columns);
    }
    let bad = || CliError::args(format!("block shape {text:?} is not RxC or columns"));
    let (r, c) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let (r, c): (usize, usize) = (
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    );
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok(BlockShapes::Uniform(r, c))
}
