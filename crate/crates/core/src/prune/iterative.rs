use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::masks::{generate_block_masks, prune_step, BlockMask, BlockShapes};
use super::schedule::PruningSchedule;
use crate::datasets::Dataset;
use crate::error::Result;
use crate::nncore::{train, Model, TrainConfig, TrainHistory, TrainHook, TrainOptions};
use crate::scalar::Scalar;

/// Everything needed to resume or inspect a pruning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneState {
    pub block_shapes: BlockShapes,
    pub schedule: PruningSchedule,
    pub masks: Vec<BlockMask>,
    /// Training step at which the masks froze.
    pub freeze_step: Option<usize>,
}

impl PruneState {
    pub fn is_frozen(&self) -> bool {
        !self.masks.is_empty() && self.masks.iter().all(|m| m.frozen)
    }

    pub fn mask_for(&self, layer: usize) -> Option<&BlockMask> {
        self.masks.iter().find(|m| m.layer_index == layer)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::error::Error::Parse {
            offset: 0,
            message: e.to_string(),
        })
    }
}

/// Zeroes masked weights in the model and keeps their raw values aside, so a later
/// pruning event ranks blocks by the weights they had when masked.
struct PruneHook<T> {
    schedule: PruningSchedule,
    masks: Vec<BlockMask>,
    keep: Vec<Vec<bool>>,
    raw: Vec<Vec<T>>,
    by_layer: BTreeMap<usize, usize>,
    freeze_step: Option<usize>,
}

impl<T: Scalar> PruneHook<T> {
    fn new(model: &Model<T>, schedule: PruningSchedule, masks: Vec<BlockMask>) -> Self {
        let keep = masks.iter().map(BlockMask::element_mask).collect();
        let raw = masks
            .iter()
            .map(|m| model.layers()[m.layer_index].params[0].data().to_vec())
            .collect();
        let by_layer = masks
            .iter()
            .enumerate()
            .map(|(j, m)| (m.layer_index, j))
            .collect();
        PruneHook {
            schedule,
            masks,
            keep,
            raw,
            by_layer,
            freeze_step: None,
        }
    }

    fn frozen(&self) -> bool {
        self.freeze_step.is_some()
    }

    fn apply(
        &mut self,
        model: &mut Model<T>,
        sparsity: f64,
        step: usize,
        freeze: bool,
    ) -> Result<()> {
        for (j, m) in self.masks.iter().enumerate() {
            let w = model.layer_mut(m.layer_index).params[0].data_mut();
            for (i, v) in w.iter_mut().enumerate() {
                if !self.keep[j][i] {
                    *v = self.raw[j][i];
                }
            }
        }
        prune_step(&mut self.masks, model, sparsity)?;
        for (j, m) in self.masks.iter_mut().enumerate() {
            self.keep[j] = m.element_mask();
            let w = model.layer_mut(m.layer_index).params[0].data_mut();
            self.raw[j].copy_from_slice(w);
            for (v, &k) in w.iter_mut().zip(&self.keep[j]) {
                if !k {
                    *v = T::zero();
                }
            }
            m.frozen = freeze;
        }
        if freeze {
            self.freeze_step = Some(step);
        }
        Ok(())
    }
}

impl<T: Scalar> TrainHook<T> for PruneHook<T> {
    fn on_step(&mut self, step: usize, model: &mut Model<T>) -> Result<()> {
        if self.frozen() {
            return Ok(());
        }
        let Some(k) = self.schedule.event_at(step) else {
            return Ok(());
        };
        let s = self.schedule.sparsity_at(step)?;
        self.apply(model, s, step, k == self.schedule.steps)
    }

    fn update_mask(&self, layer: usize) -> Option<&[bool]> {
        self.by_layer.get(&layer).map(|&j| self.keep[j].as_slice())
    }

    fn early_stopping_armed(&self) -> bool {
        self.frozen()
    }

    fn on_train_end(&mut self, steps: usize, model: &mut Model<T>) -> Result<()> {
        if !self.frozen() {
            let target = self.schedule.target;
            self.apply(model, target, steps, true)?;
        }
        Ok(())
    }
}

/// Mask-gated training that raises block sparsity along `schedule` and freezes the
/// masks at the target. Masked weights read as zero and receive no updates;
/// early stopping only starts counting once the masks are frozen. The returned
/// model keeps its dense shapes with masked weights zeroed.
pub fn iterative_block_prune<T: Scalar>(
    model: &Model<T>,
    schedule: &PruningSchedule,
    train_set: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
    shapes: &BlockShapes,
) -> Result<(Model<T>, PruneState, TrainHistory)> {
    schedule.validate()?;
    let masks = generate_block_masks(model, shapes)?;
    let mut m = model.clone();
    let mut hook = PruneHook::new(&m, schedule.clone(), masks);
    let cfg = TrainConfig {
        epochs: schedule.epochs,
        ..cfg.clone()
    };
    let history = train(
        &mut m,
        train_set,
        val,
        &cfg,
        TrainOptions::with_hook(&mut hook),
    )?;
    m.metadata.insert("stage".into(), "pruned".into());
    let state = PruneState {
        block_shapes: shapes.clone(),
        schedule: schedule.clone(),
        masks: hook.masks,
        freeze_step: hook.freeze_step,
    };
    Ok((m, state, history))
}
