use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic ramp from `initial` to `target` sparsity over `steps` pruning events spaced
/// `frequency` training steps apart, starting at step `start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningSchedule {
    pub initial: f64,
    pub target: f64,
    pub steps: usize,
    pub start: usize,
    pub frequency: usize,
    /// Epochs of mask-gated training.
    pub epochs: usize,
}

impl PruningSchedule {
    /// Starts at step 0 with zero sparsity, prunes once per epoch over the first 60%
    /// of `epochs`.
    pub fn new(target: f64, epochs: usize, steps_per_epoch: usize) -> Self {
        PruningSchedule {
            initial: 0.0,
            target,
            steps: ((0.6 * epochs as f64).floor() as usize).max(1),
            start: 0,
            frequency: steps_per_epoch.max(1),
            epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target) || !(0.0..=self.target).contains(&self.initial) {
            return Err(Error::config(format!(
                "sparsities must satisfy 0 <= initial ({}) <= target ({}) < 1",
                self.initial, self.target
            )));
        }
        if self.steps == 0 || self.frequency == 0 {
            return Err(Error::config(
                "pruning steps and frequency must be positive",
            ));
        }
        Ok(())
    }

    /// Training step of the last pruning event, after which masks freeze.
    pub fn final_step(&self) -> usize {
        self.start + self.steps * self.frequency
    }

    /// Index of the pruning event at training step `t`, if one fires there.
    pub fn event_at(&self, t: usize) -> Option<usize> {
        (t >= self.start && (t - self.start).is_multiple_of(self.frequency))
            .then(|| (t - self.start) / self.frequency)
            .filter(|&k| k <= self.steps)
    }

    /// `s_t = s_f + (s_i - s_f) (1 - (t - t0) / (n dt))^3`, held at `s_f` afterwards.
    pub fn sparsity_at(&self, t: usize) -> Result<f64> {
        if t < self.start {
            return Err(Error::BeforeScheduleStart {
                step: t,
                start: self.start,
            });
        }
        let span = (self.steps * self.frequency) as f64;
        let progress = ((t - self.start) as f64 / span).min(1.0);
        if progress == 0.0 {
            return Ok(self.initial);
        }
        let s = self.target + (self.initial - self.target) * (1.0 - progress).powi(3);
        Ok(s.clamp(self.initial, self.target))
    }
}
