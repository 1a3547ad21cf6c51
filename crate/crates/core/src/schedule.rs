//! Warm-up gate deciding when learnable selection takes over from all-cell training.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.3;
/// Window length for the depth-loss stabilization diagnostic.
pub const STABILIZATION_WINDOW: usize = 5;

/// Which sample map the training step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every cell is a positive sample.
    WarmupAll,
    /// Cells are picked by learnable sample selection.
    Lss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub total_epochs: usize,
    pub warmup_fraction: f64,
    depth_loss_history: VecDeque<f64>,
}

impl TrainState {
    pub fn new(total_epochs: usize, warmup_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::InvalidInput(format!(
                "warm-up fraction must lie in [0, 1), got {warmup_fraction}"
            )));
        }
        Ok(Self {
            epoch: 0,
            total_epochs,
            warmup_fraction,
            depth_loss_history: VecDeque::with_capacity(2 * STABILIZATION_WINDOW),
        })
    }

    /// First epoch that runs with selection enabled: `ceil(fraction × total)`.
    pub fn warmup_epochs(&self) -> usize {
        let raw = self.warmup_fraction * self.total_epochs as f64;
        // 0.3 × 10 evaluates to 3.0000000000000004
        (raw - 1e-9).ceil().max(0.0) as usize
    }

    /// Records the mean depth loss of the epoch just finished and advances.
    pub fn finish_epoch(&mut self, mean_depth_loss: f64) {
        if self.depth_loss_history.len() == 2 * STABILIZATION_WINDOW {
            self.depth_loss_history.pop_front();
        }
        self.depth_loss_history.push_back(mean_depth_loss);
        self.epoch = (self.epoch + 1).min(self.total_epochs);
    }

    /// Relative change between the mean depth loss of the last
    /// [`STABILIZATION_WINDOW`] epochs and the window before it. `None` until
    /// two full windows have been recorded.
    pub fn depth_loss_relative_change(&self) -> Option<f64> {
        if self.depth_loss_history.len() < 2 * STABILIZATION_WINDOW {
            return None;
        }
        let w = STABILIZATION_WINDOW as f64;
        let previous: f64 = self.depth_loss_history.iter().take(STABILIZATION_WINDOW).sum::<f64>() / w;
        let recent: f64 = self.depth_loss_history.iter().skip(STABILIZATION_WINDOW).sum::<f64>() / w;
        Some((recent - previous).abs() / previous.abs().max(f64::EPSILON))
    }
}

/// All-cell training strictly before `ceil(fraction × total)` epochs, selection after.
pub fn warmup_gate(state: &TrainState) -> TrainMode {
    if state.epoch < state.warmup_epochs() {
        TrainMode::WarmupAll
    } else {
        TrainMode::Lss
    }
}
