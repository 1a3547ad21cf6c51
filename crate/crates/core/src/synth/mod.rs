//! Desk-scale synthetic benchmark for sample-selection strategies.
//!
//! Objects are seen through a 7×7 grid of feature cells of which only a
//! support region describes the target; the rest shows an occluder. Shared
//! linear per-cell heads are trained under fixed center masks, all cells, or
//! learnable selection, and compared by validation MAE.

pub mod data;
pub mod model;
pub mod report;
pub mod train;

pub use data::{generate_scene, Pattern, SynthObject, SynthTarget, Task};
pub use model::LinearHeads;
pub use report::{compare, AblationConfig, BenchConfig, BenchReport, DataConfig, Summary};
pub use train::{run_strategy, train_model, LrSchedule, Metrics, RunOutcome, Strategy, TrainConfig, TrainedModel};
