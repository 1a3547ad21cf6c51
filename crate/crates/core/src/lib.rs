//! Learnable sample selection for monocular 3D detection heads.
//!
//! The crate provides:
//!
//! - [`gumbel`]: Gumbel noise and the Gumbel-Max, Gumbel-Softmax and
//!   Gumbel-Top-k samplers.
//! - [`select`]: the selection pipeline (perturb, softmax, relative-distance
//!   divider, sample map) with a straight-through backward pass.
//! - [`losses`] and [`schedule`]: the masked 3D loss stack and the warm-up gate.
//! - [`gradcheck`]: central-difference verification of every hand-derived gradient.
//! - [`kitti`] and [`mixup`]: KITTI label/calibration I/O and MixUp3D augmentation.
//! - [`synth`]: a small synthetic benchmark comparing sample-selection strategies.

pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod gumbel;
pub mod kitti;
pub mod losses;
pub mod mixup;
pub mod schedule;
pub mod select;
pub mod synth;

pub use error::{Error, Result};
pub use grid::Grid;
pub use gumbel::{GumbelNoise, SoftMap};
pub use losses::{CellPredictions, LossBreakdown, ObjectTarget, OrientationBins};
pub use schedule::{TrainMode, TrainState};
pub use select::{DividerResult, LogitGrid, MapMode, SampleMap, Selection};
