//! Training and evaluation of the linear heads under one sample-selection strategy.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{overlay_object, SynthObject, CELLS, GRID_SIDE};
use super::model::{Forward, LinearHeads};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::gumbel::sample_gumbel;
use crate::losses::{masked_total_grad, wrap_angle, ObjectTarget};
use crate::schedule::{warmup_gate, TrainMode, TrainState, DEFAULT_WARMUP_FRACTION};
use crate::select::{sample_map_grad, select_infer, select_train_with_noise, LogitGrid, DEFAULT_TEMPERATURE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Center1x1,
    Grid3x3,
    Grid5x5,
    All7x7,
    Lss,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Center1x1,
        Strategy::Grid3x3,
        Strategy::Grid5x5,
        Strategy::All7x7,
        Strategy::Lss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Center1x1 => "center1x1",
            Strategy::Grid3x3 => "grid3x3",
            Strategy::Grid5x5 => "grid5x5",
            Strategy::All7x7 => "all7x7",
            Strategy::Lss => "lss",
        }
    }

    /// Training mask of a fixed strategy: a centered square of the given width.
    pub fn static_mask(self) -> Option<Vec<bool>> {
        let width = match self {
            Strategy::Center1x1 => 1,
            Strategy::Grid3x3 => 3,
            Strategy::Grid5x5 => 5,
            Strategy::All7x7 => GRID_SIDE,
            Strategy::Lss => return None,
        };
        let lo = (GRID_SIDE - width) / 2;
        let range = lo..lo + width;
        Some(
            (0..CELLS)
                .map(|i| range.contains(&(i / GRID_SIDE)) && range.contains(&(i % GRID_SIDE)))
                .collect(),
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero over the run.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    /// Fraction of epochs trained on all cells before selection starts (lss only).
    pub warmup_fraction: f64,
    pub temperature: f64,
    pub binarize: bool,
    pub mixup: bool,
    /// Probability that a training object is overlaid with a partner in a given epoch.
    pub mixup_probability: f64,
    pub mixup_lambda: f64,
    /// Standard deviation of the initial feature weights of every head.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 1e-2,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 4,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            temperature: DEFAULT_TEMPERATURE,
            binarize: false,
            mixup: false,
            mixup_probability: 0.5,
            mixup_lambda: 0.5,
            init_std: super::model::DEFAULT_INIT_STD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warm-up fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(0.0..=1.0).contains(&self.mixup_probability) {
            return bad(format!(
                "mixup probability must lie in [0, 1], got {}",
                self.mixup_probability
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!("init std must be non-negative, got {}", self.init_std));
        }
        if !(self.mixup_lambda > 0.0 && self.mixup_lambda < 1.0) {
            return Err(Error::InvalidLambda(self.mixup_lambda));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub depth: f64,
    pub dims: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_depth_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub strategy: Strategy,
    pub seed: u64,
    /// `None` when training produced a non-finite loss and was aborted.
    pub metrics: Option<Metrics>,
    pub warmup_epochs: usize,
    /// Mean `|selected ∩ support| / |selected|` over the last epoch (lss only).
    pub support_overlap: Option<f64>,
    pub curve: Vec<EpochStats>,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.metrics.is_none()
    }
}

fn target_of(obj: &SynthObject) -> ObjectTarget {
    ObjectTarget {
        depth: obj.gt.depth,
        dims: obj.gt.dims,
        yaw: obj.gt.yaw,
        offset: [0.0, 0.0],
    }
}

fn ones() -> Grid {
    Grid::filled(GRID_SIDE, 1.0)
}

fn mask_grid(mask: &[bool]) -> Grid {
    Grid::new(GRID_SIDE, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()).expect("square grid")
}

/// Strategy-consistent prediction for one object.
pub fn predict(strategy: Strategy, heads: &LinearHeads, obj: &SynthObject) -> Result<(f64, [f64; 3], f64)> {
    let fwd = heads.forward(obj);
    let p = &fwd.predictions;
    match strategy {
        Strategy::Lss => {
            let sel = select_infer(&LogitGrid::new(fwd.logits.clone(), 0)?, p)?;
            Ok((sel.depth, sel.dims, sel.yaw()))
        }
        Strategy::All7x7 => {
            let n = CELLS as f64;
            let depth = p.depth.values().iter().sum::<f64>() / n;
            let mut dims = [0.0; 3];
            for d in &p.dims {
                for k in 0..3 {
                    dims[k] += d[k] / n;
                }
            }
            let (s, c) = p
                .orientation
                .iter()
                .map(|o| o.decode())
                .fold((0.0, 0.0), |(s, c), y| (s + y.sin(), c + y.cos()));
            Ok((depth, dims, s.atan2(c)))
        }
        _ => {
            let i = CELLS / 2;
            Ok((p.depth.values()[i], p.dims[i], p.orientation[i].decode()))
        }
    }
}

pub fn evaluate(strategy: Strategy, heads: &LinearHeads, val: &[SynthObject]) -> Result<Metrics> {
    let mut m = Metrics {
        depth: 0.0,
        dims: 0.0,
        yaw: 0.0,
    };
    for obj in val {
        let (depth, dims, yaw) = predict(strategy, heads, obj)?;
        m.depth += (depth - obj.gt.depth).abs();
        m.dims += dims.iter().zip(&obj.gt.dims).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0;
        m.yaw += wrap_angle(yaw - obj.gt.yaw).abs();
    }
    let n = val.len().max(1) as f64;
    Ok(Metrics {
        depth: m.depth / n,
        dims: m.dims / n,
        yaw: m.yaw / n,
    })
}

struct StepOutput {
    loss: f64,
    depth_loss: f64,
    overlap: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn train_instance(
    strategy: Strategy,
    mode: TrainMode,
    heads: &LinearHeads,
    obj: &SynthObject,
    static_mask: Option<&Grid>,
    cfg: &TrainConfig,
    scale: f64,
    acc: &mut LinearHeads,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutput> {
    let fwd: Forward = heads.forward(obj);
    let target = target_of(obj);
    let (weights, selection) = match (strategy, mode) {
        (Strategy::Lss, TrainMode::WarmupAll) => (ones(), None),
        (Strategy::Lss, TrainMode::Lss) => {
            let noise = sample_gumbel(GRID_SIDE, rng);
            let logits = LogitGrid::new(fwd.logits.clone(), 0)?;
            let sel = select_train_with_noise(&logits, &noise, cfg.temperature, TrainMode::Lss, cfg.binarize)?;
            (sel.map.values.clone(), Some(sel))
        }
        _ => (static_mask.cloned().unwrap_or_else(ones), None),
    };
    let (loss, breakdown, grad) = masked_total_grad(&fwd.predictions, &target, &weights, true)?;
    let logit_grad = match &selection {
        Some(sel) => {
            let soft = sel.soft.as_ref().expect("selection keeps its soft map");
            let up = Grid::new(GRID_SIDE, grad.weights.clone())?;
            Some(sample_map_grad(&up, soft, &sel.map, cfg.temperature)?.into_values())
        }
        None => None,
    };
    heads.accumulate_grad(obj, &fwd, &grad, logit_grad.as_deref(), scale, acc);

    let wsum: f64 = weights.values().iter().sum();
    let depth_loss = if wsum > 0.0 {
        breakdown
            .depth
            .values()
            .iter()
            .zip(weights.values())
            .map(|(l, w)| l * w)
            .sum::<f64>()
            / wsum
    } else {
        0.0
    };
    let overlap = selection.map(|sel| {
        let picked: Vec<usize> = (0..CELLS).filter(|&i| sel.map.positive[i]).collect();
        let hits = picked.iter().filter(|&&i| obj.support_mask[i]).count();
        hits as f64 / picked.len().max(1) as f64
    });
    Ok(StepOutput {
        loss,
        depth_loss,
        overlap,
    })
}

/// Trains `strategy` on `train` and reports validation MAE on `val`.
///
/// A non-finite loss or weight aborts the run; the outcome then carries no metrics.
pub fn run_strategy(
    strategy: Strategy,
    train: &[SynthObject],
    val: &[SynthObject],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunOutcome> {
    train_model(strategy, train, val, cfg, seed).map(|t| t.outcome)
}

/// Final weights together with the run's outcome.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub heads: LinearHeads,
    pub outcome: RunOutcome,
}

/// [`run_strategy`], also returning the trained heads.
pub fn train_model(
    strategy: Strategy,
    train: &[SynthObject],
    val: &[SynthObject],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heads = LinearHeads::init(cfg.init_std, &mut rng);
    let warmup = if strategy == Strategy::Lss {
        cfg.warmup_fraction
    } else {
        0.0
    };
    let mut state = TrainState::new(cfg.epochs, warmup)?;
    let static_mask = strategy.static_mask().map(|m| mask_grid(&m));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut support_overlap = None;
    let mut diverged = false;

    for epoch in 0..cfg.epochs {
        let mode = warmup_gate(&state);
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_depth = 0.0;
        let mut instances = 0usize;
        let mut overlap_sum = 0.0;
        let mut overlap_n = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            // each mixed pair contributes both of its objects
            let mut items: Vec<SynthObject> = Vec::with_capacity(2 * batch.len());
            let mut mixed: Vec<bool> = Vec::with_capacity(2 * batch.len());
            for &i in batch {
                if cfg.mixup && train.len() > 1 && rng.random_bool(cfg.mixup_probability) {
                    let mut j = rng.random_range(0..train.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let half = (GRID_SIDE / 2) as i64;
                    let offset = (
                        rng.random_range(-half..=half) as isize,
                        rng.random_range(-half..=half) as isize,
                    );
                    let lambda = cfg.mixup_lambda;
                    items.push(overlay_object(&train[i], &train[j], lambda, offset));
                    items.push(overlay_object(
                        &train[j],
                        &train[i],
                        1.0 - lambda,
                        (-offset.0, -offset.1),
                    ));
                    mixed.extend([true, true]);
                } else {
                    items.push(train[i].clone());
                    mixed.push(false);
                }
            }
            let scale = 1.0 / items.len() as f64;
            let mut acc = LinearHeads::zeros();
            for (obj, &was_mixed) in items.iter().zip(&mixed) {
                let out = train_instance(
                    strategy,
                    mode,
                    &heads,
                    obj,
                    static_mask.as_ref(),
                    cfg,
                    scale,
                    &mut acc,
                    &mut rng,
                )?;
                epoch_loss += out.loss;
                epoch_depth += out.depth_loss;
                instances += 1;
                if let (Some(o), false) = (out.overlap, was_mixed) {
                    overlap_sum += o;
                    overlap_n += 1;
                }
            }
            if !epoch_loss.is_finite() || !acc.is_finite() {
                diverged = true;
                break;
            }
            heads.step(&acc, lr);
            if !heads.is_finite() {
                diverged = true;
                break;
            }
        }
        if diverged {
            break;
        }
        let n = instances.max(1) as f64;
        state.finish_epoch(epoch_depth / n);
        let val_mae = evaluate(strategy, &heads, val)?.depth;
        if !val_mae.is_finite() {
            diverged = true;
            break;
        }
        curve.push(EpochStats {
            epoch,
            mode,
            learning_rate: lr,
            train_loss: epoch_loss / n,
            val_depth_mae: val_mae,
        });
        if overlap_n > 0 {
            support_overlap = Some(overlap_sum / overlap_n as f64);
        }
    }

    let metrics = if diverged {
        None
    } else {
        Some(evaluate(strategy, &heads, val)?)
    };
    Ok(TrainedModel {
        heads,
        outcome: RunOutcome {
            strategy,
            seed,
            metrics,
            warmup_epochs: state.warmup_epochs(),
            support_overlap,
            curve,
        },
    })
}
