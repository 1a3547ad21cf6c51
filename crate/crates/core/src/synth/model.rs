//! Shared per-cell linear heads.
//!
//! One weight matrix maps each cell's features (plus a bias input) to depth,
//! log-uncertainty, dimensions, orientation bins and a selection logit. Depth
//! and dimensions are produced in standardized units and rescaled to meters.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{SynthObject, CELLS, DEPTH_MEAN, DEPTH_SCALE, DIM_MEAN, DIM_SCALE, FEATURES, GRID_SIDE};
use crate::grid::Grid;
use crate::losses::{CellPredictions, PredictionGrad, ORIENTATION_BINS};

pub const INPUTS: usize = FEATURES + 1;
pub const OUT_DEPTH: usize = 0;
pub const OUT_UNCERTAINTY: usize = 1;
pub const OUT_DIMS: usize = 2;
pub const OUT_CONFIDENCE: usize = OUT_DIMS + 3;
pub const OUT_RESIDUAL: usize = OUT_CONFIDENCE + ORIENTATION_BINS;
pub const OUT_LOGIT: usize = OUT_RESIDUAL + ORIENTATION_BINS;
pub const OUTPUTS: usize = OUT_LOGIT + 1;
/// Log-uncertainty is clamped to this range; the clamp has zero gradient outside.
pub const UNCERTAINTY_RANGE: (f64, f64) = (-2.0, 4.0);
pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHeads {
    /// `weights[output][input]`; the last input is the bias.
    pub weights: Vec<[f64; INPUTS]>,
}

/// Raw outputs for every cell of one object.
#[derive(Clone, Debug)]
pub struct Forward {
    pub outputs: Vec<[f64; OUTPUTS]>,
    pub predictions: CellPredictions,
    pub logits: Grid,
}

fn input(x: &[f64; FEATURES]) -> [f64; INPUTS] {
    let mut v = [1.0; INPUTS];
    v[..FEATURES].copy_from_slice(x);
    v
}

impl LinearHeads {
    pub fn zeros() -> Self {
        Self {
            weights: vec![[0.0; INPUTS]; OUTPUTS],
        }
    }

    /// Gaussian feature weights with standard deviation `std`, zero biases
    /// (mean depth and mean dimensions) and a zero logit row (uniform selection).
    pub fn init<R: Rng + ?Sized>(std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut heads = Self::zeros();
        for (k, row) in heads.weights.iter_mut().enumerate() {
            if k == OUT_LOGIT {
                continue;
            }
            for w in row.iter_mut().take(FEATURES) {
                *w = normal.sample(rng);
            }
        }
        heads
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|w| w.is_finite())
    }

    fn cell_outputs(&self, x: &[f64; FEATURES]) -> [f64; OUTPUTS] {
        let v = input(x);
        let mut out = [0.0; OUTPUTS];
        for (o, row) in out.iter_mut().zip(&self.weights) {
            *o = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn forward(&self, object: &SynthObject) -> Forward {
        let outputs: Vec<[f64; OUTPUTS]> = object.features.iter().map(|x| self.cell_outputs(x)).collect();
        let mut preds = CellPredictions::zeros(GRID_SIDE);
        let mut logits = vec![0.0; CELLS];
        for (i, o) in outputs.iter().enumerate() {
            preds.depth.values_mut()[i] = DEPTH_MEAN + DEPTH_SCALE * o[OUT_DEPTH];
            preds.log_uncertainty.values_mut()[i] = o[OUT_UNCERTAINTY].clamp(UNCERTAINTY_RANGE.0, UNCERTAINTY_RANGE.1);
            for k in 0..3 {
                preds.dims[i][k] = DIM_MEAN[k] + DIM_SCALE[k] * o[OUT_DIMS + k];
            }
            preds.orientation[i]
                .confidence
                .copy_from_slice(&o[OUT_CONFIDENCE..OUT_CONFIDENCE + ORIENTATION_BINS]);
            preds.orientation[i]
                .residual
                .copy_from_slice(&o[OUT_RESIDUAL..OUT_RESIDUAL + ORIENTATION_BINS]);
            logits[i] = o[OUT_LOGIT];
        }
        Forward {
            outputs,
            predictions: preds,
            logits: Grid::new(GRID_SIDE, logits).expect("square grid"),
        }
    }

    /// Accumulates `scale ×` the weight gradient of one object into `acc`.
    ///
    /// `logit_grad` is `∂loss/∂logits`; pass `None` when selection is not trained.
    pub fn accumulate_grad(
        &self,
        object: &SynthObject,
        fwd: &Forward,
        grad: &PredictionGrad,
        logit_grad: Option<&[f64]>,
        scale: f64,
        acc: &mut LinearHeads,
    ) {
        for i in 0..CELLS {
            let mut g = [0.0; OUTPUTS];
            g[OUT_DEPTH] = grad.depth[i] * DEPTH_SCALE;
            let u = fwd.outputs[i][OUT_UNCERTAINTY];
            if u > UNCERTAINTY_RANGE.0 && u < UNCERTAINTY_RANGE.1 {
                g[OUT_UNCERTAINTY] = grad.log_uncertainty[i];
            }
            for k in 0..3 {
                g[OUT_DIMS + k] = grad.dims[i][k] * DIM_SCALE[k];
            }
            g[OUT_CONFIDENCE..OUT_CONFIDENCE + ORIENTATION_BINS].copy_from_slice(&grad.orientation[i].confidence);
            g[OUT_RESIDUAL..OUT_RESIDUAL + ORIENTATION_BINS].copy_from_slice(&grad.orientation[i].residual);
            if let Some(lg) = logit_grad {
                g[OUT_LOGIT] = lg[i];
            }
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let v = input(&object.features[i]);
            for (row, gk) in acc.weights.iter_mut().zip(&g) {
                if *gk == 0.0 {
                    continue;
                }
                let s = scale * gk;
                for (w, x) in row.iter_mut().zip(&v) {
                    *w += s * x;
                }
            }
        }
    }

    /// `self -= lr · grad`.
    pub fn step(&mut self, grad: &LinearHeads, lr: f64) {
        for (row, g) in self.weights.iter_mut().zip(&grad.weights) {
            for (w, d) in row.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{masked_total_grad, ObjectTarget};
    use crate::synth::data::{generate_object, Pattern};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss_at(heads: &LinearHeads, obj: &SynthObject, target: &ObjectTarget, weights: &Grid) -> f64 {
        let fwd = heads.forward(obj);
        masked_total_grad(&fwd.predictions, target, weights, true).unwrap().0
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obj = generate_object(Pattern::RandomBlob, 0.05, &mut rng);
        let mut heads = LinearHeads::init(DEFAULT_INIT_STD, &mut rng);
        for row in heads.weights.iter_mut() {
            for w in row.iter_mut() {
                *w += rng.random_range(-0.3..0.3);
            }
        }
        let target = ObjectTarget {
            depth: obj.gt.depth,
            dims: obj.gt.dims,
            yaw: obj.gt.yaw,
            offset: [0.0, 0.0],
        };
        let weights = Grid::new(
            GRID_SIDE,
            obj.support_mask.iter().map(|&s| if s { 0.7 } else { 0.0 }).collect(),
        )
        .unwrap();
        let fwd = heads.forward(&obj);
        let (_, _, g) = masked_total_grad(&fwd.predictions, &target, &weights, true).unwrap();
        let mut acc = LinearHeads::zeros();
        heads.accumulate_grad(&obj, &fwd, &g, None, 1.0, &mut acc);

        let h = 1e-6;
        for k in [
            OUT_DEPTH,
            OUT_UNCERTAINTY,
            OUT_DIMS + 1,
            OUT_CONFIDENCE + 4,
            OUT_RESIDUAL + 7,
        ] {
            for j in [0, 3, FEATURES] {
                let mut p = heads.clone();
                p.weights[k][j] += h;
                let mut m = heads.clone();
                m.weights[k][j] -= h;
                let numeric = (loss_at(&p, &obj, &target, &weights) - loss_at(&m, &obj, &target, &weights)) / (2.0 * h);
                let analytic = acc.weights[k][j];
                assert!(
                    (numeric - analytic).abs() <= 1e-5 * numeric.abs().max(1.0),
                    "output {k} input {j}: {analytic} vs {numeric}"
                );
            }
        }
    }
}
