//! Central finite-difference checks for every hand-derived gradient.
//!
//! Each [`OpId`] names a differentiable routine and fixes how a flat point
//! vector is split into differentiated variables and held-constant context.
//! [`grad_check`] compares the analytic Jacobian against
//! `(f(x + h·eⱼ) − f(x − h·eⱼ)) / 2h` column by column.
//!
//! Relative error is `|a − n| / max(|a|, |n|, 1)`: relative for components
//! of magnitude above one, absolute below, so that vanishing components do
//! not turn rounding noise into large ratios.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::gumbel::{softmax, softmax_jacobian, SoftMap};
use crate::losses::{
    assign_bin, depth_loss_grad, dim_loss_grad, masked_total_grad, multibin_orientation_grad, offset_loss_grad,
    CellPredictions, ObjectTarget, OrientationBins, ORIENTATION_BINS, SMOOTH_L1_BETA,
};
use crate::select::{build_sample_map, relative_distance_divide, sample_map_grad, SampleMap};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Distance by which variables sitting on a kink are moved before checking.
pub const KINK_OFFSET: f64 = 1e-3;

const SOFTMAX_CELLS: usize = 49;
const PIPELINE_SIDE: usize = 3;
const CELL_VARS: usize = 2 + 3 + 2 * ORIENTATION_BINS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpId {
    /// Full Jacobian of the tempered softmax with respect to the logits.
    GumbelSoftmax,
    DepthLoss,
    DimLoss,
    OffsetLoss,
    OrientationLoss,
    /// Normalized masked total with respect to every per-cell prediction and the offset.
    MaskedTotal,
    /// `Σ upᵢ·Sample_Sᵢ(Φ)` with the divider's cut held fixed.
    StraightThrough,
    /// Logits and predictions jointly through selection and the masked total.
    Pipeline,
}

impl OpId {
    pub const ALL: [OpId; 8] = [
        OpId::GumbelSoftmax,
        OpId::DepthLoss,
        OpId::DimLoss,
        OpId::OffsetLoss,
        OpId::OrientationLoss,
        OpId::MaskedTotal,
        OpId::StraightThrough,
        OpId::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpId::GumbelSoftmax => "gumbel_softmax",
            OpId::DepthLoss => "depth_loss",
            OpId::DimLoss => "dim_loss",
            OpId::OffsetLoss => "offset_loss",
            OpId::OrientationLoss => "orientation_loss",
            OpId::MaskedTotal => "masked_total",
            OpId::StraightThrough => "straight_through",
            OpId::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpId::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown op `{s}`")))
    }
}

/// A point for one op: the variables being differentiated plus fixed context.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckPoint {
    pub variables: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub max_relative_error: f64,
    /// Set when variables were moved off a kink before differencing.
    pub kink_perturbed: bool,
}

/// Scalar or vector function of the variables, with its analytic Jacobian.
trait Differentiable {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>>;
    /// `(variable index, kink location)` pairs.
    fn kinks(&self, _x: &[f64]) -> Vec<(usize, f64)> {
        Vec::new()
    }
}

struct SoftmaxOp {
    temperature: f64,
}

impl Differentiable for SoftmaxOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax(x, self.temperature)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(softmax_jacobian(&softmax(x, self.temperature)?, self.temperature))
    }
}

struct DepthOp {
    gt: f64,
}

impl Differentiable for DepthOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![depth_loss_grad(x[0], x[1], self.gt)?.0])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (_, gd, gu) = depth_loss_grad(x[0], x[1], self.gt)?;
        Ok(vec![vec![gd, gu]])
    }

    fn kinks(&self, _x: &[f64]) -> Vec<(usize, f64)> {
        vec![(0, self.gt)]
    }
}

struct DimOp {
    gt: [f64; 3],
}

impl Differentiable for DimOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![dim_loss_grad(&[x[0], x[1], x[2]], &self.gt)?.0])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![dim_loss_grad(&[x[0], x[1], x[2]], &self.gt)?.1.to_vec()])
    }

    fn kinks(&self, _x: &[f64]) -> Vec<(usize, f64)> {
        (0..3).map(|k| (k, self.gt[k])).collect()
    }
}

struct OffsetOp {
    gt: [f64; 2],
}

impl Differentiable for OffsetOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![offset_loss_grad(&[x[0], x[1]], &self.gt)?.0])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![offset_loss_grad(&[x[0], x[1]], &self.gt)?.1.to_vec()])
    }

    fn kinks(&self, _x: &[f64]) -> Vec<(usize, f64)> {
        // second-derivative jump where the quadratic branch meets the linear one
        let mut out = Vec::new();
        for k in 0..2 {
            out.push((k, self.gt[k] + SMOOTH_L1_BETA));
            out.push((k, self.gt[k] - SMOOTH_L1_BETA));
        }
        out
    }
}

fn bins_from(x: &[f64]) -> OrientationBins {
    let mut bins = OrientationBins::default();
    bins.confidence.copy_from_slice(&x[..ORIENTATION_BINS]);
    bins.residual
        .copy_from_slice(&x[ORIENTATION_BINS..2 * ORIENTATION_BINS]);
    bins
}

fn bins_to(bins: &OrientationBins, out: &mut Vec<f64>) {
    out.extend_from_slice(&bins.confidence);
    out.extend_from_slice(&bins.residual);
}

struct OrientationOp {
    theta: f64,
}

impl Differentiable for OrientationOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![multibin_orientation_grad(&bins_from(x), self.theta)?.0])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (_, g) = multibin_orientation_grad(&bins_from(x), self.theta)?;
        let mut row = Vec::with_capacity(2 * ORIENTATION_BINS);
        bins_to(&g, &mut row);
        Ok(vec![row])
    }

    fn kinks(&self, _x: &[f64]) -> Vec<(usize, f64)> {
        let (k, r) = assign_bin(self.theta);
        vec![(ORIENTATION_BINS + k, r)]
    }
}

/// Per-cell layout: depth, log-uncertainty, dims (3), confidences (12), residuals (12).
fn unpack_predictions(side: usize, x: &[f64]) -> CellPredictions {
    let n = side * side;
    let mut preds = CellPredictions::zeros(side);
    for i in 0..n {
        let c = &x[i * CELL_VARS..(i + 1) * CELL_VARS];
        preds.depth.values_mut()[i] = c[0];
        preds.log_uncertainty.values_mut()[i] = c[1];
        preds.dims[i] = [c[2], c[3], c[4]];
        preds.orientation[i] = bins_from(&c[5..]);
    }
    preds.offset = [x[n * CELL_VARS], x[n * CELL_VARS + 1]];
    preds
}

fn pack_prediction_grad(grad: &crate::losses::PredictionGrad) -> Vec<f64> {
    let n = grad.depth.len();
    let mut out = Vec::with_capacity(n * CELL_VARS + 2);
    for i in 0..n {
        out.push(grad.depth[i]);
        out.push(grad.log_uncertainty[i]);
        out.extend_from_slice(&grad.dims[i]);
        bins_to(&grad.orientation[i], &mut out);
    }
    out.extend_from_slice(&grad.offset);
    out
}

fn prediction_kinks(side: usize, x: &[f64], target: &ObjectTarget, offset: usize) -> Vec<(usize, f64)> {
    let n = side * side;
    let (bin, residual) = assign_bin(target.yaw);
    let mut out = Vec::new();
    for i in 0..n {
        let base = offset + i * CELL_VARS;
        out.push((base, target.depth));
        for k in 0..3 {
            out.push((base + 2 + k, target.dims[k]));
        }
        out.push((base + 5 + ORIENTATION_BINS + bin, residual));
    }
    let off = offset + n * CELL_VARS;
    for k in 0..2 {
        out.push((off + k, target.offset[k] + SMOOTH_L1_BETA));
        out.push((off + k, target.offset[k] - SMOOTH_L1_BETA));
    }
    let _ = x;
    out
}

fn target_from(context: &[f64]) -> ObjectTarget {
    ObjectTarget {
        depth: context[0],
        dims: [context[1], context[2], context[3]],
        yaw: context[4],
        offset: [context[5], context[6]],
    }
}

struct MaskedTotalOp {
    side: usize,
    target: ObjectTarget,
    weights: Grid,
}

impl Differentiable for MaskedTotalOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let preds = unpack_predictions(self.side, x);
        Ok(vec![masked_total_grad(&preds, &self.target, &self.weights, true)?.0])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let preds = unpack_predictions(self.side, x);
        let (_, _, g) = masked_total_grad(&preds, &self.target, &self.weights, true)?;
        Ok(vec![pack_prediction_grad(&g)])
    }

    fn kinks(&self, x: &[f64]) -> Vec<(usize, f64)> {
        prediction_kinks(self.side, x, &self.target, 0)
    }
}

/// Sample map for `logits` with the cut frozen to `positive`.
fn frozen_map(logits: &[f64], positive: &[bool], temperature: f64) -> Result<(SoftMap, SampleMap)> {
    let side = (logits.len() as f64).sqrt().round() as usize;
    let probs = softmax(logits, temperature)?;
    let soft = SoftMap {
        values: Grid::new(side, probs)?,
        temperature,
        perturbed: logits.to_vec(),
    };
    let values: Vec<f64> = soft
        .as_slice()
        .iter()
        .zip(positive)
        .map(|(&s, &keep)| if keep { s } else { 0.0 })
        .collect();
    let map = SampleMap {
        values: Grid::new(side, values)?,
        positive: positive.to_vec(),
        positive_count: positive.iter().filter(|&&p| p).count(),
        threshold_index: None,
        mode: crate::select::MapMode::Lss,
    };
    Ok((soft, map))
}

fn cut_at(logits: &[f64], temperature: f64) -> Result<Vec<bool>> {
    let side = (logits.len() as f64).sqrt().round() as usize;
    let soft = SoftMap {
        values: Grid::new(side, softmax(logits, temperature)?)?,
        temperature,
        perturbed: logits.to_vec(),
    };
    let divider = relative_distance_divide(&soft)?;
    Ok(build_sample_map(&soft, &divider, false).positive)
}

struct StraightThroughOp {
    upstream: Vec<f64>,
    positive: Vec<bool>,
    temperature: f64,
}

impl Differentiable for StraightThroughOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, map) = frozen_map(x, &self.positive, self.temperature)?;
        Ok(vec![map
            .values
            .values()
            .iter()
            .zip(&self.upstream)
            .map(|(m, u)| m * u)
            .sum()])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (soft, map) = frozen_map(x, &self.positive, self.temperature)?;
        let up = Grid::new(soft.values.side(), self.upstream.clone())?;
        Ok(vec![sample_map_grad(&up, &soft, &map, self.temperature)?.into_values()])
    }
}

/// Variables: `side²` logits followed by all per-cell predictions and the offset.
struct PipelineOp {
    side: usize,
    target: ObjectTarget,
    positive: Vec<bool>,
    temperature: f64,
}

impl Differentiable for PipelineOp {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.side * self.side;
        let (_, map) = frozen_map(&x[..n], &self.positive, self.temperature)?;
        let preds = unpack_predictions(self.side, &x[n..]);
        Ok(vec![masked_total_grad(&preds, &self.target, &map.values, true)?.0])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.side * self.side;
        let (soft, map) = frozen_map(&x[..n], &self.positive, self.temperature)?;
        let preds = unpack_predictions(self.side, &x[n..]);
        let (_, _, g) = masked_total_grad(&preds, &self.target, &map.values, true)?;
        let up = Grid::new(self.side, g.weights.clone())?;
        let mut row = sample_map_grad(&up, &soft, &map, self.temperature)?.into_values();
        row.extend(pack_prediction_grad(&g));
        Ok(vec![row])
    }

    fn kinks(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let n = self.side * self.side;
        prediction_kinks(self.side, x, &self.target, n)
    }
}

fn build_op(op: OpId, point: &CheckPoint) -> Result<Box<dyn Differentiable>> {
    let c = &point.context;
    let need = |len: usize| -> Result<()> {
        if c.len() < len {
            Err(Error::InvalidInput(format!(
                "{op}: expected {len} context values, got {}",
                c.len()
            )))
        } else {
            Ok(())
        }
    };
    Ok(match op {
        OpId::GumbelSoftmax => {
            need(1)?;
            Box::new(SoftmaxOp { temperature: c[0] })
        }
        OpId::DepthLoss => {
            need(1)?;
            Box::new(DepthOp { gt: c[0] })
        }
        OpId::DimLoss => {
            need(3)?;
            Box::new(DimOp { gt: [c[0], c[1], c[2]] })
        }
        OpId::OffsetLoss => {
            need(2)?;
            Box::new(OffsetOp { gt: [c[0], c[1]] })
        }
        OpId::OrientationLoss => {
            need(1)?;
            Box::new(OrientationOp { theta: c[0] })
        }
        OpId::MaskedTotal => {
            let n = PIPELINE_SIDE * PIPELINE_SIDE;
            need(7 + n)?;
            Box::new(MaskedTotalOp {
                side: PIPELINE_SIDE,
                target: target_from(c),
                weights: Grid::new(PIPELINE_SIDE, c[7..7 + n].to_vec())?,
            })
        }
        OpId::StraightThrough => {
            let n = point.variables.len();
            need(1 + n)?;
            let temperature = c[0];
            Box::new(StraightThroughOp {
                upstream: c[1..1 + n].to_vec(),
                positive: cut_at(&point.variables, temperature)?,
                temperature,
            })
        }
        OpId::Pipeline => {
            need(8)?;
            let n = PIPELINE_SIDE * PIPELINE_SIDE;
            let temperature = c[7];
            Box::new(PipelineOp {
                side: PIPELINE_SIDE,
                target: target_from(c),
                positive: cut_at(&point.variables[..n], temperature)?,
                temperature,
            })
        }
    })
}

/// Draws a random point in the op's domain.
pub fn random_point<R: Rng + ?Sized>(op: OpId, rng: &mut R) -> CheckPoint {
    let target = |rng: &mut R| -> Vec<f64> {
        vec![
            rng.random_range(5.0..60.0),
            rng.random_range(1.0..2.0),
            rng.random_range(1.4..2.0),
            rng.random_range(3.0..5.0),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ]
    };
    let cell = |rng: &mut R, out: &mut Vec<f64>| {
        out.push(rng.random_range(5.0..60.0));
        out.push(rng.random_range(-2.0..2.0));
        for _ in 0..3 {
            out.push(rng.random_range(0.5..5.0));
        }
        for _ in 0..ORIENTATION_BINS {
            out.push(rng.random_range(-3.0..3.0));
        }
        for _ in 0..ORIENTATION_BINS {
            out.push(rng.random_range(-0.5..0.5));
        }
    };
    let n_pipe = PIPELINE_SIDE * PIPELINE_SIDE;
    match op {
        OpId::GumbelSoftmax => CheckPoint {
            variables: (0..SOFTMAX_CELLS).map(|_| rng.random_range(-5.0..5.0)).collect(),
            context: vec![rng.random_range(0.5..2.0)],
        },
        OpId::DepthLoss => CheckPoint {
            variables: vec![rng.random_range(1.0..60.0), rng.random_range(-2.0..2.0)],
            context: vec![rng.random_range(1.0..60.0)],
        },
        OpId::DimLoss => CheckPoint {
            variables: (0..3).map(|_| rng.random_range(0.5..5.0)).collect(),
            context: (0..3).map(|_| rng.random_range(0.5..5.0)).collect(),
        },
        OpId::OffsetLoss => CheckPoint {
            variables: (0..2).map(|_| rng.random_range(-4.0..4.0)).collect(),
            context: (0..2).map(|_| rng.random_range(-4.0..4.0)).collect(),
        },
        OpId::OrientationLoss => {
            let mut variables = Vec::new();
            for _ in 0..ORIENTATION_BINS {
                variables.push(rng.random_range(-3.0..3.0));
            }
            for _ in 0..ORIENTATION_BINS {
                variables.push(rng.random_range(-0.5..0.5));
            }
            CheckPoint {
                variables,
                context: vec![rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)],
            }
        }
        OpId::MaskedTotal => {
            let mut variables = Vec::new();
            for _ in 0..n_pipe {
                cell(rng, &mut variables);
            }
            variables.push(rng.random_range(-3.0..3.0));
            variables.push(rng.random_range(-3.0..3.0));
            let mut context = target(rng);
            // a map with some exact zeros, as the divider produces
            for i in 0..n_pipe {
                context.push(if i % 3 == 1 { 0.0 } else { rng.random_range(0.01..1.0) });
            }
            CheckPoint { variables, context }
        }
        OpId::StraightThrough => {
            let n = SOFTMAX_CELLS;
            let variables = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut context = vec![rng.random_range(0.5..2.0)];
            context.extend((0..n).map(|_| rng.random_range(-2.0..2.0)));
            CheckPoint { variables, context }
        }
        OpId::Pipeline => {
            let mut variables: Vec<f64> = (0..n_pipe).map(|_| rng.random_range(-3.0..3.0)).collect();
            for _ in 0..n_pipe {
                cell(rng, &mut variables);
            }
            variables.push(rng.random_range(-3.0..3.0));
            variables.push(rng.random_range(-3.0..3.0));
            let mut context = target(rng);
            context.push(rng.random_range(0.5..2.0));
            CheckPoint { variables, context }
        }
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares the hand-derived Jacobian of `op` at `point` with central differences.
///
/// Variables closer than `10·step` to a kink are first moved [`KINK_OFFSET`]
/// away from it; the outcome records that this happened.
pub fn grad_check(op: OpId, point: &CheckPoint, step: f64) -> Result<CheckOutcome> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    let f = build_op(op, point)?;
    let mut x = point.variables.clone();
    let mut kink_perturbed = false;
    for (index, kink) in f.kinks(&x) {
        let d = x[index] - kink;
        if d.abs() < 10.0 * step {
            x[index] = kink + if d < 0.0 { -KINK_OFFSET } else { KINK_OFFSET };
            kink_perturbed = true;
        }
    }

    let jac = f.jacobian(&x)?;
    let mut max_err = 0.0f64;
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let plus = f.eval(&probe)?;
        probe[j] = x[j] - step;
        let minus = f.eval(&probe)?;
        probe[j] = x[j];
        for (row, (p, m)) in plus.iter().zip(&minus).enumerate() {
            let numeric = (p - m) / (2.0 * step);
            max_err = max_err.max(relative_error(jac[row][j], numeric));
        }
    }
    Ok(CheckOutcome {
        max_relative_error: max_err,
        kink_perturbed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: OpId,
    pub points: usize,
    pub max_relative_error: f64,
    pub kink_perturbations: usize,
    pub passed: bool,
}

/// Runs [`grad_check`] on `points` random points per op.
pub fn run_suite(ops: &[OpId], points: usize, step: f64, tolerance: f64, seed: u64) -> Result<Vec<OpReport>> {
    ops.iter()
        .map(|&op| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (op as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut worst = 0.0f64;
            let mut kinks = 0;
            for _ in 0..points {
                let point = random_point(op, &mut rng);
                let outcome = grad_check(op, &point, step)?;
                worst = worst.max(outcome.max_relative_error);
                kinks += outcome.kink_perturbed as usize;
            }
            Ok(OpReport {
                op,
                points,
                max_relative_error: worst,
                kink_perturbations: kinks,
                passed: worst < tolerance,
            })
        })
        .collect()
}
