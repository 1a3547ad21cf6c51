//! 3D property losses and their hand-derived gradients.
//!
//! Per cell: Laplacian aleatoric depth loss, L1 dimension loss and multi-bin
//! orientation loss. Per object: Smooth-L1 loss on the projected 3D center
//! offset. [`masked_total_loss`] weights the per-cell terms by a sample map.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::grid::Grid;

pub const ORIENTATION_BINS: usize = 12;
/// Angular width of one orientation bin.
pub const BIN_WIDTH: f64 = 2.0 * PI / ORIENTATION_BINS as f64;
/// Transition point between the quadratic and linear Smooth-L1 branches.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Per-bin (confidence logit, residual) head outputs for one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationBins {
    pub confidence: [f64; ORIENTATION_BINS],
    pub residual: [f64; ORIENTATION_BINS],
}

impl Default for OrientationBins {
    fn default() -> Self {
        Self {
            confidence: [0.0; ORIENTATION_BINS],
            residual: [0.0; ORIENTATION_BINS],
        }
    }
}

impl OrientationBins {
    /// Yaw decoded from the most confident bin plus its residual, wrapped to `[-π, π)`.
    pub fn decode(&self) -> f64 {
        let best = argmax(&self.confidence);
        wrap_angle(bin_center(best) + self.residual[best])
    }
}

/// Per-cell 3D predictions for one object's grid, plus the per-object offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPredictions {
    pub depth: Grid,
    pub log_uncertainty: Grid,
    pub dims: Vec<[f64; 3]>,
    pub orientation: Vec<OrientationBins>,
    pub offset: [f64; 2],
}

impl CellPredictions {
    pub fn zeros(side: usize) -> Self {
        let n = side * side;
        Self {
            depth: Grid::zeros(side),
            log_uncertainty: Grid::zeros(side),
            dims: vec![[0.0; 3]; n],
            orientation: vec![OrientationBins::default(); n],
            offset: [0.0; 2],
        }
    }

    pub fn side(&self) -> usize {
        self.depth.side()
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depth.len();
        for len in [self.log_uncertainty.len(), self.dims.len(), self.orientation.len()] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Ground truth for one object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTarget {
    pub depth: f64,
    pub dims: [f64; 3],
    pub yaw: f64,
    pub offset: [f64; 2],
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Center of orientation bin `index`: `-π + (2i + 1)π/12`.
pub fn bin_center(index: usize) -> f64 {
    -PI + (2 * index + 1) as f64 * PI / ORIENTATION_BINS as f64
}

/// Bin containing `theta` and the residual `theta - center`, in `(-π/12, π/12]`.
///
/// Bin `i` covers the half-open arc `(cᵢ - π/12, cᵢ + π/12]`, so `-π` (≡ `π`)
/// falls in the last bin with residual `+π/12`.
pub fn assign_bin(theta: f64) -> (usize, f64) {
    let theta = wrap_angle(theta);
    let raw = ((theta + PI) / BIN_WIDTH).ceil() as isize - 1;
    let index = raw.rem_euclid(ORIENTATION_BINS as isize) as usize;
    let mut residual = wrap_angle(theta - bin_center(index));
    let half = BIN_WIDTH / 2.0;
    if residual <= -half {
        residual += BIN_WIDTH;
    }
    // floating point at the arc boundaries can land one bin off
    if residual > half + 1e-12 {
        let index = (index + 1) % ORIENTATION_BINS;
        return (index, wrap_angle(theta - bin_center(index)));
    }
    (index, residual)
}

/// `√2·exp(−u)·|d_gt − d_pred| + u` with `u = log σ`.
pub fn depth_loss(d_pred: f64, u: f64, d_gt: f64) -> Result<f64> {
    depth_loss_grad(d_pred, u, d_gt).map(|(l, _, _)| l)
}

/// Depth loss with its partial derivatives `(loss, ∂/∂d_pred, ∂/∂u)`.
pub fn depth_loss_grad(d_pred: f64, u: f64, d_gt: f64) -> Result<(f64, f64, f64)> {
    ensure_finite(d_pred, "predicted depth")?;
    ensure_finite(u, "log uncertainty")?;
    ensure_finite(d_gt, "ground-truth depth")?;
    if d_gt <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "ground-truth depth must be positive, got {d_gt}"
        )));
    }
    let scale = SQRT_2 * (-u).exp();
    let err = d_pred - d_gt;
    let loss = scale * err.abs() + u;
    Ok((loss, scale * sign(err), 1.0 - scale * err.abs()))
}

/// Cross-entropy over bin confidences plus L1 on the ground-truth bin's residual.
pub fn multibin_orientation_loss(bins: &OrientationBins, theta_gt: f64) -> Result<f64> {
    multibin_orientation_grad(bins, theta_gt).map(|(l, _)| l)
}

pub fn multibin_orientation_grad(bins: &OrientationBins, theta_gt: f64) -> Result<(f64, OrientationBins)> {
    ensure_finite(theta_gt, "ground-truth yaw")?;
    if bins.confidence.iter().chain(&bins.residual).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("orientation bins"));
    }
    let (target, residual_gt) = assign_bin(theta_gt);
    let max = bins.confidence.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = bins.confidence.iter().map(|c| (c - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let cross_entropy = sum.ln() + max - bins.confidence[target];
    let res_err = bins.residual[target] - residual_gt;

    let mut grad = OrientationBins::default();
    for (g, e) in grad.confidence.iter_mut().zip(&exps) {
        *g = e / sum;
    }
    grad.confidence[target] -= 1.0;
    grad.residual[target] = sign(res_err);
    Ok((cross_entropy + res_err.abs(), grad))
}

/// L1 over `(h, w, l)`.
pub fn dim_loss(pred: &[f64; 3], gt: &[f64; 3]) -> Result<f64> {
    dim_loss_grad(pred, gt).map(|(l, _)| l)
}

pub fn dim_loss_grad(pred: &[f64; 3], gt: &[f64; 3]) -> Result<(f64, [f64; 3])> {
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dimensions"));
    }
    let mut grad = [0.0; 3];
    let mut loss = 0.0;
    for k in 0..3 {
        let e = pred[k] - gt[k];
        loss += e.abs();
        grad[k] = sign(e);
    }
    Ok((loss, grad))
}

fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < SMOOTH_L1_BETA {
        (0.5 * x * x / SMOOTH_L1_BETA, x / SMOOTH_L1_BETA)
    } else {
        (x.abs() - 0.5 * SMOOTH_L1_BETA, sign(x))
    }
}

/// Smooth-L1 summed over `(Δu, Δv)`.
pub fn offset_loss(pred: &[f64; 2], gt: &[f64; 2]) -> Result<f64> {
    offset_loss_grad(pred, gt).map(|(l, _)| l)
}

pub fn offset_loss_grad(pred: &[f64; 2], gt: &[f64; 2]) -> Result<(f64, [f64; 2])> {
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("offset"));
    }
    let (a, ga) = smooth_l1(pred[0] - gt[0]);
    let (b, gb) = smooth_l1(pred[1] - gt[1]);
    Ok((a + b, [ga, gb]))
}

/// Per-cell and per-object loss terms before masking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub depth: Grid,
    pub dims: Grid,
    pub orientation: Grid,
    pub offset: f64,
}

impl LossBreakdown {
    pub fn compute(preds: &CellPredictions, target: &ObjectTarget) -> Result<Self> {
        preds.validate()?;
        let side = preds.side();
        let n = preds.len();
        let mut depth = Vec::with_capacity(n);
        let mut dims = Vec::with_capacity(n);
        let mut orientation = Vec::with_capacity(n);
        for i in 0..n {
            depth.push(depth_loss(
                preds.depth.values()[i],
                preds.log_uncertainty.values()[i],
                target.depth,
            )?);
            dims.push(dim_loss(&preds.dims[i], &target.dims)?);
            orientation.push(multibin_orientation_loss(&preds.orientation[i], target.yaw)?);
        }
        Ok(Self {
            depth: Grid::new(side, depth)?,
            dims: Grid::new(side, dims)?,
            orientation: Grid::new(side, orientation)?,
            offset: offset_loss(&preds.offset, &target.offset)?,
        })
    }

    /// Sum of the three masked terms at cell `i`.
    pub fn cell_total(&self, i: usize) -> f64 {
        self.depth.values()[i] + self.dims.values()[i] + self.orientation.values()[i]
    }
}

/// `offset + Σᵢ wᵢ (depthᵢ + dimᵢ + orientationᵢ)`, divided by `Σ w` when
/// `normalize` is set. An all-zero weight map leaves only the offset term.
pub fn masked_total_loss(breakdown: &LossBreakdown, weights: &Grid, normalize: bool) -> Result<f64> {
    breakdown.depth.check_same_shape(weights)?;
    let w = weights.values();
    let masked: f64 = (0..w.len()).map(|i| w[i] * breakdown.cell_total(i)).sum();
    let wsum: f64 = w.iter().sum();
    let masked = if normalize {
        if wsum > 0.0 {
            masked / wsum
        } else {
            0.0
        }
    } else {
        masked
    };
    Ok(breakdown.offset + masked)
}

/// Gradient of the masked total with respect to every prediction and to the
/// weight map itself.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrad {
    pub depth: Vec<f64>,
    pub log_uncertainty: Vec<f64>,
    pub dims: Vec<[f64; 3]>,
    pub orientation: Vec<OrientationBins>,
    pub offset: [f64; 2],
    /// `∂total/∂wᵢ`; the upstream fed to the straight-through selection backward.
    pub weights: Vec<f64>,
}

/// Loss value, its breakdown and gradient for one object.
pub fn masked_total_grad(
    preds: &CellPredictions,
    target: &ObjectTarget,
    weights: &Grid,
    normalize: bool,
) -> Result<(f64, LossBreakdown, PredictionGrad)> {
    preds.validate()?;
    preds.depth.check_same_shape(weights)?;
    let n = preds.len();
    let w = weights.values();
    let wsum: f64 = w.iter().sum();
    let norm = if normalize {
        if wsum > 0.0 {
            1.0 / wsum
        } else {
            0.0
        }
    } else {
        1.0
    };

    let mut depth_l = Vec::with_capacity(n);
    let mut dim_l = Vec::with_capacity(n);
    let mut orient_l = Vec::with_capacity(n);
    let mut grad = PredictionGrad {
        depth: vec![0.0; n],
        log_uncertainty: vec![0.0; n],
        dims: vec![[0.0; 3]; n],
        orientation: vec![OrientationBins::default(); n],
        offset: [0.0; 2],
        weights: vec![0.0; n],
    };
    let mut masked = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        let (ld, gd, gu) = depth_loss_grad(preds.depth.values()[i], preds.log_uncertainty.values()[i], target.depth)?;
        let (ls, gs) = dim_loss_grad(&preds.dims[i], &target.dims)?;
        let (lo, go) = multibin_orientation_grad(&preds.orientation[i], target.yaw)?;
        depth_l.push(ld);
        dim_l.push(ls);
        orient_l.push(lo);
        let cell = ld + ls + lo;
        masked += wi * cell;

        let scale = wi * norm;
        if scale != 0.0 {
            grad.depth[i] = scale * gd;
            grad.log_uncertainty[i] = scale * gu;
            grad.dims[i] = gs.map(|g| scale * g);
            for k in 0..ORIENTATION_BINS {
                grad.orientation[i].confidence[k] = scale * go.confidence[k];
                grad.orientation[i].residual[k] = scale * go.residual[k];
            }
        }
    }
    let masked_mean = masked * norm;
    for i in 0..n {
        let cell = depth_l[i] + dim_l[i] + orient_l[i];
        grad.weights[i] = if normalize { norm * (cell - masked_mean) } else { cell };
    }
    let (lo, go) = offset_loss_grad(&preds.offset, &target.offset)?;
    grad.offset = go;
    let side = preds.side();
    let breakdown = LossBreakdown {
        depth: Grid::new(side, depth_l)?,
        dims: Grid::new(side, dim_l)?,
        orientation: Grid::new(side, orient_l)?,
        offset: lo,
    };
    Ok((lo + masked_mean, breakdown, grad))
}
