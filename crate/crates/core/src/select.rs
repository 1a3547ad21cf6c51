//! Learnable sample selection.
//!
//! Training: perturb the logit grid with Gumbel noise, take a tempered
//! softmax, sort it, and cut at the largest ratio between adjacent sorted
//! values. Cells below the cut are zeroed; the rest form the sample map that
//! weights the per-cell losses. The cut is hyperparameter-free and adapts the
//! number of positives per object.
//!
//! Backward treats the cut as identity on retained cells (straight-through),
//! so gradients reach the logits through the softmax Jacobian.
//!
//! Inference: the cell with the largest logit, no noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::gumbel::{self, descending, gumbel_softmax, sample_gumbel, GumbelNoise, SoftMap};
use crate::losses::{CellPredictions, OrientationBins};
use crate::schedule::TrainMode;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Logarithmic selection probabilities for one object's grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitGrid {
    pub values: Grid,
    pub object_id: u64,
}

impl LogitGrid {
    pub fn new(values: Grid, object_id: u64) -> Result<Self> {
        if values.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self { values, object_id })
    }

    pub fn side(&self) -> usize {
        self.values.side()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    WarmupAll,
    Lss,
    HardBinarized,
}

/// Per-cell loss weights; zeros mark negative samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMap {
    pub values: Grid,
    pub positive: Vec<bool>,
    pub positive_count: usize,
    /// Sorted position of the threshold cell (0-based); `None` when the
    /// divider was not run (warm-up or single-cell grids).
    pub threshold_index: Option<usize>,
    pub mode: MapMode,
}

impl SampleMap {
    pub fn all_ones(side: usize) -> Self {
        let n = side * side;
        Self {
            values: Grid::filled(side, 1.0),
            positive: vec![true; n],
            positive_count: n,
            threshold_index: None,
            mode: MapMode::WarmupAll,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DividerResult {
    /// Soft-map values in descending order.
    pub sorted_values: Vec<f64>,
    /// Cell index of each sorted entry (the sort permutation).
    pub order: Vec<usize>,
    /// `sorted[i] / sorted[i + 1]`, evaluated as `exp(Δφ̂ / τ)`.
    pub ratios: Vec<f64>,
    /// 0-based index into `ratios` of the largest ratio; sorted positions
    /// `0..=split_index` are at or above the threshold.
    pub split_index: usize,
}

impl DividerResult {
    pub fn threshold(&self) -> f64 {
        self.sorted_values[self.split_index]
    }
}

fn sort_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| descending(keys, a, b));
    order
}

/// Index of the maximum, preferring the later index on ties.
fn last_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v >= values[best] {
            best = i;
        }
    }
    best
}

/// Splits the sorted soft map at the largest adjacent ratio.
///
/// Because `Sᵢ / Sᵢ₊₁ = exp((φ̂ᵢ − φ̂ᵢ₊₁)/τ)`, the argmax is taken over the
/// perturbed-logit gaps, which stays exact where probabilities underflow.
/// Equal maximal ratios resolve toward the later split (more positives).
pub fn relative_distance_divide(soft: &SoftMap) -> Result<DividerResult> {
    divide_relative(soft.as_slice(), &soft.perturbed, soft.temperature)
}

/// [`relative_distance_divide`] over flat vectors of any length ≥ 2.
pub fn divide_relative(probs: &[f64], perturbed: &[f64], temperature: f64) -> Result<DividerResult> {
    check_divider_input(probs, perturbed)?;
    let order = sort_order(perturbed);
    let sorted_values: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
    let gaps: Vec<f64> = order
        .windows(2)
        .map(|w| (perturbed[w[0]] - perturbed[w[1]]) / temperature)
        .collect();
    let ratios = gaps.iter().map(|g| g.exp()).collect();
    let split_index = last_argmax(&gaps);
    Ok(DividerResult {
        sorted_values,
        order,
        ratios,
        split_index,
    })
}

/// Reference divider using absolute gaps `Sᵢ − Sᵢ₊₁`; same tie-break.
pub fn absolute_distance_divide(soft: &SoftMap) -> Result<DividerResult> {
    divide_absolute(soft.as_slice(), &soft.perturbed)
}

pub fn divide_absolute(probs: &[f64], perturbed: &[f64]) -> Result<DividerResult> {
    check_divider_input(probs, perturbed)?;
    let order = sort_order(perturbed);
    let sorted_values: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
    let diffs: Vec<f64> = sorted_values.windows(2).map(|w| w[0] - w[1]).collect();
    let ratios = sorted_values.windows(2).map(|w| w[0] / w[1]).collect();
    let split_index = last_argmax(&diffs);
    Ok(DividerResult {
        sorted_values,
        order,
        ratios,
        split_index,
    })
}

fn check_divider_input(probs: &[f64], perturbed: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::DegenerateGrid(probs.len()));
    }
    if perturbed.len() != probs.len() {
        return Err(Error::ShapeMismatch {
            expected: probs.len(),
            actual: perturbed.len(),
        });
    }
    Ok(())
}

/// Number of cells at or above the divider's threshold.
pub fn positives_at_split(perturbed: &[f64], divider: &DividerResult) -> usize {
    let key = perturbed[divider.order[divider.split_index]];
    perturbed.iter().filter(|&&p| p >= key).count()
}

/// Zeroes every cell whose perturbed logit lies below the threshold cell's.
/// Retained cells keep their soft value, or become 1 with `binarize`.
pub fn build_sample_map(soft: &SoftMap, divider: &DividerResult, binarize: bool) -> SampleMap {
    let threshold_key = soft.perturbed[divider.order[divider.split_index]];
    let positive: Vec<bool> = soft.perturbed.iter().map(|&p| p >= threshold_key).collect();
    let values: Vec<f64> = soft
        .as_slice()
        .iter()
        .zip(&positive)
        .map(|(&s, &keep)| match (keep, binarize) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => s,
        })
        .collect();
    let positive_count = positive.iter().filter(|&&p| p).count();
    SampleMap {
        values: Grid::new(soft.values.side(), values).expect("same shape as soft map"),
        positive,
        positive_count,
        threshold_index: Some(divider.split_index),
        mode: if binarize { MapMode::HardBinarized } else { MapMode::Lss },
    }
}

/// Everything the backward pass needs from one training-time selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub map: SampleMap,
    /// `None` in warm-up mode, where no softmax is evaluated.
    pub soft: Option<SoftMap>,
}

/// Training-time selection with caller-provided noise.
pub fn select_train_with_noise(
    logits: &LogitGrid,
    noise: &GumbelNoise,
    temperature: f64,
    mode: TrainMode,
    binarize: bool,
) -> Result<Selection> {
    let side = logits.side();
    if mode == TrainMode::WarmupAll {
        return Ok(Selection {
            map: SampleMap::all_ones(side),
            soft: None,
        });
    }
    let soft = gumbel_softmax(&logits.values, noise, temperature)?;
    let map = if soft.len() == 1 {
        SampleMap {
            values: Grid::filled(1, 1.0),
            positive: vec![true],
            positive_count: 1,
            threshold_index: None,
            mode: if binarize { MapMode::HardBinarized } else { MapMode::Lss },
        }
    } else {
        let divider = relative_distance_divide(&soft)?;
        build_sample_map(&soft, &divider, binarize)
    };
    Ok(Selection { map, soft: Some(soft) })
}

/// Training-time selection drawing fresh Gumbel noise from `rng`.
pub fn select_train<R: Rng + ?Sized>(
    logits: &LogitGrid,
    temperature: f64,
    rng: &mut R,
    mode: TrainMode,
    binarize: bool,
) -> Result<Selection> {
    if mode == TrainMode::WarmupAll {
        return select_train_with_noise(logits, &GumbelNoise::zeros(logits.side()), temperature, mode, binarize);
    }
    let noise = sample_gumbel(logits.side(), rng);
    select_train_with_noise(logits, &noise, temperature, mode, binarize)
}

/// Properties of the cell chosen at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedProperties {
    pub cell: (usize, usize),
    pub depth: f64,
    pub log_uncertainty: f64,
    pub dims: [f64; 3],
    pub orientation: OrientationBins,
}

impl SelectedProperties {
    pub fn yaw(&self) -> f64 {
        self.orientation.decode()
    }
}

/// Properties of the argmax-logit cell; ties go to the lowest row-major index.
pub fn select_infer(logits: &LogitGrid, preds: &CellPredictions) -> Result<SelectedProperties> {
    preds.validate()?;
    logits.values.check_same_shape(&preds.depth)?;
    let values = logits.values.values();
    let best = (0..values.len())
        .min_by(|&a, &b| descending(values, a, b))
        .ok_or(Error::EmptyLogits)?;
    Ok(SelectedProperties {
        cell: logits.values.position(best),
        depth: preds.depth.values()[best],
        log_uncertainty: preds.log_uncertainty.values()[best],
        dims: preds.dims[best],
        orientation: preds.orientation[best],
    })
}

/// Straight-through backward of the sample map with respect to the logits.
///
/// `upstream` is `∂loss/∂Sample_S`; entries at zeroed cells are dropped
/// before applying the softmax Jacobian `Sᵢ(δᵢⱼ − Sⱼ)/τ`.
pub fn sample_map_grad(upstream: &Grid, soft: &SoftMap, map: &SampleMap, temperature: f64) -> Result<Grid> {
    upstream.check_same_shape(&soft.values)?;
    map.values.check_same_shape(&soft.values)?;
    let masked: Vec<f64> = upstream
        .values()
        .iter()
        .zip(&map.positive)
        .map(|(&u, &keep)| if keep { u } else { 0.0 })
        .collect();
    let grad = gumbel::softmax_vjp(soft.as_slice(), &masked, temperature)?;
    Grid::new(upstream.side(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gumbel::softmax;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn soft_of(logits: &[f64]) -> SoftMap {
        let g = Grid::from_flat(logits.to_vec()).unwrap();
        gumbel_softmax(&g, &GumbelNoise::zeros(g.side()), 1.0).unwrap()
    }

    #[test]
    fn worked_example_three_positives() {
        let soft = soft_of(&[20.0, 18.0, 17.0, 7.0]);
        let div = relative_distance_divide(&soft).unwrap();
        assert_eq!(div.split_index, 2);
        assert_eq!(div.order, vec![0, 1, 2, 3]);
        let map = build_sample_map(&soft, &div, false);
        assert_eq!(map.positive_count, 3);
        assert_eq!(map.values.values()[3], 0.0);
        for i in 0..3 {
            assert_eq!(map.values.values()[i], soft.as_slice()[i]);
        }
        let hard = build_sample_map(&soft, &div, true);
        assert_eq!(hard.values.values(), &[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(hard.mode, MapMode::HardBinarized);

        let abs = absolute_distance_divide(&soft).unwrap();
        assert_eq!(build_sample_map(&soft, &abs, false).positive_count, 1);
    }

    #[test]
    fn uniform_map_keeps_everything() {
        let soft = soft_of(&[0.0; 49]);
        let div = relative_distance_divide(&soft).unwrap();
        assert!(div.ratios.iter().all(|&r| r == 1.0));
        assert_eq!(div.split_index, 47);
        assert_eq!(build_sample_map(&soft, &div, false).positive_count, 49);
    }

    #[test]
    fn three_one_zero_gives_one_positive() {
        let logits = [3.0, 1.0, 0.0];
        let probs = softmax(&logits, 1.0).unwrap();
        let div = divide_relative(&probs, &logits, 1.0).unwrap();
        assert!((div.ratios[0] - 2f64.exp()).abs() < 1e-12);
        assert!((div.ratios[1] - 1f64.exp()).abs() < 1e-12);
        // oracle: direct ratio of adjacent sorted probabilities
        assert!((probs[0] / probs[1] - div.ratios[0]).abs() < 1e-12);
        assert_eq!(div.split_index, 0);
        assert_eq!(positives_at_split(&logits, &div), 1);
    }

    #[test]
    fn degenerate_grid_is_rejected() {
        let soft = soft_of(&[1.0]);
        assert!(matches!(relative_distance_divide(&soft), Err(Error::DegenerateGrid(1))));
    }

    #[test]
    fn warmup_and_singleton_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = LogitGrid::new(Grid::from_flat((0..49).map(f64::from).collect()).unwrap(), 1).unwrap();
        let sel = select_train(&logits, 1.0, &mut rng, TrainMode::WarmupAll, false).unwrap();
        assert_eq!(sel.map.values, Grid::filled(7, 1.0));
        assert_eq!(sel.map.mode, MapMode::WarmupAll);

        let single = LogitGrid::new(Grid::from_flat(vec![-4.0]).unwrap(), 2).unwrap();
        let sel = select_train(&single, 1.0, &mut rng, TrainMode::Lss, false).unwrap();
        assert_eq!(sel.map.values.values(), &[1.0]);
        assert_eq!(sel.map.positive_count, 1);
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let logits = LogitGrid::new(
            Grid::from_flat((0..49).map(|i| ((i * 37) % 11) as f64 * 0.3).collect()).unwrap(),
            0,
        )
        .unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            serde_json::to_string(&select_train(&logits, 1.0, &mut rng, TrainMode::Lss, false).unwrap().map).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn inference_picks_argmax_with_row_major_ties() {
        let mut preds = CellPredictions::zeros(7);
        for (i, d) in preds.depth.values_mut().iter_mut().enumerate() {
            *d = i as f64;
        }
        let mut values = vec![0.0; 49];
        values[3 * 7 + 2] = 5.0;
        let logits = LogitGrid::new(Grid::from_flat(values.clone()).unwrap(), 0).unwrap();
        let sel = select_infer(&logits, &preds).unwrap();
        assert_eq!(sel.cell, (3, 2));
        assert_eq!(sel.depth, 23.0);

        let shifted = LogitGrid::new(Grid::from_flat(values.iter().map(|v| v - 7.5).collect()).unwrap(), 0).unwrap();
        assert_eq!(select_infer(&shifted, &preds).unwrap().cell, (3, 2));

        let flat = LogitGrid::new(Grid::filled(7, 0.25), 0).unwrap();
        assert_eq!(select_infer(&flat, &preds).unwrap().cell, (0, 0));
    }

    #[test]
    fn grad_of_zero_upstream_and_uniform_closed_form() {
        let n = 16usize;
        let soft = soft_of(&vec![0.0; n]);
        let div = relative_distance_divide(&soft).unwrap();
        let map = build_sample_map(&soft, &div, false);
        let g = sample_map_grad(&Grid::zeros(4), &soft, &map, 1.0).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));

        let tau = 2.0;
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let g = sample_map_grad(&Grid::from_flat(e).unwrap(), &soft, &map, tau).unwrap();
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                let expected = (1.0 / n as f64) * (delta - 1.0 / n as f64) / tau;
                assert!((g.values()[j] - expected).abs() < 1e-15);
            }
        }
        assert!(sample_map_grad(&Grid::zeros(3), &soft, &map, 1.0).is_err());
    }

    fn brute_force_split(perturbed: &[f64]) -> usize {
        let mut sorted = perturbed.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut best = 0;
        let mut best_gap = f64::NEG_INFINITY;
        for i in 0..sorted.len() - 1 {
            let gap = sorted[i] - sorted[i + 1];
            if gap >= best_gap {
                best_gap = gap;
                best = i;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn split_matches_max_gap_in_perturbed_logits(
            logits in proptest::collection::vec(-6.0f64..6.0, 4..5),
            seed in any::<u64>(),
        ) {
            let g = Grid::from_flat(logits).unwrap();
            let noise = GumbelNoise::from_seed(g.side(), seed);
            let soft = gumbel_softmax(&g, &noise, 1.0).unwrap();
            let div = relative_distance_divide(&soft).unwrap();
            prop_assert_eq!(div.split_index, brute_force_split(&soft.perturbed));
            prop_assert!(div.sorted_values.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(div.ratios.iter().all(|&r| r >= 1.0));
        }

        #[test]
        fn map_zeros_are_exact_and_shift_invariant(
            logits in proptest::collection::vec(-8.0f64..8.0, 49..50),
            seed in any::<u64>(),
            shift in -50.0f64..50.0,
        ) {
            let noise = GumbelNoise::from_seed(7, seed);
            let a = LogitGrid::new(Grid::from_flat(logits.clone()).unwrap(), 0).unwrap();
            let b = LogitGrid::new(Grid::from_flat(logits.iter().map(|l| l + shift).collect()).unwrap(), 0).unwrap();
            let sa = select_train_with_noise(&a, &noise, 1.0, TrainMode::Lss, false).unwrap();
            let sb = select_train_with_noise(&b, &noise, 1.0, TrainMode::Lss, false).unwrap();
            prop_assert_eq!(&sa.map.positive, &sb.map.positive);
            for (x, y) in sa.map.values.values().iter().zip(sb.map.values.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            // exactly the top positive_count soft cells are nonzero
            let soft = sa.soft.unwrap();
            let order = sort_order(&soft.perturbed);
            for (rank, &cell) in order.iter().enumerate() {
                let v = sa.map.values.values()[cell];
                if rank < sa.map.positive_count {
                    prop_assert!(v > 0.0);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
            prop_assert!(sa.map.positive_count >= 1 && sa.map.positive_count <= 49);
        }

        #[test]
        fn selection_is_permutation_equivariant(
            logits in proptest::collection::vec(-4.0f64..4.0, 16..17),
            seed in any::<u64>(),
            rot in 1usize..16,
        ) {
            let noise = GumbelNoise::from_seed(4, seed);
            let perm: Vec<usize> = (0..16).map(|i| (i * 5 + rot) % 16).collect();
            let pl: Vec<f64> = perm.iter().map(|&p| logits[p]).collect();
            let pn: Vec<f64> = perm.iter().map(|&p| noise.values.values()[p]).collect();
            let a = select_train_with_noise(
                &LogitGrid::new(Grid::from_flat(logits.clone()).unwrap(), 0).unwrap(),
                &noise, 1.0, TrainMode::Lss, false).unwrap();
            let b = select_train_with_noise(
                &LogitGrid::new(Grid::from_flat(pl).unwrap(), 0).unwrap(),
                &GumbelNoise::from_grid(Grid::from_flat(pn).unwrap()).unwrap(),
                1.0, TrainMode::Lss, false).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(b.map.positive[i], a.map.positive[p]);
                // summation order differs under permutation
                let (x, y) = (b.map.values.values()[i], a.map.values.values()[p]);
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()));
            }
        }

        #[test]
        fn relative_never_fewer_than_absolute_positives(
            logits in proptest::collection::vec(0.0f64..25.0, 2..10),
        ) {
            let probs = softmax(&logits, 1.0).unwrap();
            let rel = divide_relative(&probs, &logits, 1.0).unwrap();
            let abs = divide_absolute(&probs, &logits).unwrap();
            prop_assert!(positives_at_split(&logits, &rel) >= positives_at_split(&logits, &abs));
        }
    }
}
