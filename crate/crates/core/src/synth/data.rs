//! Generative model for synthetic objects seen through a `d × d` feature grid.
//!
//! Every cell carries `F` features produced by a fixed linear map `W` from a
//! latent property vector
//! `p = [z_depth, z_h, z_w, z_l, sin θ, cos θ, objectness]` plus Gaussian
//! noise. Support cells encode the target object; the remaining cells encode
//! an occluder standing in front of it.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_SIDE: usize = 7;
pub const CELLS: usize = GRID_SIDE * GRID_SIDE;
pub const FEATURES: usize = 8;
pub const LATENT: usize = 7;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

pub const DEPTH_RANGE: (f64, f64) = (10.0, 50.0);
pub const DEPTH_MEAN: f64 = 30.0;
pub const DEPTH_SCALE: f64 = 15.0;
pub const DIM_RANGES: [(f64, f64); 3] = [(1.4, 1.8), (1.5, 1.9), (3.2, 4.8)];
pub const DIM_MEAN: [f64; 3] = [1.6, 1.7, 4.0];
pub const DIM_SCALE: [f64; 3] = [0.2, 0.2, 0.8];
/// Occluder depth as a fraction of the target depth.
pub const DISTRACTOR_DEPTH_FRACTION: (f64, f64) = (0.3, 0.8);
const GENERATIVE_SEED: u64 = 0x4C53_535F_5721;

/// Fixed `F × LATENT` generative matrix with orthonormal columns, so its
/// pseudo-inverse is its transpose.
pub fn generative_matrix() -> &'static [[f64; LATENT]; FEATURES] {
    static W: OnceLock<[[f64; LATENT]; FEATURES]> = OnceLock::new();
    W.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(GENERATIVE_SEED);
        let mut cols: Vec<[f64; FEATURES]> = Vec::with_capacity(LATENT);
        while cols.len() < LATENT {
            let mut v = [0.0; FEATURES];
            for x in &mut v {
                *x = StandardNormal.sample(&mut rng);
            }
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols.push(v.map(|x| x / norm));
            }
        }
        let mut w = [[0.0; LATENT]; FEATURES];
        for (j, c) in cols.iter().enumerate() {
            for i in 0..FEATURES {
                w[i][j] = c[i];
            }
        }
        w
    })
}

/// 3D properties of an object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTarget {
    pub depth: f64,
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl SynthTarget {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            depth: rng.random_range(DEPTH_RANGE.0..DEPTH_RANGE.1),
            dims: DIM_RANGES.map(|(lo, hi)| rng.random_range(lo..hi)),
            yaw: rng.random_range(-PI..PI),
        }
    }

    pub fn latent(&self, objectness: f64) -> [f64; LATENT] {
        [
            (self.depth - DEPTH_MEAN) / DEPTH_SCALE,
            (self.dims[0] - DIM_MEAN[0]) / DIM_SCALE[0],
            (self.dims[1] - DIM_MEAN[1]) / DIM_SCALE[1],
            (self.dims[2] - DIM_MEAN[2]) / DIM_SCALE[2],
            self.yaw.sin(),
            self.yaw.cos(),
            objectness,
        ]
    }
}

pub fn encode(latent: &[f64; LATENT]) -> [f64; FEATURES] {
    let w = generative_matrix();
    let mut out = [0.0; FEATURES];
    for (i, row) in w.iter().enumerate() {
        out[i] = row.iter().zip(latent).map(|(a, b)| a * b).sum();
    }
    out
}

/// `Wᵀ·x`.
pub fn decode(features: &[f64; FEATURES]) -> [f64; LATENT] {
    let w = generative_matrix();
    let mut out = [0.0; LATENT];
    for (i, row) in w.iter().enumerate() {
        for j in 0..LATENT {
            out[j] += row[j] * features[i];
        }
    }
    out
}

pub fn decode_depth(features: &[f64; FEATURES]) -> f64 {
    DEPTH_MEAN + DEPTH_SCALE * decode(features)[0]
}

/// Which cells of the grid see the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Full,
    /// Rows strictly below the center row.
    BottomHalf,
    /// A 4-connected blob grown from a random cell.
    RandomBlob,
    /// The top `k` rows are covered by the occluder.
    OccludedTopRows(usize),
}

/// Object population a benchmark draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Single pattern for every object.
    Pattern(Pattern),
    /// Equal mixture of top-k row occlusion (k = 1..=5), bottom-half and random blobs.
    Occluded,
}

pub fn support_mask<R: Rng + ?Sized>(pattern: Pattern, rng: &mut R) -> Vec<bool> {
    let side = GRID_SIDE;
    match pattern {
        Pattern::Full => vec![true; CELLS],
        Pattern::BottomHalf => (0..CELLS).map(|i| i / side > side / 2).collect(),
        Pattern::OccludedTopRows(k) => {
            let k = k.min(side - 1);
            (0..CELLS).map(|i| i / side >= k).collect()
        }
        Pattern::RandomBlob => {
            let target = rng.random_range(6..=30);
            let mut mask = vec![false; CELLS];
            let start = rng.random_range(0..CELLS);
            mask[start] = true;
            let mut members = vec![start];
            while members.len() < target {
                let from = members[rng.random_range(0..members.len())];
                let (r, c) = (from / side, from % side);
                let next = match rng.random_range(0..4) {
                    0 if r > 0 => from - side,
                    1 if r + 1 < side => from + side,
                    2 if c > 0 => from - 1,
                    3 if c + 1 < side => from + 1,
                    _ => continue,
                };
                if !mask[next] {
                    mask[next] = true;
                    members.push(next);
                }
            }
            mask
        }
    }
}

fn draw_pattern<R: Rng + ?Sized>(task: Task, rng: &mut R) -> Pattern {
    match task {
        Task::Pattern(p) => p,
        Task::Occluded => match rng.random_range(0..3) {
            0 => Pattern::OccludedTopRows(rng.random_range(1..=5)),
            1 => Pattern::BottomHalf,
            _ => Pattern::RandomBlob,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    /// Row-major cell features.
    pub features: Vec<[f64; FEATURES]>,
    pub support_mask: Vec<bool>,
    pub gt: SynthTarget,
    pub distractor_depth: f64,
    pub pattern: Pattern,
}

impl SynthObject {
    pub fn support_count(&self) -> usize {
        self.support_mask.iter().filter(|&&s| s).count()
    }
}

fn add_noise<R: Rng + ?Sized>(mut x: [f64; FEATURES], sigma: f64, rng: &mut R) -> [f64; FEATURES] {
    if sigma > 0.0 {
        for v in &mut x {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    x
}

pub fn generate_object<R: Rng + ?Sized>(pattern: Pattern, noise_sigma: f64, rng: &mut R) -> SynthObject {
    let gt = SynthTarget::random(rng);
    let mut occluder = SynthTarget::random(rng);
    occluder.depth = gt.depth * rng.random_range(DISTRACTOR_DEPTH_FRACTION.0..DISTRACTOR_DEPTH_FRACTION.1);
    let support_mask = support_mask(pattern, rng);
    let target_features = encode(&gt.latent(1.0));
    let occluder_features = encode(&occluder.latent(0.0));
    let features = support_mask
        .iter()
        .map(|&s| {
            let base = if s { target_features } else { occluder_features };
            add_noise(base, noise_sigma, rng)
        })
        .collect();
    SynthObject {
        features,
        support_mask,
        gt,
        distractor_depth: occluder.depth,
        pattern,
    }
}

/// `count` objects drawn from `task`.
pub fn generate_scene<R: Rng + ?Sized>(
    task: Task,
    count: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<SynthObject>> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let pattern = draw_pattern(task, rng);
            generate_object(pattern, noise_sigma, rng)
        })
        .collect())
}

/// Overlays `partner` on `primary` at proportion `lambda`.
///
/// The partner's support region is shifted by `offset` (rows, cols). Inside
/// the primary's grid the partner is not the target, so it is rendered the
/// way the generative model renders any other object: with objectness 0.
/// Covered cells become `λ·x_primary + (1 − λ)·x_partner`; the remaining
/// cells and the labels are unchanged.
pub fn overlay_object(
    primary: &SynthObject,
    partner: &SynthObject,
    lambda: f64,
    offset: (isize, isize),
) -> SynthObject {
    let side = GRID_SIDE as isize;
    let w = generative_matrix();
    let mut out = primary.clone();
    for (i, x) in out.features.iter_mut().enumerate() {
        let (r, c) = (i as isize / side, i as isize % side);
        let (pr, pc) = (r - offset.0, c - offset.1);
        if !((0..side).contains(&pr) && (0..side).contains(&pc)) {
            continue;
        }
        let cell = (pr * side + pc) as usize;
        if !partner.support_mask[cell] {
            continue;
        }
        for (k, (v, p)) in x.iter_mut().zip(&partner.features[cell]).enumerate() {
            let as_other = p - w[k][LATENT - 1];
            *v = lambda * *v + (1.0 - lambda) * as_other;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generative_matrix_has_orthonormal_columns() {
        let w = generative_matrix();
        for a in 0..LATENT {
            for b in 0..LATENT {
                let dot: f64 = (0..FEATURES).map(|i| w[i][a] * w[i][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pattern_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(support_mask(Pattern::Full, &mut rng).iter().all(|&s| s));
        let top3 = support_mask(Pattern::OccludedTopRows(3), &mut rng);
        assert_eq!(top3.iter().filter(|&&s| s).count(), 28);
        assert!(top3[..21].iter().all(|&s| !s));
        let bottom = support_mask(Pattern::BottomHalf, &mut rng);
        assert_eq!(bottom.iter().filter(|&&s| s).count(), 21);
        for _ in 0..50 {
            let blob = support_mask(Pattern::RandomBlob, &mut rng);
            let n = blob.iter().filter(|&&s| s).count();
            assert!((6..=30).contains(&n));
        }
    }

    #[test]
    fn support_cells_decode_to_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exact = generate_object(Pattern::BottomHalf, 0.0, &mut rng);
        for (x, &s) in exact.features.iter().zip(&exact.support_mask) {
            let want = if s { exact.gt.depth } else { exact.distractor_depth };
            assert!((decode_depth(x) - want).abs() < 1e-9);
        }

        // decoding noise per latent coordinate is N(0, σ²) because Wᵀ is orthonormal
        let sigma = DEFAULT_NOISE_SIGMA;
        for obj in generate_scene(Task::Occluded, 200, sigma, &mut rng).unwrap() {
            assert!(obj.support_count() >= 1);
            assert!(obj.distractor_depth < obj.gt.depth);
            for (x, &s) in obj.features.iter().zip(&obj.support_mask) {
                if s {
                    assert!((decode_depth(x) - obj.gt.depth).abs() <= 5.0 * sigma * DEPTH_SCALE);
                }
            }
        }
    }

    #[test]
    fn occluded_task_often_hides_the_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let objs = generate_scene(Task::Occluded, 2000, 0.0, &mut rng).unwrap();
        let hidden = objs.iter().filter(|o| !o.support_mask[CELLS / 2]).count();
        assert!(hidden > 800, "{hidden}");
    }

    #[test]
    fn overlay_touches_only_the_shifted_footprint_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = generate_object(Pattern::Full, 0.0, &mut rng);
        let b = generate_object(Pattern::OccludedTopRows(5), 0.0, &mut rng);
        let m = overlay_object(&a, &b, 0.5, (-3, 0));
        for i in 0..CELLS {
            let row = i / GRID_SIDE;
            let changed = m.features[i] != a.features[i];
            assert_eq!(changed, (2..=3).contains(&row), "cell {i}");
        }
        assert_eq!(m.gt, a.gt);
        // covered cells decode to the midpoint of both depths, with objectness 1/2
        let latent = decode(&m.features[2 * GRID_SIDE]);
        assert!((latent[LATENT - 1] - 0.5).abs() < 1e-12);
        let mid = 0.5 * (a.gt.depth + b.gt.depth);
        assert!((decode_depth(&m.features[2 * GRID_SIDE]) - mid).abs() < 1e-9);
    }
}
