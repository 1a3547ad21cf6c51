//! The relative-distance divider against a brute-force gap search.

use lss_core::gumbel::{gumbel_softmax, softmax, GumbelNoise};
use lss_core::select::{
    build_sample_map, divide_absolute, divide_relative, positives_at_split, relative_distance_divide,
};
use lss_core::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Positive count from sorting `perturbed` and taking the largest adjacent
/// gap, resolving ties toward more positives.
fn brute_force_positives(perturbed: &[f64]) -> usize {
    let mut sorted = perturbed.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..sorted.len() - 1 {
        let gap = sorted[i] - sorted[i + 1];
        if gap >= best.0 {
            best = (gap, i);
        }
    }
    best.1 + 1
}

#[test]
fn relative_split_equals_brute_force_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let n = rng.random_range(2..=9);
        let scale = rng.random_range(0.1..20.0);
        let perturbed: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let tau = rng.random_range(0.2..3.0);
        let soft = softmax(&perturbed, tau).unwrap();
        let d = divide_relative(&soft, &perturbed, tau).unwrap();
        assert_eq!(
            positives_at_split(&perturbed, &d),
            brute_force_positives(&perturbed),
            "{perturbed:?}"
        );
        assert_eq!(d.split_index + 1, brute_force_positives(&perturbed));
    }
}

#[test]
fn reference_vector_relative_three_absolute_one() {
    let logits = [20.0, 18.0, 17.0, 7.0];
    let soft = softmax(&logits, 1.0).unwrap();
    let rel = divide_relative(&soft, &logits, 1.0).unwrap();
    let abs = divide_absolute(&soft, &logits).unwrap();
    assert_eq!(positives_at_split(&logits, &rel), 3);
    assert_eq!(positives_at_split(&logits, &abs), 1);
}

#[test]
fn grid_divider_agrees_with_flat_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for side in 2..=7 {
        for seed in 0..50u64 {
            let values: Vec<f64> = (0..side * side).map(|_| rng.random_range(-4.0..4.0)).collect();
            let logits = Grid::new(side, values).unwrap();
            let noise = GumbelNoise::from_seed(side, seed);
            let soft = gumbel_softmax(&logits, &noise, 1.0).unwrap();
            let d = relative_distance_divide(&soft).unwrap();
            let map = build_sample_map(&soft, &d, false);
            assert_eq!(map.positive_count, brute_force_positives(&soft.perturbed));
        }
    }
}
