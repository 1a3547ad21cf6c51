//! Distributional checks for the Gumbel samplers against closed-form oracles.

use lss_core::gumbel::{gumbel_max, gumbel_softmax, gumbel_top_k, softmax, standard_gumbel, GumbelNoise};
use lss_core::Grid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(observed: &[usize], expected_prob: &[f64]) -> f64 {
    let n: usize = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_prob)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn gumbel_max_matches_softmax_frequencies() {
    let logits = [1.0, 0.0, -1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0usize; 3];
    for _ in 0..100_000 {
        counts[gumbel_max(&logits, &mut rng).unwrap()] += 1;
    }
    let probs = softmax(&logits, 1.0).unwrap();
    for (p, want) in probs.iter().zip([0.6652, 0.2447, 0.0900]) {
        assert!((p - want).abs() < 1e-4);
    }
    let p = chi_square_p(&counts, &probs);
    assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}");
}

#[test]
fn standard_gumbel_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| standard_gumbel(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let euler_gamma = 0.577_215_664_901_532_9;
    assert!((mean - euler_gamma).abs() < 0.01, "mean {mean}");
    assert!(
        (var - std::f64::consts::PI.powi(2) / 6.0).abs() < 0.02,
        "variance {var}"
    );
}

/// Probability of the ordered pair `(i, j)` as the first two draws without replacement.
fn plackett_luce_pair(p: &[f64], i: usize, j: usize) -> f64 {
    p[i] * p[j] / (1.0 - p[i])
}

#[test]
fn top_k_follows_plackett_luce() {
    let logits = [1.0, 0.5, 0.0, -0.5];
    let p = softmax(&logits, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = logits.len();
    let mut counts = vec![0usize; n * n];
    for _ in 0..100_000 {
        let top = gumbel_top_k(&logits, 2, &mut rng).unwrap();
        assert_ne!(top[0], top[1]);
        counts[top[0] * n + top[1]] += 1;
    }
    let mut observed = Vec::new();
    let mut expected = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                observed.push(counts[i * n + j]);
                expected.push(plackett_luce_pair(&p, i, j));
            }
        }
    }
    assert!((expected.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let pv = chi_square_p(&observed, &expected);
    assert!(pv > 0.01, "chi-square p = {pv}");
}

#[test]
fn zero_noise_softmax_is_plain_softmax() {
    let logits = Grid::new(2, vec![20.0, 18.0, 17.0, 7.0]).unwrap();
    let soft = gumbel_softmax(&logits, &GumbelNoise::zeros(2), 1.0).unwrap();
    let rounded: Vec<f64> = soft.as_slice().iter().map(|v| (v * 100.0).round() / 100.0).collect();
    assert_eq!(rounded, vec![0.84, 0.11, 0.04, 0.0]);
    let sharp = gumbel_softmax(&logits, &GumbelNoise::zeros(2), 0.1).unwrap();
    assert!(sharp.as_slice()[0] > 0.999_999);
}
