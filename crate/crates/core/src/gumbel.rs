//! Gumbel noise and the Gumbel-Max / Gumbel-Softmax / Gumbel-Top-k samplers.
//!
//! Standard Gumbel noise is drawn by inverse transform, `G = -ln(-ln U)` with
//! `U ~ Uniform(0, 1)`. Adding it to logits and taking the argmax samples an
//! index with probability `softmax(logits)`; taking the `k` largest perturbed
//! values draws an ordered sample without replacement (Plackett-Luce).
//!
//! Every sampler takes its RNG explicitly. `*_with_noise` variants accept a
//! precomputed noise vector so tests can pin the randomness.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// `U` is clamped into `[UNIFORM_EPS, 1 - UNIFORM_EPS]` before the double log.
pub const UNIFORM_EPS: f64 = 1e-12;

/// Maps a uniform variate to a standard Gumbel variate.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

/// Draws one standard Gumbel variate.
pub fn standard_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    gumbel_from_uniform(rng.random::<f64>())
}

/// A d×d grid of i.i.d. standard Gumbel values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelNoise {
    pub values: Grid,
    /// Seed the values were drawn from, when generated through [`GumbelNoise::from_seed`].
    pub seed: Option<u64>,
}

impl GumbelNoise {
    /// All-zero noise: the sampler degenerates to a deterministic softmax / argmax.
    pub fn zeros(side: usize) -> Self {
        Self {
            values: Grid::zeros(side),
            seed: None,
        }
    }

    pub fn from_grid(values: Grid) -> Result<Self> {
        if values.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gumbel noise"));
        }
        Ok(Self { values, seed: None })
    }

    /// Reproducible noise: the same `(side, seed)` always yields the same values.
    pub fn from_seed(side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = sample_gumbel(side, &mut rng);
        noise.seed = Some(seed);
        noise
    }

    pub fn side(&self) -> usize {
        self.values.side()
    }
}

/// `len` reproducible standard Gumbel values for flat logit vectors.
pub fn seeded_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| standard_gumbel(&mut rng)).collect()
}

/// Samples a `side × side` grid of standard Gumbel noise.
pub fn sample_gumbel<R: Rng + ?Sized>(side: usize, rng: &mut R) -> GumbelNoise {
    assert!(side > 0, "sample_gumbel: grid side must be at least 1");
    let values = (0..side * side).map(|_| standard_gumbel(rng)).collect();
    GumbelNoise {
        values: Grid::new(side, values).expect("length matches side"),
        seed: None,
    }
}

/// Temperature-scaled softmax over a Gumbel-perturbed grid.
///
/// Keeps the perturbed logits `Φ̂ = Φ + G` alongside the probabilities so
/// that adjacent ratios can be evaluated as `exp(Δφ̂/τ)` even where the
/// probabilities themselves underflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftMap {
    pub values: Grid,
    pub temperature: f64,
    pub perturbed: Vec<f64>,
}

impl SoftMap {
    /// Wraps an existing strictly positive distribution; `Φ̂` is recovered as
    /// `τ·ln S` (equal to the original perturbed logits up to a constant).
    pub fn from_probabilities(values: Grid, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        if values.values().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("soft map entries must be strictly positive".into()));
        }
        let perturbed = values.values().iter().map(|v| temperature * v.ln()).collect();
        Ok(Self {
            values,
            temperature,
            perturbed,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.values()
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(temperature))
    }
}

/// Softmax of `logits / temperature`, stabilized by subtracting the maximum.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// `exp((Φᵢ + Gᵢ)/τ) / Σⱼ exp((Φⱼ + Gⱼ)/τ)` over the whole grid.
pub fn gumbel_softmax(logits: &Grid, noise: &GumbelNoise, temperature: f64) -> Result<SoftMap> {
    check_temperature(temperature)?;
    logits.check_same_shape(&noise.values)?;
    let perturbed = perturb(logits.values(), noise.values.values());
    let values = softmax(&perturbed, temperature)?;
    Ok(SoftMap {
        values: Grid::new(logits.side(), values)?,
        temperature,
        perturbed,
    })
}

/// Vector-Jacobian product of the tempered softmax: `gⱼ = Sⱼ (upⱼ − Σᵢ upᵢ Sᵢ) / τ`.
pub fn softmax_vjp(soft: &[f64], upstream: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if soft.len() != upstream.len() {
        return Err(Error::ShapeMismatch {
            expected: soft.len(),
            actual: upstream.len(),
        });
    }
    let weighted: f64 = soft.iter().zip(upstream).map(|(s, u)| s * u).sum();
    Ok(soft
        .iter()
        .zip(upstream)
        .map(|(&s, &u)| s * (u - weighted) / temperature)
        .collect())
}

/// Full Jacobian `J[i][j] = ∂Sᵢ/∂Φⱼ = Sᵢ (δᵢⱼ − Sⱼ) / τ`.
pub fn softmax_jacobian(soft: &[f64], temperature: f64) -> Vec<Vec<f64>> {
    soft.iter()
        .enumerate()
        .map(|(i, &si)| {
            soft.iter()
                .enumerate()
                .map(|(j, &sj)| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    si * (delta - sj) / temperature
                })
                .collect()
        })
        .collect()
}

fn perturb(logits: &[f64], noise: &[f64]) -> Vec<f64> {
    logits.iter().zip(noise).map(|(l, g)| l + g).collect()
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

/// Descending by value, ascending by index on ties. Total over finite inputs.
pub(crate) fn descending(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b].total_cmp(&values[a]).then_with(|| a.cmp(&b))
}

/// Argmax of `logits + noise`, lowest index on ties.
pub fn gumbel_max_with_noise(logits: &[f64], noise: &[f64]) -> Result<usize> {
    check_logits(logits)?;
    if noise.len() != logits.len() {
        return Err(Error::ShapeMismatch {
            expected: logits.len(),
            actual: noise.len(),
        });
    }
    let perturbed = perturb(logits, noise);
    Ok((0..perturbed.len())
        .min_by(|&a, &b| descending(&perturbed, a, b))
        .expect("non-empty"))
}

/// Samples an index with probability `softmax(logits)`.
pub fn gumbel_max<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<usize> {
    check_logits(logits)?;
    let noise: Vec<f64> = (0..logits.len()).map(|_| standard_gumbel(rng)).collect();
    gumbel_max_with_noise(logits, &noise)
}

/// The `k` largest entries of `logits + noise`, in descending perturbed order.
pub fn gumbel_top_k_with_noise(logits: &[f64], noise: &[f64], k: usize) -> Result<Vec<usize>> {
    check_logits(logits)?;
    if k == 0 || k > logits.len() {
        return Err(Error::KOutOfRange { k, len: logits.len() });
    }
    if noise.len() != logits.len() {
        return Err(Error::ShapeMismatch {
            expected: logits.len(),
            actual: noise.len(),
        });
    }
    let perturbed = perturb(logits, noise);
    let mut order: Vec<usize> = (0..perturbed.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| descending(&perturbed, a, b));
        order.truncate(k);
    }
    order.sort_unstable_by(|&a, &b| descending(&perturbed, a, b));
    Ok(order)
}

/// Ordered sample of `k` indices without replacement, weights `softmax(logits)`.
pub fn gumbel_top_k<R: Rng + ?Sized>(logits: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_logits(logits)?;
    if k == 0 || k > logits.len() {
        return Err(Error::KOutOfRange { k, len: logits.len() });
    }
    let noise: Vec<f64> = (0..logits.len()).map(|_| standard_gumbel(rng)).collect();
    gumbel_top_k_with_noise(logits, &noise, k)
}
