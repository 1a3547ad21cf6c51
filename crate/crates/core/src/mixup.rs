//! Scene-level MixUp for monocular 3D detection.
//!
//! Two scenes are blended pixelwise as `λ·a + (1 − λ)·b` and their 3D labels
//! are concatenated. Scenes are only paired when their camera intrinsics
//! agree, so that every label stays geometrically valid in the mixed image.

use image::RgbImage;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitti::{CameraIntrinsics, Object3DLabel};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_INTRINSICS_TOLERANCE: f64 = 1e-3;
/// Range that Beta-drawn proportions are confined to.
pub const BETA_LAMBDA_RANGE: (f64, f64) = (0.3, 0.7);
const MAX_BETA_DRAWS: usize = 10_000;

pub const REPORT_FILE: &str = "mixup_report.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: RgbImage,
    pub intrinsics: CameraIntrinsics,
    pub labels: Vec<Object3DLabel>,
}

impl Scene {
    pub fn new(id: String, image: RgbImage, intrinsics: CameraIntrinsics, labels: Vec<Object3DLabel>) -> Result<Self> {
        if (image.width(), image.height()) != (intrinsics.width, intrinsics.height) {
            return Err(Error::ImageDimensions(
                image.width(),
                image.height(),
                intrinsics.width,
                intrinsics.height,
            ));
        }
        Ok(Self {
            id,
            image,
            intrinsics,
            labels,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaPolicy {
    Fixed(f64),
    /// Symmetric `Beta(α, α)`, redrawn until inside [`BETA_LAMBDA_RANGE`].
    Beta {
        alpha: f64,
    },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Fixed(DEFAULT_LAMBDA)
    }
}

impl LambdaPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaPolicy::Fixed(l) if !(l > 0.0 && l < 1.0) => Err(Error::InvalidLambda(l)),
            LambdaPolicy::Beta { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::InvalidInput(format!("beta alpha must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.validate()?;
        match *self {
            LambdaPolicy::Fixed(l) => Ok(l),
            LambdaPolicy::Beta { alpha } => {
                let beta =
                    Beta::new(alpha, alpha).map_err(|e| Error::InvalidInput(format!("beta distribution: {e}")))?;
                let (lo, hi) = BETA_LAMBDA_RANGE;
                let mut last = DEFAULT_LAMBDA;
                for _ in 0..MAX_BETA_DRAWS {
                    last = beta.sample(rng);
                    if (lo..=hi).contains(&last) {
                        return Ok(last);
                    }
                }
                Ok(last.clamp(lo, hi))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub lambda_policy: LambdaPolicy,
    /// Relative tolerance on focal lengths and principal point.
    pub intrinsics_tolerance: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            lambda_policy: LambdaPolicy::default(),
            intrinsics_tolerance: DEFAULT_INTRINSICS_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// `focal_length`, `principal_point` or `resolution`.
    pub constraint: String,
    pub detail: String,
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / a.abs()
    }
}

/// Every intrinsics constraint `b` violates relative to `a`; empty means compatible.
pub fn check_compatible(a: &CameraIntrinsics, b: &CameraIntrinsics, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |constraint: &str, name: &str, x: f64, y: f64| {
        let gap = relative_gap(x, y);
        if gap.is_nan() || gap > tol {
            out.push(Violation {
                constraint: constraint.to_string(),
                detail: format!("{name}: {x} vs {y} (relative gap {gap:.3e} > {tol:.1e})"),
            });
        }
    };
    check("focal_length", "fx", a.fx, b.fx);
    check("focal_length", "fy", a.fy, b.fy);
    check("principal_point", "cx", a.cx, b.cx);
    check("principal_point", "cy", a.cy, b.cy);
    if (a.width, a.height) != (b.width, b.height) {
        out.push(Violation {
            constraint: "resolution".to_string(),
            detail: format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height),
        });
    }
    out
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

/// `λ·a + (1 − λ)·b` per channel, rounded half to even.
pub fn mix_images(a: &RgbImage, b: &RgbImage, lambda: f64) -> Result<RgbImage> {
    check_lambda(lambda)?;
    if a.dimensions() != b.dimensions() {
        return Err(Error::ImageDimensions(a.width(), a.height(), b.width(), b.height()));
    }
    let data: Vec<u8> = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let v = lambda * f64::from(x) + (1.0 - lambda) * f64::from(y);
            v.round_ties_even().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(RgbImage::from_raw(a.width(), a.height(), data).expect("buffer length matches dimensions"))
}

/// `a`'s labels followed by `b`'s.
pub fn mix_labels(a: &[Object3DLabel], b: &[Object3DLabel]) -> Vec<Object3DLabel> {
    a.iter().chain(b).cloned().collect()
}

pub fn mix_scenes(primary: &Scene, partner: &Scene, lambda: f64) -> Result<Scene> {
    Ok(Scene {
        id: primary.id.clone(),
        image: mix_images(&primary.image, &partner.image, lambda)?,
        intrinsics: primary.intrinsics.clone(),
        labels: mix_labels(&primary.labels, &partner.labels),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedPair {
    pub primary: String,
    pub partner: String,
    pub lambda: f64,
    pub primary_labels: usize,
    pub partner_labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedPair {
    pub partner: String,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Scene passed through unmixed.
    pub scene: String,
    pub rejected_pairs: Vec<RejectedPair>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub scenes: usize,
    pub mixed: usize,
    pub passed_through: usize,
    pub pairs: Vec<MixedPair>,
    pub rejections: Vec<Rejection>,
}

/// Mixes every scene once as primary with a partner drawn uniformly from the
/// scenes compatible with it. Scenes without a compatible partner are passed
/// through unchanged and reported. Output order follows input order.
pub fn augment_dataset<R: Rng + ?Sized>(
    scenes: &[Scene],
    cfg: &MixConfig,
    rng: &mut R,
) -> Result<(Vec<Scene>, MixReport)> {
    if scenes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "augmentation needs at least 2 scenes, got {}",
            scenes.len()
        )));
    }
    cfg.lambda_policy.validate()?;
    let n = scenes.len();
    let mut compatible = vec![Vec::new(); n];
    let mut rejected: Vec<Vec<RejectedPair>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = check_compatible(&scenes[i].intrinsics, &scenes[j].intrinsics, cfg.intrinsics_tolerance);
            if v.is_empty() {
                compatible[i].push(j);
            } else {
                rejected[i].push(RejectedPair {
                    partner: scenes[j].id.clone(),
                    violations: v,
                });
            }
        }
    }

    // all random draws happen here, in input order, so the output only depends on the seed
    let mut plan: Vec<Option<(usize, f64)>> = Vec::with_capacity(n);
    for partners in &compatible {
        if partners.is_empty() {
            plan.push(None);
        } else {
            let j = partners[rng.random_range(0..partners.len())];
            plan.push(Some((j, cfg.lambda_policy.sample(rng)?)));
        }
    }

    let out: Vec<Scene> = plan
        .par_iter()
        .enumerate()
        .map(|(i, step)| match *step {
            Some((j, lambda)) => mix_scenes(&scenes[i], &scenes[j], lambda),
            None => Ok(scenes[i].clone()),
        })
        .collect::<Result<_>>()?;

    let mut report = MixReport {
        scenes: n,
        ..MixReport::default()
    };
    for (i, step) in plan.iter().enumerate() {
        match *step {
            Some((j, lambda)) => report.pairs.push(MixedPair {
                primary: scenes[i].id.clone(),
                partner: scenes[j].id.clone(),
                lambda,
                primary_labels: scenes[i].labels.len(),
                partner_labels: scenes[j].labels.len(),
            }),
            None => report.rejections.push(Rejection {
                scene: scenes[i].id.clone(),
                rejected_pairs: std::mem::take(&mut rejected[i]),
            }),
        }
    }
    report.mixed = report.pairs.len();
    report.passed_through = report.rejections.len();
    Ok((out, report))
}
