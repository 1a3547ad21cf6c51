//! JSON run configurations, flag overrides and report headers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lss_core::gradcheck::{OpId, DEFAULT_STEP, DEFAULT_TOLERANCE};
use lss_core::mixup::MixConfig;
use lss_core::select::DEFAULT_TEMPERATURE;
use lss_core::synth::BenchConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "lss";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reads a JSON config; unknown keys are rejected by the target type.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load)
}

/// Hex SHA-256 of the config's canonical JSON serialization.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
}

impl ReportHeader {
    pub fn new<T: Serialize>(command: &str, cfg: &T, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            config_sha256: config_hash(cfg)?,
            seeds,
        })
    }

    /// `key=value` lines for CSV comment headers.
    pub fn lines(&self) -> Vec<String> {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        vec![
            format!("tool={} {}", self.tool, self.version),
            format!("command={}", self.command),
            format!("config_sha256={}", self.config_sha256),
            format!("seeds={}", seeds.join(",")),
        ]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("header serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub ops: Vec<OpId>,
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            ops: OpId::ALL.to_vec(),
            points: 100,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            bail!("no ops selected");
        }
        if self.points == 0 {
            bail!("points must be positive");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            bail!("step must be positive, got {}", self.step);
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            bail!("tolerance must be positive, got {}", self.tolerance);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// One seed, 10 epochs.
    Smoke,
    /// Five seeds, default epochs.
    Full,
}

pub const SMOKE_EPOCHS: usize = 10;
pub const FULL_SEEDS: usize = 5;

/// Applies a preset on top of `cfg`, keeping the first configured seed as the base.
pub fn apply_preset(cfg: &mut BenchConfig, preset: Preset) {
    let base = cfg.seeds.first().copied().unwrap_or(0);
    match preset {
        Preset::Smoke => {
            cfg.seeds = vec![base];
            cfg.train.epochs = SMOKE_EPOCHS;
        }
        Preset::Full => {
            cfg.seeds = (base..base + FULL_SEEDS as u64).collect();
            cfg.train.epochs = lss_core::synth::TrainConfig::default().epochs;
        }
    }
}

/// Replaces the seed list with consecutive seeds starting at `seed`, keeping its length.
pub fn shift_seeds(cfg: &mut BenchConfig, seed: u64) {
    let n = cfg.seeds.len().max(1) as u64;
    cfg.seeds = (seed..seed + n).collect();
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub mix: MixConfig,
}

impl AugmentConfig {
    /// Checks paths and parameters; returns `(input, output)`.
    pub fn validate(&self) -> Result<(PathBuf, PathBuf)> {
        let (Some(input), Some(output)) = (&self.input, &self.output) else {
            bail!("augment needs both an input and an output directory");
        };
        for dir in [
            lss_core::kitti::IMAGE_DIR,
            lss_core::kitti::LABEL_DIR,
            lss_core::kitti::CALIB_DIR,
        ] {
            if !input.join(dir).is_dir() {
                bail!("{} is not a KITTI-layout directory (missing {dir}/)", input.display());
            }
        }
        if output.exists() {
            if !output.is_dir() {
                bail!("output {} exists and is not a directory", output.display());
            }
            if fs::canonicalize(output)? == fs::canonicalize(input)? {
                bail!("output directory must differ from the input directory");
            }
        }
        self.mix.lambda_policy.validate()?;
        if !(self.mix.intrinsics_tolerance >= 0.0 && self.mix.intrinsics_tolerance.is_finite()) {
            bail!("intrinsics tolerance must be non-negative");
        }
        Ok((input.clone(), output.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectConfig {
    pub logits: Vec<f64>,
    pub temperature: f64,
    /// Gumbel noise seed; `None` means zero noise.
    pub noise_seed: Option<u64>,
    pub binarize: bool,
}

impl Default for InspectConfig {
    fn default() -> Self {
        Self {
            logits: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
            noise_seed: None,
            binarize: false,
        }
    }
}

/// Parses logits separated by commas and/or whitespace.
pub fn parse_logits(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("invalid logit {t:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<GradcheckConfig>(r#"{"points": 3, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = serde_json::from_str::<BenchConfig>(r#"{"train": {"epoch": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn hash_changes_with_config() {
        let a = GradcheckConfig::default();
        let b = GradcheckConfig {
            points: 7,
            ..GradcheckConfig::default()
        };
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a.clone()).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn presets() {
        let mut cfg = BenchConfig::default();
        apply_preset(&mut cfg, Preset::Smoke);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.train.epochs, SMOKE_EPOCHS);
        apply_preset(&mut cfg, Preset::Full);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        shift_seeds(&mut cfg, 10);
        assert_eq!(cfg.seeds, vec![10, 11, 12, 13, 14]);
    }

    #[test]
    fn logits_parse_with_mixed_separators() {
        assert_eq!(parse_logits("20, 18\n17\t7\n").unwrap(), vec![20.0, 18.0, 17.0, 7.0]);
        assert!(parse_logits("1,x").is_err());
    }
}
