//! Benchmark configuration, the comparison driver and its CSV/JSON reports.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{generate_scene, SynthObject, Task, DEFAULT_NOISE_SIGMA};
use super::train::{run_strategy, RunOutcome, Strategy, TrainConfig};
use crate::error::{Error, Result};

pub const CSV_FILE: &str = "bench_report.csv";
pub const JSON_FILE: &str = "bench_report.json";
pub const PROPERTIES: [&str; 3] = ["depth", "dims", "yaw"];

const DATA_SALT: u64 = 0xDA7A_0000_0000_0001;
const VAL_SALT: u64 = 0xDA7A_0000_0000_0002;
const TRAIN_SALT: u64 = 0x7EA1_0000_0000_0003;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub task: Task,
    pub noise_sigma: f64,
    pub train_size: usize,
    pub val_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: Task::Occluded,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            train_size: 256,
            val_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Adds an lss run with warm-up disabled.
    pub warmup: bool,
    /// Adds lss runs with and without mixup on a reduced training set.
    pub mixup: bool,
    pub mixup_train_size: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            warmup: true,
            mixup: true,
            mixup_train_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablations: AblationConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            data: DataConfig::default(),
            train: TrainConfig::default(),
            ablations: AblationConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidInput("no strategies selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("no seeds given".into()));
        }
        if self.data.train_size == 0 || self.data.val_size == 0 {
            return Err(Error::InvalidInput(
                "train and validation sets must be non-empty".into(),
            ));
        }
        if self.ablations.mixup && self.ablations.mixup_train_size < 2 {
            return Err(Error::InvalidInput(
                "mixup ablation needs at least 2 training objects".into(),
            ));
        }
        if !(self.data.noise_sigma >= 0.0 && self.data.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be non-negative, got {}",
                self.data.noise_sigma
            )));
        }
        self.train.validate()
    }
}

/// One training run in the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// Row label: the strategy name, or an ablation name.
    pub label: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub train_size: usize,
    pub train: TrainConfig,
}

pub const NO_WARMUP_LABEL: &str = "lss_no_warmup";
pub const MIXUP_OFF_LABEL: &str = "lss_small_mixup_off";
pub const MIXUP_ON_LABEL: &str = "lss_small_mixup_on";

pub fn plan_runs(cfg: &BenchConfig) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    let mut add = |label: &str, strategy: Strategy, train_size: usize, train: TrainConfig| {
        for &seed in &cfg.seeds {
            runs.push(RunSpec {
                label: label.to_string(),
                strategy,
                seed,
                train_size,
                train: train.clone(),
            });
        }
    };
    for &s in &cfg.strategies {
        add(s.name(), s, cfg.data.train_size, cfg.train.clone());
    }
    if cfg.ablations.warmup {
        let train = TrainConfig {
            warmup_fraction: 0.0,
            ..cfg.train.clone()
        };
        add(NO_WARMUP_LABEL, Strategy::Lss, cfg.data.train_size, train);
    }
    if cfg.ablations.mixup {
        let small = cfg.ablations.mixup_train_size;
        let off = TrainConfig {
            mixup: false,
            ..cfg.train.clone()
        };
        let on = TrainConfig {
            mixup: true,
            ..cfg.train.clone()
        };
        add(MIXUP_OFF_LABEL, Strategy::Lss, small, off);
        add(MIXUP_ON_LABEL, Strategy::Lss, small, on);
    }
    runs
}

/// Training and validation sets for `seed`; identical across strategies.
pub fn datasets(data: &DataConfig, seed: u64, train_size: usize) -> Result<(Vec<SynthObject>, Vec<SynthObject>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DATA_SALT);
    let train = generate_scene(data.task, train_size, data.noise_sigma, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VAL_SALT);
    let val = generate_scene(data.task, data.val_size, data.noise_sigma, &mut rng)?;
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    /// Benchmark seed; the training rng is derived from it.
    pub seed: u64,
    pub train_size: usize,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub strategy: Strategy,
    pub seeds: usize,
    pub diverged: usize,
    /// Median over seeds; diverged seeds count as infinitely bad. `None` if
    /// the median itself falls on a diverged seed.
    pub median_depth: Option<f64>,
    pub median_dims: Option<f64>,
    pub median_yaw: Option<f64>,
    pub mean_support_overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<Summary>,
}

/// Median with `None` treated as larger than any value; even counts average the middle pair.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let m = if v.len() % 2 == 1 {
        v[v.len() / 2]
    } else {
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    };
    m.is_finite().then_some(m)
}

fn summarize(runs: &[RunRecord]) -> Vec<Summary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.label == label).collect();
            let pick = |f: fn(&super::train::Metrics) -> f64| -> Vec<Option<f64>> {
                group.iter().map(|r| r.outcome.metrics.as_ref().map(f)).collect()
            };
            let overlaps: Vec<f64> = group.iter().filter_map(|r| r.outcome.support_overlap).collect();
            Summary {
                label: label.to_string(),
                strategy: group[0].outcome.strategy,
                seeds: group.len(),
                diverged: group.iter().filter(|r| r.outcome.diverged()).count(),
                median_depth: median(&pick(|m| m.depth)),
                median_dims: median(&pick(|m| m.dims)),
                median_yaw: median(&pick(|m| m.yaw)),
                mean_support_overlap: (!overlaps.is_empty())
                    .then(|| overlaps.iter().sum::<f64>() / overlaps.len() as f64),
            }
        })
        .collect()
}

/// Runs every planned strategy and ablation; runs execute in parallel, results keep plan order.
pub fn compare(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let plan = plan_runs(cfg);
    let runs: Vec<RunRecord> = plan
        .par_iter()
        .map(|spec| {
            let (train, val) = datasets(&cfg.data, spec.seed, spec.train_size)?;
            let outcome = run_strategy(spec.strategy, &train, &val, &spec.train, spec.seed ^ TRAIN_SALT)?;
            Ok(RunRecord {
                label: spec.label.clone(),
                seed: spec.seed,
                train_size: spec.train_size,
                outcome,
            })
        })
        .collect::<Result<_>>()?;
    let summaries = summarize(&runs);
    Ok(BenchReport {
        config: cfg.clone(),
        runs,
        summaries,
    })
}

impl BenchReport {
    pub fn summary(&self, label: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    pub fn runs_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.label == label)
    }

    /// `run,strategy,seed,property,mae` rows preceded by `# `-prefixed header lines.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("run,strategy,seed,property,mae\n");
        for r in &self.runs {
            let o = &r.outcome;
            let values = o.metrics.map(|m| [m.depth, m.dims, m.yaw]);
            for (k, prop) in PROPERTIES.iter().enumerate() {
                let mae = match values {
                    Some(v) => format!("{:.6}", v[k]),
                    None => "diverged".to_string(),
                };
                let _ = writeln!(out, "{},{},{},{},{}", r.label, o.strategy, r.seed, prop, mae);
            }
        }
        out
    }

    pub fn to_json(&self, header: serde_json::Value) -> Result<String> {
        let value = serde_json::json!({
            "header": header,
            "report": self,
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }
}
