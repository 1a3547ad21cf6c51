//! `lss augment`: MixUp3D over a KITTI-layout directory.

use anyhow::{Context, Result};
use lss_core::kitti::{load_dataset, save_scene};
use lss_core::mixup::{augment_dataset, LambdaPolicy, REPORT_FILE};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::write_file;
use crate::config::{self, AugmentConfig, ReportHeader};
use crate::{AugmentArgs, Outcome};

pub fn resolve(args: &AugmentArgs) -> Result<AugmentConfig> {
    let mut cfg: AugmentConfig = config::load_or_default(args.common.config.as_deref())?;
    if let Some(p) = &args.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &args.common.out {
        cfg.output = Some(p.clone());
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(l) = args.lambda {
        cfg.mix.lambda_policy = LambdaPolicy::Fixed(l);
    }
    if let Some(alpha) = args.beta_alpha {
        cfg.mix.lambda_policy = LambdaPolicy::Beta { alpha };
    }
    if let Some(t) = args.tolerance {
        cfg.mix.intrinsics_tolerance = t;
    }
    Ok(cfg)
}

pub fn run(args: AugmentArgs) -> Result<Outcome> {
    let cfg = resolve(&args)?;
    let (input, output) = cfg.validate()?;
    let header = ReportHeader::new("augment", &cfg, vec![cfg.seed])?;
    let scenes = load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mixed, report) = augment_dataset(&scenes, &cfg.mix, &mut rng)?;
    for scene in &mixed {
        save_scene(&output, scene).with_context(|| format!("writing scene {}", scene.id))?;
    }
    let json = serde_json::json!({ "header": header.to_json(), "config": cfg, "report": report });
    write_file(&output, REPORT_FILE, &serde_json::to_string_pretty(&json)?)?;
    println!(
        "scenes={} mixed={} passed_through={} -> {}",
        report.scenes,
        report.mixed,
        report.passed_through,
        output.display()
    );
    Ok(Outcome::Success)
}
