//! `lss gradcheck`: finite-difference verification of every differentiable op.

use anyhow::Result;
use lss_core::gradcheck::run_suite;

use super::write_file;
use crate::config::{self, GradcheckConfig, ReportHeader};
use crate::{GradcheckArgs, Outcome};

pub const REPORT_FILE: &str = "gradcheck_report.json";

pub fn resolve(args: &GradcheckArgs) -> Result<GradcheckConfig> {
    let mut cfg: GradcheckConfig = config::load_or_default(args.common.config.as_deref())?;
    if !args.ops.is_empty() {
        cfg.ops = args.ops.clone();
    }
    if let Some(p) = args.points {
        cfg.points = p;
    }
    if let Some(s) = args.step {
        cfg.step = s;
    }
    if let Some(t) = args.tolerance {
        cfg.tolerance = t;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: GradcheckArgs) -> Result<Outcome> {
    let cfg = resolve(&args)?;
    let header = ReportHeader::new("gradcheck", &cfg, vec![cfg.seed])?;
    let reports = run_suite(&cfg.ops, cfg.points, cfg.step, cfg.tolerance, cfg.seed)?;
    for line in header.lines() {
        println!("# {line}");
    }
    for r in &reports {
        println!(
            "[{}] points={} max_relative_error={:.3e} kink_perturbations={} tolerance={:.1e} {}",
            r.op,
            r.points,
            r.max_relative_error,
            r.kink_perturbations,
            cfg.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &args.common.out {
        let json = serde_json::json!({ "header": header.to_json(), "config": cfg, "ops": reports });
        write_file(out, REPORT_FILE, &serde_json::to_string_pretty(&json)?)?;
    }
    Ok(if reports.iter().all(|r| r.passed) {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}
