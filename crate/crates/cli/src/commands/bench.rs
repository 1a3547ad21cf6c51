//! `lss bench`: the synthetic strategy comparison with its ablations.

use std::path::PathBuf;

use anyhow::Result;
use lss_core::synth::report::{CSV_FILE, JSON_FILE};
use lss_core::synth::{compare, BenchConfig, BenchReport};

use super::write_file;
use crate::config::{self, ReportHeader};
use crate::{BenchArgs, Outcome};

pub const DEFAULT_OUT: &str = "bench_out";

/// Config file (or defaults), then the preset, then `--seed`.
pub fn resolve(args: &BenchArgs) -> Result<BenchConfig> {
    let mut cfg: BenchConfig = config::load_or_default(args.common.config.as_deref())?;
    if let Some(p) = args.preset {
        config::apply_preset(&mut cfg, p);
    }
    if let Some(s) = args.common.seed {
        config::shift_seeds(&mut cfg, s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "diverged".to_string(), |x| format!("{x:.4}"))
}

fn print_summary(report: &BenchReport) {
    println!(
        "{:<22} {:>6} {:>9} {:>10} {:>10} {:>10} {:>8}",
        "run", "seeds", "diverged", "depth", "dims", "yaw", "overlap"
    );
    for s in &report.summaries {
        println!(
            "{:<22} {:>6} {:>9} {:>10} {:>10} {:>10} {:>8}",
            s.label,
            s.seeds,
            s.diverged,
            fmt_opt(s.median_depth),
            fmt_opt(s.median_dims),
            fmt_opt(s.median_yaw),
            s.mean_support_overlap
                .map_or_else(|| "-".to_string(), |o| format!("{o:.3}")),
        );
    }
}

pub fn run(args: BenchArgs) -> Result<Outcome> {
    let cfg = resolve(&args)?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let header = ReportHeader::new("bench", &cfg, cfg.seeds.clone())?;
    let report = compare(&cfg)?;
    write_file(&out, CSV_FILE, &report.to_csv(&header.lines()))?;
    write_file(&out, JSON_FILE, &report.to_json(header.to_json())?)?;
    print_summary(&report);
    println!(
        "wrote {} and {}",
        out.join(CSV_FILE).display(),
        out.join(JSON_FILE).display()
    );
    Ok(Outcome::Success)
}
