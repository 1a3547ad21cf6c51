//! `lss inspect`: soft map and sample maps for one logit vector.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;

use anyhow::{bail, Context, Result};
use lss_core::gumbel::{seeded_noise, softmax};
use lss_core::select::{divide_absolute, divide_relative, DividerResult};

use super::write_file;
use crate::config::{self, InspectConfig, ReportHeader};
use crate::{InspectArgs, Outcome};

pub const CSV_FILE: &str = "inspect.csv";

pub fn resolve(args: &InspectArgs) -> Result<InspectConfig> {
    let mut cfg: InspectConfig = config::load_or_default(args.common.config.as_deref())?;
    if let Some(text) = &args.logits {
        cfg.logits = config::parse_logits(text)?;
    }
    if let Some(path) = &args.logits_file {
        let text = if path.as_os_str() == "-" {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        } else {
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        };
        cfg.logits = config::parse_logits(&text)?;
    }
    if let Some(t) = args.temperature {
        cfg.temperature = t;
    }
    if let Some(s) = args.common.seed {
        cfg.noise_seed = Some(s);
    }
    if args.binarize {
        cfg.binarize = true;
    }
    if cfg.logits.is_empty() {
        bail!("no logits given (use --logits, --logits-file or a config)");
    }
    if cfg.logits.iter().any(|v| !v.is_finite()) {
        bail!("logits must be finite");
    }
    Ok(cfg)
}

/// Retained flags per cell, or all-true for a single cell.
fn retained(perturbed: &[f64], divider: Option<&DividerResult>) -> Vec<bool> {
    match divider {
        Some(d) => {
            let key = perturbed[d.order[d.split_index]];
            perturbed.iter().map(|&p| p >= key).collect()
        }
        None => vec![true; perturbed.len()],
    }
}

/// The CSV text plus the positive counts under both dividers.
pub fn render(cfg: &InspectConfig, header: &ReportHeader) -> Result<(String, usize, usize)> {
    let n = cfg.logits.len();
    let noise = match cfg.noise_seed {
        Some(seed) => seeded_noise(n, seed),
        None => vec![0.0; n],
    };
    let perturbed: Vec<f64> = cfg.logits.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let soft = softmax(&perturbed, cfg.temperature)?;
    let (rel, abs) = if n >= 2 {
        (
            Some(divide_relative(&soft, &perturbed, cfg.temperature)?),
            Some(divide_absolute(&soft, &perturbed)?),
        )
    } else {
        (None, None)
    };
    let keep_rel = retained(&perturbed, rel.as_ref());
    let keep_abs = retained(&perturbed, abs.as_ref());
    let count = |k: &[bool]| k.iter().filter(|&&x| x).count();
    let (n_rel, n_abs) = (count(&keep_rel), count(&keep_abs));
    let weight = |keep: bool, s: f64| match (keep, cfg.binarize) {
        (false, _) => 0.0,
        (true, true) => 1.0,
        (true, false) => s,
    };

    let mut out = String::new();
    for line in header.lines() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "# temperature={}", cfg.temperature)?;
    writeln!(out, "# relative_positives={n_rel}")?;
    writeln!(out, "# absolute_positives={n_abs}")?;
    out.push_str("cell,logit,noise,perturbed,soft,sample_relative,sample_absolute\n");
    for i in 0..n {
        writeln!(
            out,
            "{i},{},{},{},{:.6},{:.6},{:.6}",
            cfg.logits[i],
            noise[i],
            perturbed[i],
            soft[i],
            weight(keep_rel[i], soft[i]),
            weight(keep_abs[i], soft[i]),
        )?;
    }
    Ok((out, n_rel, n_abs))
}

pub fn run(args: InspectArgs) -> Result<Outcome> {
    let cfg = resolve(&args)?;
    let seeds = cfg.noise_seed.into_iter().collect();
    let header = ReportHeader::new("inspect", &cfg, seeds)?;
    let (csv, _, _) = render(&cfg, &header)?;
    match &args.common.out {
        Some(dir) => {
            write_file(dir, CSV_FILE, &csv)?;
            println!("wrote {}", dir.join(CSV_FILE).display());
        }
        None => print!("{csv}"),
    }
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(logits: Vec<f64>) -> (String, usize, usize) {
        let cfg = InspectConfig {
            logits,
            ..InspectConfig::default()
        };
        let header = ReportHeader::new("inspect", &cfg, vec![]).unwrap();
        render(&cfg, &header).unwrap()
    }

    #[test]
    fn reference_vector() {
        let (csv, rel, abs) = counts(vec![20.0, 18.0, 17.0, 7.0]);
        assert_eq!((rel, abs), (3, 1));
        assert!(csv.contains("0,20,0,20,0.843793,0.843793,0.843793"));
    }

    #[test]
    fn uniform_input_keeps_everything() {
        let (_, rel, _) = counts(vec![1.5; 9]);
        assert_eq!(rel, 9);
    }

    #[test]
    fn output_length_matches_input() {
        for n in [1, 2, 5, 17] {
            let (csv, _, _) = counts((0..n).map(|i| i as f64 * 0.7).collect());
            let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
            assert_eq!(rows, n + 1);
        }
    }
}
