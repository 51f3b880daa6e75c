//! `design`: pattern-set search and its FHD statistics.

use clap::Args;
use obpuf_core::apuf::{ApufInstance, DelayVector};
use obpuf_core::obfuscation::{
    design_pattern_set, first_positions_pattern_set, pattern_fhd_report, FhdReport, ObPufParams, PatternSet,
    DESIGN_TARGET_FHD,
};
use obpuf_core::rng::{mix, substream};
use serde::{Deserialize, Serialize};

use super::{apply_flags, load_config, params, resolve_seed, usage, CmdResult, CommonArgs, Outcome};
use crate::formats::write_json;
use crate::output::{write_table, Provenance, Table};
use crate::row;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub n_ins: usize,
    /// Candidate sets examined by the search.
    pub trials: usize,
    /// Partial challenges sampled for the reported statistics.
    pub samples: usize,
    pub bins: usize,
    /// Insert every pattern's values at positions `1..=m` instead of searching.
    pub adversarial_first_positions: bool,
    pub seed: Option<u64>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            k: 64,
            m: 3,
            p: 4,
            n_ins: 4,
            trials: 50,
            samples: 10_000,
            bins: 20,
            adversarial_first_positions: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n_ins: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adversarial_first_positions: Option<bool>,
}

/// The designed (or adversarial) set and its FHD report on a fresh PUF block.
pub fn design_with_report(cfg: &DesignConfig, seed: u64) -> CmdResult<(PatternSet, FhdReport)> {
    let pr = ObPufParams { k: cfg.k, m: cfg.m, p: cfg.p, n_ins: cfg.n_ins, xors: 1 };
    params(pr.validate())?;
    if cfg.samples == 0 || cfg.bins == 0 {
        return Err(usage("samples and bins must be positive"));
    }
    let set = if cfg.adversarial_first_positions {
        params(first_positions_pattern_set(&pr, mix(&[seed, 2])))?
    } else {
        if cfg.trials == 0 {
            return Err(usage("trials must be positive"));
        }
        design_pattern_set(&pr, mix(&[seed, 2]), cfg.trials)?
    };
    let mut rng = substream(seed, 3);
    let block: Vec<DelayVector> = (0..cfg.n_ins)
        .map(|_| ApufInstance::sample(cfg.k, 0.0, &mut rng).map(|a| a.omega().clone()))
        .collect::<obpuf_core::Result<_>>()?;
    let report = pattern_fhd_report(&set, &block, cfg.samples, &mut substream(seed, 4))?;
    Ok((set, report))
}

fn stats(xs: &[f64]) -> (f64, f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

fn histogram(xs: &[f64], bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for &x in xs {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        h[b] += 1;
    }
    h
}

pub fn run(common: &CommonArgs, args: &DesignArgs) -> CmdResult<Outcome> {
    let mut cfg: DesignConfig = load_config(common.config.as_deref())?;
    apply_flags!(args, cfg; k, m, p, n_ins, trials, samples, bins, adversarial_first_positions);
    let seed = resolve_seed(common.seed, cfg.seed);
    cfg.seed = Some(seed);
    let (set, report) = design_with_report(&cfg, seed)?;
    let prov = Provenance::new("design", seed, &cfg);

    let patterns_path = common.out.join("patterns.json");
    write_json(&patterns_path, &set)?;

    let design = if cfg.adversarial_first_positions { "first_positions" } else { "searched" };
    let (cm, cmin, cmax) = stats(&report.challenge_side);
    let (rm, rmin, rmax) = stats(&report.response_side);
    let mut summary = Table::new(&[
        "design",
        "k",
        "m",
        "p",
        "n_ins",
        "samples",
        "challenge_fhd_mean",
        "challenge_fhd_min",
        "challenge_fhd_max",
        "response_fhd_mean",
        "response_fhd_min",
        "response_fhd_max",
        "target_fhd",
        "meets_target",
    ]);
    summary.push(row![
        design,
        cfg.k,
        cfg.m,
        cfg.p,
        cfg.n_ins,
        cfg.samples,
        cm,
        cmin,
        cmax,
        rm,
        rmin,
        rmax,
        DESIGN_TARGET_FHD,
        cm >= DESIGN_TARGET_FHD
    ]);
    let summary_path = write_table(&common.out, "fhd_summary", common.format, &prov, &summary)?;

    let (hc, hr) = (histogram(&report.challenge_side, cfg.bins), histogram(&report.response_side, cfg.bins));
    let mut hist = Table::new(&["bin_low", "bin_high", "challenge_count", "response_count"]);
    for b in 0..cfg.bins {
        let w = 1.0 / cfg.bins as f64;
        hist.push(row![b as f64 * w, (b + 1) as f64 * w, hc[b], hr[b]]);
    }
    let hist_path = write_table(&common.out, "fhd_histogram", common.format, &prov, &hist)?;

    Ok(Outcome {
        seed,
        files: vec![patterns_path, summary_path, hist_path],
        summary: vec![format!("{design} design: challenge-side FHD {cm:.4}, response-side FHD {rm:.4}")],
    })
}
