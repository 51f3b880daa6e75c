//! `attack`: modeling-attack campaigns and the plain-APUF baseline.

use std::time::Instant;

use clap::Args;
use obpuf_core::apuf::sample_apuf;
use obpuf_core::attack::{
    attack_apuf_baseline_with, model_accuracy, AttackMode, BaselineOptions, BatchEvaluator, CampaignConfig,
    CampaignReport, Sequential, StopReason, TargetFamily,
};
use obpuf_core::bits::BitString;
use obpuf_core::rng::{mix, substream};
use serde::{Deserialize, Serialize};

use super::{apply_flags, load_config, params, resolve_seed, usage, CmdResult, CommonArgs, Outcome};
use crate::output::{write_table, Provenance, Table};
use crate::parallel::{timed_campaign, Rayon};
use crate::row;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub family: TargetFamily,
    pub mode: AttackMode,
    pub k: usize,
    pub n_ins: usize,
    pub p: usize,
    pub n_mismatch: usize,
    pub m: usize,
    pub xors: usize,
    pub sessions: usize,
    pub rounds: usize,
    pub generations: usize,
    pub population: Option<usize>,
    pub sigma0: f64,
    pub test_crps: usize,
    pub design_trials: usize,
    pub max_evaluations: Option<u64>,
    pub trace_p_pred: bool,
    /// Independent runs with seeds `seed, seed + 1, ...`.
    pub runs: usize,
    /// Attack a single noiseless APUF instead of an OB-PUF.
    pub baseline: bool,
    pub baseline_crps: usize,
    pub baseline_test_crps: usize,
    pub baseline_generations: usize,
    /// Evaluate populations on one thread.
    pub sequential: bool,
    pub seed: Option<u64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let c = CampaignConfig::default();
        Self {
            family: c.family,
            mode: c.mode,
            k: c.k,
            n_ins: c.n_ins,
            p: c.p,
            n_mismatch: c.n_mismatch,
            m: c.m,
            xors: c.xors,
            sessions: c.sessions,
            rounds: c.rounds,
            generations: c.generations,
            population: c.population,
            sigma0: c.sigma0,
            test_crps: c.test_crps,
            design_trials: c.design_trials,
            max_evaluations: c.max_evaluations,
            trace_p_pred: c.trace_p_pred,
            runs: 1,
            baseline: false,
            baseline_crps: 5000,
            baseline_test_crps: 10_000,
            baseline_generations: BaselineOptions::default().generations,
            sequential: false,
            seed: None,
        }
    }
}

impl AttackConfig {
    pub fn campaign(&self, seed: u64) -> CampaignConfig {
        CampaignConfig {
            family: self.family,
            mode: self.mode,
            k: self.k,
            n_ins: self.n_ins,
            p: self.p,
            n_mismatch: self.n_mismatch,
            m: self.m,
            xors: self.xors,
            sessions: self.sessions,
            rounds: self.rounds,
            generations: self.generations,
            population: self.population,
            sigma0: self.sigma0,
            test_crps: self.test_crps,
            design_trials: self.design_trials,
            max_evaluations: self.max_evaluations,
            trace_p_pred: self.trace_p_pred,
            seed,
        }
    }
}

fn parse_family(s: &str) -> Result<TargetFamily, String> {
    match s {
        "fixed" => Ok(TargetFamily::Fixed),
        "reconfigurable" => Ok(TargetFamily::Reconfigurable),
        _ => Err("expected fixed or reconfigurable".into()),
    }
}

fn parse_mode(s: &str) -> Result<AttackMode, String> {
    match s {
        "joint" => Ok(AttackMode::Joint),
        "per-bit" | "per_bit" => Ok(AttackMode::PerBit),
        _ => Err("expected joint or per-bit".into()),
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AttackArgs {
    /// Target family: fixed or reconfigurable.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<TargetFamily>,
    /// joint or per-bit.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<AttackMode>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_ins: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n_mismatch: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub xors: Option<usize>,
    /// Eavesdropped sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Rounds per eavesdropped session.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub test_crps: Option<usize>,
    #[arg(long)]
    pub design_trials: Option<usize>,
    #[arg(long)]
    pub max_evaluations: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub trace_p_pred: Option<bool>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub baseline: Option<bool>,
    #[arg(long)]
    pub baseline_crps: Option<usize>,
    #[arg(long)]
    pub baseline_test_crps: Option<usize>,
    #[arg(long)]
    pub baseline_generations: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sequential: Option<bool>,
}

fn family_name(f: TargetFamily) -> &'static str {
    match f {
        TargetFamily::Fixed => "fixed",
        TargetFamily::Reconfigurable => "reconfigurable",
    }
}

fn mode_name(m: AttackMode) -> &'static str {
    match m {
        AttackMode::Joint => "joint",
        AttackMode::PerBit => "per_bit",
    }
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::Completed => "completed",
        StopReason::PerfectFit => "perfect_fit",
        StopReason::BudgetExhausted => "budget_exhausted",
    }
}

/// Runs every campaign of `cfg` and returns reports with wall seconds.
pub fn campaigns(cfg: &AttackConfig, seed: u64) -> CmdResult<Vec<(CampaignReport, f64)>> {
    if cfg.runs == 0 {
        return Err(usage("runs must be positive"));
    }
    let evaluator: &dyn BatchEvaluator = if cfg.sequential { &Sequential } else { &Rayon };
    (0..cfg.runs as u64)
        .map(|r| {
            let c = cfg.campaign(seed.wrapping_add(r));
            params(c.validate())?;
            let (report, wall) = timed_campaign(&c, evaluator)?;
            Ok((report, wall.as_secs_f64()))
        })
        .collect()
}

fn run_campaigns(common: &CommonArgs, cfg: &AttackConfig, seed: u64) -> CmdResult<Outcome> {
    let results = campaigns(cfg, seed)?;
    let prov = Provenance::new("attack", seed, cfg);
    let mut report = Table::new(&[
        "run",
        "seed",
        "family",
        "mode",
        "k",
        "n_ins",
        "p",
        "n_mismatch",
        "m",
        "xors",
        "sessions",
        "rounds",
        "generations",
        "p_pred",
        "p_pred_response",
        "p_pred_best_pattern",
        "p_min",
        "broken",
        "best_fitness",
        "generations_run",
        "evaluations",
        "stop",
        "feature_vectors",
        "dot_products",
        "value_predictions",
    ]);
    let mut trace = Table::new(&["run", "seed", "bit", "generation", "fitness", "best_fitness", "p_pred"]);
    let mut timing = Table::new(&["run", "seed", "wall_seconds"]);
    let mut lines = Vec::new();
    for (r, (rep, wall)) in results.iter().enumerate() {
        let c = &rep.config;
        report.push(row![
            r,
            c.seed,
            family_name(c.family),
            mode_name(c.mode),
            c.k,
            c.n_ins,
            c.p,
            c.n_mismatch,
            c.m,
            c.xors,
            c.sessions,
            c.rounds,
            c.generations,
            rep.p_pred.oracle_bit,
            rep.p_pred.oracle_response,
            rep.p_pred.best_pattern_bit,
            rep.p_min,
            rep.broken,
            rep.best_fitness,
            rep.generations_run,
            rep.evaluations,
            stop_name(rep.stop),
            rep.ops.feature_vectors,
            rep.ops.dot_products,
            rep.ops.value_predictions
        ]);
        for t in &rep.trace {
            trace.push(row![r, c.seed, t.bit, t.generation, t.fitness, t.best_fitness, t.p_pred]);
        }
        timing.push(row![r, c.seed, wall]);
        lines.push(format!(
            "run {r} (seed {}): P_pred {:.4}, P_min {:.4}, {} in {wall:.1} s",
            c.seed,
            rep.p_pred.oracle_bit,
            rep.p_min,
            if rep.broken { "broken" } else { "not broken" }
        ));
    }
    let files = vec![
        write_table(&common.out, "attack_report", common.format, &prov, &report)?,
        write_table(&common.out, "trace", common.format, &prov, &trace)?,
        write_table(&common.out, "timing", common.format, &prov, &timing)?,
    ];
    Ok(Outcome { seed, files, summary: lines })
}

/// Result of one baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub trace: Vec<f64>,
    pub wall_seconds: f64,
}

pub fn baseline_run(cfg: &AttackConfig, seed: u64) -> CmdResult<BaselineRun> {
    if cfg.k == 0 || cfg.baseline_crps == 0 || cfg.baseline_test_crps == 0 || cfg.baseline_generations == 0 {
        return Err(usage("baseline needs positive k, CRP counts and generations"));
    }
    let start = Instant::now();
    let truth = sample_apuf(cfg.k, mix(&[seed, 1]), 0.0)?.omega().clone();
    let draw = |n: usize, stream: u64| -> obpuf_core::Result<(Vec<BitString>, Vec<u8>)> {
        let mut rng = substream(seed, stream);
        let c: Vec<BitString> = (0..n).map(|_| BitString::random(cfg.k, &mut rng)).collect();
        let r = c.iter().map(|c| truth.response(c)).collect::<obpuf_core::Result<_>>()?;
        Ok((c, r))
    };
    let (c, r) = draw(cfg.baseline_crps, 2)?;
    let (tc, tr) = draw(cfg.baseline_test_crps, 3)?;
    let opts = BaselineOptions {
        generations: cfg.baseline_generations,
        population: cfg.population,
        sigma0: cfg.sigma0,
        seed: mix(&[seed, 4]),
    };
    let evaluator: &dyn BatchEvaluator = if cfg.sequential { &Sequential } else { &Rayon };
    let fit = attack_apuf_baseline_with(&c, &r, &opts, evaluator)?;
    let test_accuracy = model_accuracy(&fit.model, &tc, &tr)?;
    Ok(BaselineRun {
        seed,
        train_accuracy: fit.train_accuracy,
        test_accuracy,
        trace: fit.trace,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_baseline(common: &CommonArgs, cfg: &AttackConfig, seed: u64) -> CmdResult<Outcome> {
    if cfg.runs == 0 {
        return Err(usage("runs must be positive"));
    }
    let prov = Provenance::new("attack", seed, cfg);
    let mut report = Table::new(&[
        "run",
        "seed",
        "k",
        "train_crps",
        "test_crps",
        "generations_run",
        "train_accuracy",
        "test_accuracy",
    ]);
    let mut trace = Table::new(&["run", "seed", "generation", "error_rate"]);
    let mut timing = Table::new(&["run", "seed", "wall_seconds"]);
    let mut lines = Vec::new();
    for r in 0..cfg.runs {
        let b = baseline_run(cfg, seed.wrapping_add(r as u64))?;
        report.push(row![
            r,
            b.seed,
            cfg.k,
            cfg.baseline_crps,
            cfg.baseline_test_crps,
            b.trace.len(),
            b.train_accuracy,
            b.test_accuracy
        ]);
        for (g, e) in b.trace.iter().enumerate() {
            trace.push(row![r, b.seed, g, e]);
        }
        timing.push(row![r, b.seed, b.wall_seconds]);
        lines.push(format!("run {r} (seed {}): held-out accuracy {:.4}", b.seed, b.test_accuracy));
    }
    let files = vec![
        write_table(&common.out, "baseline_report", common.format, &prov, &report)?,
        write_table(&common.out, "baseline_trace", common.format, &prov, &trace)?,
        write_table(&common.out, "timing", common.format, &prov, &timing)?,
    ];
    Ok(Outcome { seed, files, summary: lines })
}

pub fn run(common: &CommonArgs, args: &AttackArgs) -> CmdResult<Outcome> {
    let mut cfg: AttackConfig = load_config(common.config.as_deref())?;
    apply_flags!(
        args, cfg;
        family, mode, k, n_ins, p, n_mismatch, m, xors, sessions, rounds, generations, sigma0, test_crps,
        design_trials, trace_p_pred, runs, baseline, baseline_crps, baseline_test_crps, baseline_generations,
        sequential
    );
    if args.population.is_some() {
        cfg.population = args.population;
    }
    if args.max_evaluations.is_some() {
        cfg.max_evaluations = args.max_evaluations;
    }
    let seed = resolve_seed(common.seed, cfg.seed);
    cfg.seed = Some(seed);
    if cfg.baseline {
        run_baseline(common, &cfg, seed)
    } else {
        run_campaigns(common, &cfg, seed)
    }
}
