//! Thread-pool evaluation of CMA-ES populations.

use std::time::{Duration, Instant};

use obpuf_core::attack::{run_attack_campaign, BatchEvaluator, CampaignConfig, CampaignReport};
use rayon::prelude::*;

/// Evaluates candidates on the rayon pool. Fitness values come back in
/// candidate order, so results match [`obpuf_core::attack::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl BatchEvaluator for Rayon {
    fn evaluate(&self, objective: &(dyn Fn(&[f64]) -> f64 + Sync), candidates: &[Vec<f64>]) -> Vec<f64> {
        candidates.par_iter().map(|c| objective(c)).collect()
    }
}

/// Runs a campaign and measures its wall time.
pub fn timed_campaign<E: BatchEvaluator + ?Sized>(
    cfg: &CampaignConfig,
    evaluator: &E,
) -> obpuf_core::Result<(CampaignReport, Duration)> {
    let start = Instant::now();
    let report = run_attack_campaign(cfg, evaluator)?;
    Ok((report, start.elapsed()))
}
