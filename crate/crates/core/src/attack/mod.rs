//! Modeling attacks.
//!
//! A candidate model is a flat real genome holding delay vectors for the PUF
//! block, optionally followed by delay vectors for the reconfiguration XOR
//! block. CMA-ES minimizes a Hamming-distance fitness over recorded OB-CRPs.

pub mod cmaes;
mod campaign;
mod fitness;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::apuf::{fill_features, response_bit, DelayVector};
use crate::bits::BitString;
use crate::error::{check_len, Error, Result};

pub use campaign::{
    run_attack_campaign, sample_test_set, AttackMode, CampaignConfig, CampaignReport, StopReason, TargetFamily,
    TraceRow,
};
pub use cmaes::{BatchEvaluator, CmaesOptions, CmaesResult, Sequential};
pub use fitness::{
    eval_p_pred, fitness_fixed, fitness_reconfigurable, AttackDataset, DatasetSession, Fitness, FixedFitness,
    OpCounts, PPred, ReconfigurableFitness, TestCrp, TestSet,
};

/// Shape of a genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenomeLayout {
    pub k: usize,
    pub m: usize,
    pub n_ins: usize,
    /// Reconfiguration models; 0 for fixed-pattern targets.
    pub xors: usize,
}

impl GenomeLayout {
    pub fn puf_len(&self) -> usize {
        self.k + 1
    }

    pub fn reconfig_len(&self) -> usize {
        self.k - self.m + 1
    }

    pub fn dim(&self) -> usize {
        self.n_ins * self.puf_len() + self.xors * self.reconfig_len()
    }
}

/// Flat genome with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub layout: GenomeLayout,
    pub data: Vec<f64>,
}

impl Genome {
    pub fn new(layout: GenomeLayout, data: Vec<f64>) -> Result<Self> {
        check_len(layout.dim(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("genome entries must be finite"));
        }
        Ok(Self { layout, data })
    }

    /// Concatenates PUF-block and reconfiguration models.
    pub fn from_models(k: usize, m: usize, puf: &[DelayVector], reconfig: &[DelayVector]) -> Result<Self> {
        let layout = GenomeLayout { k, m, n_ins: puf.len(), xors: reconfig.len() };
        let mut data = Vec::with_capacity(layout.dim());
        for w in puf {
            check_len(layout.puf_len(), w.as_slice().len())?;
            data.extend_from_slice(w.as_slice());
        }
        for w in reconfig {
            check_len(layout.reconfig_len(), w.as_slice().len())?;
            data.extend_from_slice(w.as_slice());
        }
        Self::new(layout, data)
    }

    pub fn puf_model(&self, b: usize) -> &[f64] {
        puf_slice(&self.layout, &self.data, b)
    }

    pub fn reconfig_model(&self, x: usize) -> &[f64] {
        reconfig_slice(&self.layout, &self.data, x)
    }

    pub fn puf_models(&self) -> Vec<DelayVector> {
        (0..self.layout.n_ins).map(|b| DelayVector::new(self.puf_model(b).to_vec()).expect("finite")).collect()
    }

    pub fn reconfig_models(&self) -> Vec<DelayVector> {
        (0..self.layout.xors).map(|x| DelayVector::new(self.reconfig_model(x).to_vec()).expect("finite")).collect()
    }
}

pub(crate) fn puf_slice<'a>(layout: &GenomeLayout, data: &'a [f64], b: usize) -> &'a [f64] {
    let len = layout.puf_len();
    &data[b * len..(b + 1) * len]
}

pub(crate) fn reconfig_slice<'a>(layout: &GenomeLayout, data: &'a [f64], x: usize) -> &'a [f64] {
    let start = layout.n_ins * layout.puf_len();
    let len = layout.reconfig_len();
    &data[start + x * len..start + (x + 1) * len]
}

/// Budget for the single-APUF attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub generations: usize,
    pub population: Option<usize>,
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self { generations: 3000, population: None, sigma0: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub model: DelayVector,
    pub train_accuracy: f64,
    /// Best training error rate per generation.
    pub trace: Vec<f64>,
}

/// Fits one APUF to noiseless CRPs by minimizing the number of mispredicted
/// responses. Stops early once every training response is reproduced.
pub fn attack_apuf_baseline(challenges: &[BitString], responses: &[u8], opts: &BaselineOptions) -> Result<BaselineResult> {
    attack_apuf_baseline_with(challenges, responses, opts, &Sequential)
}

pub fn attack_apuf_baseline_with<E: BatchEvaluator + ?Sized>(
    challenges: &[BitString],
    responses: &[u8],
    opts: &BaselineOptions,
    evaluator: &E,
) -> Result<BaselineResult> {
    check_len(challenges.len(), responses.len())?;
    let k = challenges.first().ok_or(Error::EmptyGroup)?.len();
    if k == 0 {
        return Err(Error::ZeroStages);
    }
    let features = feature_matrix(challenges, k)?;
    let n = challenges.len();
    let objective = |w: &[f64]| -> f64 {
        features
            .chunks_exact(k + 1)
            .zip(responses)
            .filter(|(phi, &r)| response_bit(crate::apuf::dot(w, phi)) != r)
            .count() as f64
    };
    let cma = CmaesOptions {
        population: opts.population,
        generations: opts.generations,
        sigma0: opts.sigma0,
        seed: opts.seed,
        target: Some(0.0),
    };
    let res = cmaes::minimize(&objective, k + 1, &cma, evaluator)?;
    let model = DelayVector::new(res.best)?;
    let scale = n as f64;
    Ok(BaselineResult {
        model,
        train_accuracy: 1.0 - res.best_fitness / scale,
        trace: res.trace.iter().map(|f| f / scale).collect(),
    })
}

/// Fraction of `responses` reproduced by `model`.
pub fn model_accuracy(model: &DelayVector, challenges: &[BitString], responses: &[u8]) -> Result<f64> {
    check_len(challenges.len(), responses.len())?;
    if challenges.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut hits = 0usize;
    for (c, &r) in challenges.iter().zip(responses) {
        hits += (model.response(c)? == r) as usize;
    }
    Ok(hits as f64 / challenges.len() as f64)
}

/// Row-major parity features of equally long challenges.
pub(crate) fn feature_matrix(challenges: &[BitString], k: usize) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; challenges.len() * (k + 1)];
    for (c, row) in challenges.iter().zip(out.chunks_exact_mut(k + 1)) {
        check_len(k, c.len())?;
        fill_features(c.as_slice(), row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apuf::sample_apuf;
    use crate::rng::seeded;

    fn crps(w: &DelayVector, n: usize, seed: u64) -> (Vec<BitString>, Vec<u8>) {
        let mut rng = seeded(seed);
        let c: Vec<BitString> = (0..n).map(|_| BitString::random(w.stages(), &mut rng)).collect();
        let r = c.iter().map(|c| w.response(c).unwrap()).collect();
        (c, r)
    }

    #[test]
    fn layout_dimensions() {
        let l = GenomeLayout { k: 64, m: 3, n_ins: 4, xors: 2 };
        assert_eq!(l.dim(), 4 * 65 + 2 * 62);
        let fixed = GenomeLayout { xors: 0, ..l };
        assert_eq!(fixed.dim(), 260);
    }

    #[test]
    fn genome_round_trips_models() {
        let puf: Vec<DelayVector> = (0..3).map(|s| sample_apuf(8, s, 0.0).unwrap().omega().clone()).collect();
        let rec: Vec<DelayVector> = (0..2).map(|s| sample_apuf(6, 10 + s, 0.0).unwrap().omega().clone()).collect();
        let g = Genome::from_models(8, 2, &puf, &rec).unwrap();
        assert_eq!(g.puf_models(), puf);
        assert_eq!(g.reconfig_models(), rec);
        assert!(Genome::new(g.layout, alloc::vec![f64::NAN; g.layout.dim()]).is_err());
    }

    #[test]
    fn baseline_reaches_high_accuracy() {
        let truth = sample_apuf(64, 1, 0.0).unwrap().omega().clone();
        let (c, r) = crps(&truth, 5000, 2);
        let (tc, tr) = crps(&truth, 10_000, 3);
        let fit = attack_apuf_baseline(&c, &r, &BaselineOptions { seed: 4, ..Default::default() }).unwrap();
        let acc = model_accuracy(&fit.model, &tc, &tr).unwrap();
        assert!(acc >= 0.95, "held-out accuracy {acc}");
        assert!(fit.train_accuracy >= acc - 0.01);
    }

    #[test]
    fn baseline_is_underdetermined_with_few_crps() {
        let mut accs = Vec::new();
        for s in 0..20 {
            let truth = sample_apuf(64, 100 + s, 0.0).unwrap().omega().clone();
            let (c, r) = crps(&truth, 10, 200 + s);
            let (tc, tr) = crps(&truth, 2000, 300 + s);
            let fit = attack_apuf_baseline(&c, &r, &BaselineOptions { seed: s, ..Default::default() }).unwrap();
            assert!(fit.train_accuracy >= 0.9);
            accs.push(model_accuracy(&fit.model, &tc, &tr).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((0.5..=0.7).contains(&mean), "mean accuracy {mean}");
    }

    #[test]
    fn own_crps_are_reproduced() {
        let truth = sample_apuf(32, 9, 0.0).unwrap().omega().clone();
        let (c, r) = crps(&truth, 500, 10);
        assert_eq!(model_accuracy(&truth, &c, &r).unwrap(), 1.0);
    }
}
