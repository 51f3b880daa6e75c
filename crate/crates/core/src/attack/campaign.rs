use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cmaes::{minimize_with, BatchEvaluator, CmaesOptions};
use super::fitness::{
    eval_p_pred, AttackDataset, DatasetSession, Fitness, FixedFitness, OpCounts, PPred, ReconfigurableFitness, TestCrp,
    TestSet,
};
use super::{Genome, GenomeLayout};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::metrics::{p_min, EstimatorInputs};
use crate::obfuscation::{
    design_pattern_set, pairwise_distinct, partition_values, predict_value_bits, ObPufDevice, ObPufParams,
};
use crate::protocol::{enroll, run_session, AuthParams, EnrollOptions, LocalLink, Prover};
use crate::rng::{mix, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFamily {
    /// Inserted values never change and are known to the attacker.
    Fixed,
    /// Inserted values are reconfigured every session.
    Reconfigurable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// One genome for all response bits.
    Joint,
    /// One run per response bit, each seeing only its own bit.
    PerBit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
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
    /// Held-out OB-CRPs for prediction accuracy.
    pub test_crps: usize,
    pub design_trials: usize,
    /// Cap on objective evaluations over the whole campaign.
    pub max_evaluations: Option<u64>,
    /// Record prediction accuracy of the best genome after every generation.
    pub trace_p_pred: bool,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            family: TargetFamily::Reconfigurable,
            mode: AttackMode::Joint,
            k: 64,
            n_ins: 2,
            p: 2,
            n_mismatch: 0,
            m: 3,
            xors: 2,
            sessions: 50,
            rounds: 300,
            generations: 100,
            population: None,
            sigma0: 1.0,
            test_crps: 2000,
            design_trials: 50,
            max_evaluations: None,
            trace_p_pred: true,
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn device_params(&self) -> ObPufParams {
        ObPufParams { k: self.k, m: self.m, p: self.p, n_ins: self.n_ins, xors: self.xors.max(1) }
    }

    pub fn layout(&self) -> GenomeLayout {
        let xors = match self.family {
            TargetFamily::Fixed => 0,
            TargetFamily::Reconfigurable => self.xors,
        };
        GenomeLayout { k: self.k, m: self.m, n_ins: self.n_ins, xors }
    }

    pub fn validate(&self) -> Result<()> {
        self.device_params().validate()?;
        if self.family == TargetFamily::Reconfigurable && self.xors == 0 {
            return Err(Error::invalid("a reconfigurable target needs xors >= 1"));
        }
        if self.n_mismatch > self.n_ins {
            return Err(Error::invalid("n_mismatch cannot exceed n_ins"));
        }
        if self.sessions == 0 || self.rounds == 0 || self.test_crps == 0 {
            return Err(Error::invalid("sessions, rounds and test_crps must be positive"));
        }
        if self.generations == 0 {
            return Err(Error::invalid("at least one generation is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    /// Some training run reproduced every observed response.
    PerfectFit,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Response bit of a per-bit run.
    pub bit: Option<usize>,
    pub generation: usize,
    /// Best fitness within this generation, per CRP.
    pub fitness: f64,
    /// Best fitness so far, per CRP.
    pub best_fitness: f64,
    /// Oracle per-bit accuracy of the best genome so far.
    pub p_pred: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub p_pred: PPred,
    pub p_min: f64,
    /// `p_pred.oracle_bit > p_min`.
    pub broken: bool,
    /// Best fitness per CRP (averaged over bits in per-bit mode).
    pub best_fitness: f64,
    pub generations_run: usize,
    pub evaluations: u64,
    pub stop: StopReason,
    pub ops: OpCounts,
    pub trace: Vec<TraceRow>,
    pub genome: Genome,
}

/// Held-out OB-CRPs with oracle labels from a fresh session. The device's
/// session is closed afterwards.
pub fn sample_test_set<R: Rng + ?Sized>(
    dev: &mut ObPufDevice,
    n: usize,
    reconfigurable: bool,
    rng: &mut R,
) -> Result<TestSet> {
    let ps = dev.patterns().clone();
    let partial = ps.k() - ps.m();
    let reconfig_challenges = if reconfigurable {
        let models: Vec<_> = dev.reconfig_block().iter().map(|a| a.omega().clone()).collect();
        let mut found = None;
        for _ in 0..1000 {
            let rc: Vec<BitString> = (0..ps.p() * ps.m()).map(|_| BitString::random(partial, rng)).collect();
            let values = partition_values(&predict_value_bits(&models, &rc)?, ps.p(), ps.m())?;
            if pairwise_distinct(&values) {
                found = Some(rc);
                break;
            }
        }
        let rc = found.ok_or_else(|| Error::invalid("could not draw distinct session values"))?;
        dev.reconfigure_session(&rc, rng, false)?;
        rc
    } else {
        dev.open_fixed_session();
        Vec::new()
    };
    let values = dev.session_values().expect("session open").to_vec();
    let crps = (0..n)
        .map(|_| {
            let c_ob = BitString::random(partial, rng);
            let (crp, pattern) = dev.eval_traced(&c_ob, rng, false)?;
            Ok(TestCrp { c_ob, r_ob: crp.obfuscated_response, pattern })
        })
        .collect::<Result<_>>();
    dev.close_session();
    Ok(TestSet { reconfig_challenges, values, crps: crps? })
}

/// Eavesdropped training data. Reconfigurable targets are observed through
/// full protocol sessions with an ideally enrolled server.
fn collect_dataset(cfg: &CampaignConfig, dev: &mut ObPufDevice) -> Result<AttackDataset> {
    match cfg.family {
        TargetFamily::Fixed => {
            let mut rng = substream(cfg.seed, 3);
            let partial = cfg.k - cfg.m;
            dev.open_fixed_session();
            let sessions = (0..cfg.sessions)
                .map(|_| {
                    let crps = (0..cfg.rounds)
                        .map(|_| dev.eval(&BitString::random(partial, &mut rng), &mut rng, false))
                        .collect::<Result<_>>()?;
                    Ok(DatasetSession { reconfig_challenges: Vec::new(), crps })
                })
                .collect::<Result<_>>();
            dev.close_session();
            AttackDataset::new(dev.patterns().clone(), sessions?)
        }
        TargetFamily::Reconfigurable => {
            let mut rng = substream(cfg.seed, 3);
            let mut opts = EnrollOptions::ideal(0.0);
            opts.pool_sessions = cfg.sessions;
            let mut server = enroll(dev, cfg.seed, &opts, &mut rng)?;
            let mut link = LocalLink::new(Prover::new(dev.clone(), substream(cfg.seed, 4), false));
            let params = AuthParams { n: cfg.rounds, n_th: cfg.rounds, n_mismatch: cfg.n_mismatch };
            let transcripts = (0..cfg.sessions as u64)
                .map(|s| run_session(&mut server, &mut link, &params, s, &mut rng).map_err(|e| match e.failure {
                    crate::protocol::SessionFailure::Core(e) => e,
                    other => Error::invalid(alloc::format!("{other}")),
                }))
                .collect::<Result<Vec<_>>>()?;
            AttackDataset::from_transcripts(dev.patterns(), &transcripts)
        }
    }
}

/// Generates a device, eavesdrops on it, runs CMA-ES with the family's
/// fitness and reports held-out prediction accuracy.
pub fn run_attack_campaign<E: BatchEvaluator + ?Sized>(cfg: &CampaignConfig, evaluator: &E) -> Result<CampaignReport> {
    cfg.validate()?;
    let params = cfg.device_params();
    let patterns = design_pattern_set(&params, mix(&[cfg.seed, 1]), cfg.design_trials)?;
    let mut dev = ObPufDevice::sample(&params, patterns, 0.0, &mut substream(cfg.seed, 2))?;
    let dataset = collect_dataset(cfg, &mut dev)?;
    let reconfigurable = cfg.family == TargetFamily::Reconfigurable;
    let test = sample_test_set(&mut dev, cfg.test_crps, reconfigurable, &mut substream(cfg.seed, 5))?;
    let layout = cfg.layout();

    let runs: Vec<(Option<usize>, AttackDataset)> = match cfg.mode {
        AttackMode::Joint => alloc::vec![(None, dataset)],
        AttackMode::PerBit => (0..cfg.n_ins).map(|b| Ok((Some(b), dataset.restrict_to_bit(b)?))).collect::<Result<_>>()?,
    };

    let mut trace = Vec::new();
    let mut evaluations = 0u64;
    let mut generations_run = 0;
    let mut stop = StopReason::Completed;
    let mut ops = OpCounts::default();
    let mut fitness_sum = 0.0;
    let mut puf_parts: Vec<Vec<f64>> = Vec::new();
    let mut best_reconfig: Option<(f64, Vec<f64>)> = None;

    for (bit, data) in &runs {
        let fitness: alloc::boxed::Box<dyn Fitness> = match cfg.family {
            TargetFamily::Fixed => alloc::boxed::Box::new(FixedFitness::new(data, &dev.patterns().base_values())?),
            TargetFamily::Reconfigurable => alloc::boxed::Box::new(ReconfigurableFitness::new(data, cfg.xors)?),
        };
        let run_layout = fitness.layout();
        let per_crp = match cfg.family {
            TargetFamily::Fixed => data.crp_count() as f64,
            TargetFamily::Reconfigurable => 1.0,
        };
        let objective = |g: &[f64]| fitness.evaluate(g);
        let opts = CmaesOptions {
            population: cfg.population,
            generations: cfg.generations,
            sigma0: cfg.sigma0,
            seed: mix(&[cfg.seed, 6, bit.map_or(u64::MAX, |b| b as u64)]),
            target: Some(0.0),
        };
        let mut budget_hit = false;
        let mut observer = |es: &super::cmaes::Cmaes, gen_best: f64| -> bool {
            evaluations += es.population() as u64;
            let (best, best_f) = es.best().expect("a generation ran");
            let p_pred = match (cfg.trace_p_pred, bit) {
                (true, None) => Genome::new(layout, best.to_vec())
                    .and_then(|g| eval_p_pred(&g, dev.patterns(), &test))
                    .ok()
                    .map(|pp| pp.oracle_bit),
                _ => None,
            };
            trace.push(TraceRow {
                bit: *bit,
                generation: es.generation(),
                fitness: gen_best / per_crp,
                best_fitness: best_f / per_crp,
                p_pred,
            });
            budget_hit = cfg.max_evaluations.is_some_and(|cap| evaluations >= cap);
            !budget_hit
        };
        let res = minimize_with(&objective, alloc::vec![0.0; run_layout.dim()], &opts, evaluator, &mut observer)?;
        generations_run += res.trace.len();
        fitness_sum += res.best_fitness / per_crp;
        let c = fitness.op_counts();
        ops.evaluations += c.evaluations;
        ops.feature_vectors += c.feature_vectors;
        ops.dot_products += c.dot_products;
        ops.value_predictions += c.value_predictions;
        if res.best_fitness == 0.0 && stop == StopReason::Completed {
            stop = StopReason::PerfectFit;
        }
        let puf_len = run_layout.n_ins * run_layout.puf_len();
        puf_parts.push(res.best[..puf_len].to_vec());
        if best_reconfig.as_ref().is_none_or(|(f, _)| res.best_fitness < *f) {
            best_reconfig = Some((res.best_fitness, res.best[puf_len..].to_vec()));
        }
        if budget_hit {
            stop = StopReason::BudgetExhausted;
            break;
        }
    }

    // Bits a budget-truncated per-bit campaign never reached keep a zero model.
    let mut data: Vec<f64> = puf_parts.concat();
    data.resize(cfg.n_ins * layout.puf_len(), 0.0);
    data.extend(best_reconfig.map(|(_, r)| r).unwrap_or_default());
    data.resize(layout.dim(), 0.0);
    let genome = Genome::new(layout, data)?;
    let p_pred = eval_p_pred(&genome, dev.patterns(), &test)?;
    let p_min = p_min(&EstimatorInputs::new(cfg.n_ins, cfg.p, cfg.n_mismatch));
    Ok(CampaignReport {
        config: cfg.clone(),
        p_pred,
        p_min,
        broken: p_pred.oracle_bit > p_min,
        best_fitness: fitness_sum / runs.len() as f64,
        generations_run,
        evaluations,
        stop,
        ops,
        trace,
        genome,
    })
}
