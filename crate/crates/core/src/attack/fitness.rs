use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{puf_slice, reconfig_slice, Genome, GenomeLayout};
use crate::apuf::{dot, fill_features, response_bit};
use crate::bits::{BitString, PartialChallenge};
use crate::error::{check_len, Error, Result};
use crate::obfuscation::{expand_bits, ObCrp, PatternSet, PatternVector};
use crate::protocol::SessionTranscript;

/// OB-CRPs observed in one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSession {
    /// Public reconfiguration challenges; empty for fixed-pattern targets.
    pub reconfig_challenges: Vec<PartialChallenge>,
    pub crps: Vec<ObCrp>,
}

/// Eavesdropped sessions plus the public part of the pattern set (positions
/// and masks; the stored inserted values are not used by the reconfigurable
/// fitness).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub patterns: PatternSet,
    pub sessions: Vec<DatasetSession>,
}

impl AttackDataset {
    pub fn new(patterns: PatternSet, sessions: Vec<DatasetSession>) -> Result<Self> {
        let partial = patterns.k() - patterns.m();
        for s in &sessions {
            if !s.reconfig_challenges.is_empty() {
                check_len(patterns.p() * patterns.m(), s.reconfig_challenges.len())?;
            }
            for c in &s.reconfig_challenges {
                check_len(partial, c.len())?;
            }
            for crp in &s.crps {
                check_len(partial, crp.partial_challenge.len())?;
                check_len(patterns.n_ins(), crp.obfuscated_response.len())?;
            }
        }
        Ok(Self { patterns, sessions })
    }

    /// Collects the rounds of server transcripts.
    pub fn from_transcripts(patterns: &PatternSet, transcripts: &[SessionTranscript]) -> Result<Self> {
        let sessions = transcripts
            .iter()
            .map(|t| DatasetSession {
                reconfig_challenges: t.reconfig_challenges.clone(),
                crps: t
                    .rounds
                    .iter()
                    .map(|r| ObCrp { partial_challenge: r.c_ob.clone(), obfuscated_response: r.r_ob.clone() })
                    .collect(),
            })
            .collect();
        Self::new(patterns.clone(), sessions)
    }

    pub fn crp_count(&self) -> usize {
        self.sessions.iter().map(|s| s.crps.len()).sum()
    }

    /// The same data seen through response bit `b` only.
    pub fn restrict_to_bit(&self, b: usize) -> Result<Self> {
        let n_ins = self.patterns.n_ins();
        if b >= n_ins {
            return Err(Error::invalid("response bit out of range"));
        }
        let one = |s: &BitString| BitString::from_bits(&[s.get(b)]).expect("bit");
        let patterns = self
            .patterns
            .patterns()
            .iter()
            .map(|pv| PatternVector::new(pv.insert_positions.clone(), pv.insert_values.clone(), one(&pv.response_mask)))
            .collect();
        let sessions = self
            .sessions
            .iter()
            .map(|s| DatasetSession {
                reconfig_challenges: s.reconfig_challenges.clone(),
                crps: s
                    .crps
                    .iter()
                    .map(|c| ObCrp { partial_challenge: c.partial_challenge.clone(), obfuscated_response: one(&c.obfuscated_response) })
                    .collect(),
            })
            .collect();
        Self::new(PatternSet::new(self.patterns.k(), 1, patterns)?, sessions)
    }
}

/// Work done by a fitness function since construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub evaluations: u64,
    /// Parity feature vectors computed during evaluations.
    pub feature_vectors: u64,
    pub dot_products: u64,
    /// Inserted-value bits predicted from reconfiguration models.
    pub value_predictions: u64,
}

#[derive(Debug, Default)]
struct Counters {
    evaluations: AtomicU64,
    feature_vectors: AtomicU64,
    dot_products: AtomicU64,
    value_predictions: AtomicU64,
}

impl Counters {
    fn add(&self, features: u64, dots: u64, values: u64) {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.feature_vectors.fetch_add(features, Ordering::Relaxed);
        self.dot_products.fetch_add(dots, Ordering::Relaxed);
        self.value_predictions.fetch_add(values, Ordering::Relaxed);
    }

    fn snapshot(&self) -> OpCounts {
        OpCounts {
            evaluations: self.evaluations.load(Ordering::Relaxed),
            feature_vectors: self.feature_vectors.load(Ordering::Relaxed),
            dot_products: self.dot_products.load(Ordering::Relaxed),
            value_predictions: self.value_predictions.load(Ordering::Relaxed),
        }
    }
}

/// An attack objective over flat genomes (smaller is fitter).
pub trait Fitness: Sync {
    fn layout(&self) -> GenomeLayout;
    fn crp_count(&self) -> usize;
    fn evaluate(&self, genome: &[f64]) -> f64;
    fn op_counts(&self) -> OpCounts;
}

/// `R_OB ⊕ S_R` per pattern: the raw response each pattern would imply.
fn unmasked_targets(patterns: &PatternSet, r_ob: &BitString, out: &mut Vec<u8>) {
    for pv in patterns.patterns() {
        out.extend(r_ob.iter().zip(pv.response_mask.iter()).map(|(r, m)| r ^ m));
    }
}

/// Mismatching bits of the genome's raw responses against `target`, giving
/// up once `bound` is reached.
fn mismatches(layout: &GenomeLayout, genome: &[f64], phi: &[f64], target: &[u8], bound: usize, dots: &mut u64) -> usize {
    let mut miss = 0;
    for (b, &t) in target.iter().enumerate() {
        *dots += 1;
        miss += (response_bit(dot(puf_slice(layout, genome, b), phi)) != t) as usize;
        if miss >= bound {
            break;
        }
    }
    miss
}

/// Per-CRP minimum FHD over the `p` candidate responses, summed over CRPs.
/// The inserted values are known, so all full-challenge features are
/// computed once up front.
#[derive(Debug)]
pub struct FixedFitness {
    layout: GenomeLayout,
    p: usize,
    crps: usize,
    features: Vec<f64>,
    targets: Vec<u8>,
    counters: Counters,
}

impl FixedFitness {
    pub fn new(dataset: &AttackDataset, values: &[BitString]) -> Result<Self> {
        let ps = &dataset.patterns;
        ps.check_values(values)?;
        let (k, p, n_ins) = (ps.k(), ps.p(), ps.n_ins());
        let crps = dataset.crp_count();
        let mut features = alloc::vec![0.0; crps * p * (k + 1)];
        let mut targets = Vec::with_capacity(crps * p * n_ins);
        let mut full = alloc::vec![0u8; k];
        let mut rows = features.chunks_exact_mut(k + 1);
        for crp in dataset.sessions.iter().flat_map(|s| &s.crps) {
            for (pv, v) in ps.patterns().iter().zip(values) {
                expand_bits(crp.partial_challenge.as_slice(), &pv.insert_positions, v.as_slice(), &mut full);
                fill_features(&full, rows.next().expect("sized"));
            }
            unmasked_targets(ps, &crp.obfuscated_response, &mut targets);
        }
        Ok(Self {
            layout: GenomeLayout { k, m: ps.m(), n_ins, xors: 0 },
            p,
            crps,
            features,
            targets,
            counters: Counters::default(),
        })
    }
}

impl Fitness for FixedFitness {
    fn layout(&self) -> GenomeLayout {
        self.layout
    }

    fn crp_count(&self) -> usize {
        self.crps
    }

    fn evaluate(&self, genome: &[f64]) -> f64 {
        let n_ins = self.layout.n_ins;
        let row = self.layout.k + 1;
        let mut dots = 0u64;
        let mut total = 0usize;
        for i in 0..self.crps {
            let mut best = n_ins;
            for j in 0..self.p {
                let at = i * self.p + j;
                let phi = &self.features[at * row..(at + 1) * row];
                let target = &self.targets[at * n_ins..(at + 1) * n_ins];
                best = best.min(mismatches(&self.layout, genome, phi, target, best, &mut dots));
                if best == 0 {
                    break;
                }
            }
            total += best;
        }
        self.counters.add(0, dots, 0);
        total as f64 / n_ins as f64
    }

    fn op_counts(&self) -> OpCounts {
        self.counters.snapshot()
    }
}

#[derive(Debug)]
struct SessionData {
    reconfig_features: Vec<f64>,
    partials: Vec<u8>,
    targets: Vec<u8>,
}

/// Session-wise fitness for reconfigurable targets.
///
/// For every candidate the reconfiguration models first predict each
/// session's inserted values, after which every full challenge and its
/// features have to be formed again before the per-CRP minimum FHD can be
/// taken. The sum is normalized by the total number of CRPs.
#[derive(Debug)]
pub struct ReconfigurableFitness {
    layout: GenomeLayout,
    positions: Vec<Vec<usize>>,
    sessions: Vec<SessionData>,
    crps: usize,
    counters: Counters,
}

impl ReconfigurableFitness {
    pub fn new(dataset: &AttackDataset, xors: usize) -> Result<Self> {
        if xors == 0 {
            return Err(Error::EmptyGroup);
        }
        let ps = &dataset.patterns;
        let (k, m) = (ps.k(), ps.m());
        let partial = k - m;
        let sessions = dataset
            .sessions
            .iter()
            .map(|s| {
                if s.reconfig_challenges.len() != ps.p() * m {
                    return Err(Error::invalid("every session needs its reconfiguration challenges"));
                }
                let reconfig_features = super::feature_matrix(&s.reconfig_challenges, partial)?;
                let mut partials = Vec::with_capacity(s.crps.len() * partial);
                let mut targets = Vec::with_capacity(s.crps.len() * ps.p() * ps.n_ins());
                for crp in &s.crps {
                    partials.extend_from_slice(crp.partial_challenge.as_slice());
                    unmasked_targets(ps, &crp.obfuscated_response, &mut targets);
                }
                Ok(SessionData { reconfig_features, partials, targets })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layout: GenomeLayout { k, m, n_ins: ps.n_ins(), xors },
            positions: ps.patterns().iter().map(|pv| pv.insert_positions.clone()).collect(),
            sessions,
            crps: dataset.crp_count(),
            counters: Counters::default(),
        })
    }
}

/// XOR-block prediction of the `p·m` value bits from row-major features.
fn predict_values(layout: &GenomeLayout, genome: &[f64], features: &[f64], out: &mut Vec<u8>, dots: &mut u64) {
    out.clear();
    for phi in features.chunks_exact(layout.reconfig_len()) {
        let mut bit = 0;
        for x in 0..layout.xors {
            bit ^= response_bit(dot(reconfig_slice(layout, genome, x), phi));
        }
        *dots += layout.xors as u64;
        out.push(bit);
    }
}

impl Fitness for ReconfigurableFitness {
    fn layout(&self) -> GenomeLayout {
        self.layout
    }

    fn crp_count(&self) -> usize {
        self.crps
    }

    fn evaluate(&self, genome: &[f64]) -> f64 {
        let GenomeLayout { k, m, n_ins, .. } = self.layout;
        let p = self.positions.len();
        let partial = k - m;
        let mut full = alloc::vec![0u8; k];
        let mut phi = alloc::vec![0.0; k + 1];
        let mut values = Vec::with_capacity(p * m);
        let (mut dots, mut feats, mut preds) = (0u64, 0u64, 0u64);
        let mut total = 0usize;
        for s in &self.sessions {
            predict_values(&self.layout, genome, &s.reconfig_features, &mut values, &mut dots);
            preds += values.len() as u64;
            for (i, c_ob) in s.partials.chunks_exact(partial).enumerate() {
                let mut best = n_ins;
                for (j, pos) in self.positions.iter().enumerate() {
                    expand_bits(c_ob, pos, &values[j * m..(j + 1) * m], &mut full);
                    fill_features(&full, &mut phi);
                    feats += 1;
                    let at = i * p + j;
                    best = best.min(mismatches(&self.layout, genome, &phi, &s.targets[at * n_ins..(at + 1) * n_ins], best, &mut dots));
                    if best == 0 {
                        break;
                    }
                }
                total += best;
            }
        }
        self.counters.add(feats, dots, preds);
        if self.crps == 0 {
            0.0
        } else {
            total as f64 / (n_ins * self.crps) as f64
        }
    }

    fn op_counts(&self) -> OpCounts {
        self.counters.snapshot()
    }
}

/// [`FixedFitness`] for a single genome.
pub fn fitness_fixed(genome: &Genome, dataset: &AttackDataset, values: &[BitString]) -> Result<f64> {
    let f = FixedFitness::new(dataset, values)?;
    let l = f.layout();
    if genome.layout.k != l.k || genome.layout.n_ins != l.n_ins {
        return Err(Error::invalid("genome does not match the dataset"));
    }
    Ok(f.evaluate(&genome.data[..l.dim()]))
}

/// [`ReconfigurableFitness`] for a single genome.
pub fn fitness_reconfigurable(genome: &Genome, dataset: &AttackDataset) -> Result<f64> {
    let f = ReconfigurableFitness::new(dataset, genome.layout.xors)?;
    if f.layout() != genome.layout {
        return Err(Error::invalid("genome does not match the dataset"));
    }
    Ok(f.evaluate(&genome.data))
}

/// Held-out OB-CRP with its ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCrp {
    pub c_ob: PartialChallenge,
    /// Noiseless obfuscated response.
    pub r_ob: BitString,
    /// Pattern the device actually used.
    pub pattern: usize,
}

/// Held-out session with oracle knowledge of its inserted values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub reconfig_challenges: Vec<PartialChallenge>,
    pub values: Vec<BitString>,
    pub crps: Vec<TestCrp>,
}

/// Prediction accuracy of a genome on held-out data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PPred {
    /// Per-bit agreement using the true pattern index and inserted values.
    pub oracle_bit: f64,
    /// Fraction of whole responses predicted exactly under the same oracle.
    pub oracle_response: f64,
    /// Per-bit agreement of the closest candidate response, using the
    /// genome's own value predictions where it has a reconfiguration part.
    pub best_pattern_bit: f64,
}

pub fn eval_p_pred(genome: &Genome, patterns: &PatternSet, test: &TestSet) -> Result<PPred> {
    let l = &genome.layout;
    if l.k != patterns.k() || l.n_ins != patterns.n_ins() || l.m != patterns.m() {
        return Err(Error::invalid("genome does not match the pattern set"));
    }
    if test.crps.is_empty() {
        return Err(Error::EmptyGroup);
    }
    patterns.check_values(&test.values)?;
    let attacker_values = if l.xors > 0 && !test.reconfig_challenges.is_empty() {
        check_len(patterns.p() * patterns.m(), test.reconfig_challenges.len())?;
        let features = super::feature_matrix(&test.reconfig_challenges, l.k - l.m)?;
        let mut bits = Vec::new();
        predict_values(l, &genome.data, &features, &mut bits, &mut 0);
        crate::obfuscation::partition_values(&bits, patterns.p(), patterns.m())?
    } else {
        test.values.clone()
    };
    let raw = |c: &PartialChallenge, pv: &PatternVector, v: &BitString, phi: &mut [f64], full: &mut [u8]| -> Vec<u8> {
        expand_bits(c.as_slice(), &pv.insert_positions, v.as_slice(), full);
        fill_features(full, phi);
        (0..l.n_ins).map(|b| response_bit(dot(genome.puf_model(b), phi)) ^ pv.response_mask.get(b)).collect()
    };
    let mut full = alloc::vec![0u8; l.k];
    let mut phi = alloc::vec![0.0; l.k + 1];
    let (mut bit_hits, mut exact, mut best_hits) = (0usize, 0usize, 0usize);
    for t in &test.crps {
        check_len(l.n_ins, t.r_ob.len())?;
        if t.pattern >= patterns.p() {
            return Err(Error::invalid("pattern index out of range"));
        }
        let pred = raw(&t.c_ob, patterns.pattern(t.pattern), &test.values[t.pattern], &mut phi, &mut full);
        let hits = pred.iter().zip(t.r_ob.iter()).filter(|(a, b)| *a == b).count();
        bit_hits += hits;
        exact += (hits == l.n_ins) as usize;
        let closest = patterns
            .patterns()
            .iter()
            .zip(&attacker_values)
            .map(|(pv, v)| raw(&t.c_ob, pv, v, &mut phi, &mut full).iter().zip(t.r_ob.iter()).filter(|(a, b)| *a == b).count())
            .max()
            .unwrap_or(0);
        best_hits += closest;
    }
    let bits = (test.crps.len() * l.n_ins) as f64;
    Ok(PPred {
        oracle_bit: bit_hits as f64 / bits,
        oracle_response: exact as f64 / test.crps.len() as f64,
        best_pattern_bit: best_hits as f64 / bits,
    })
}
