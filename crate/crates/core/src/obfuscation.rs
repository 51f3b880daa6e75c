//! Latent pattern-vector obfuscation.
//!
//! A pattern vector inserts `m` bits into a `k − m` bit partial challenge and
//! masks the `n_ins` bit raw response of the PUF block. A device holds `p`
//! pattern vectors and picks one uniformly at random for every OB-CRP, so the
//! verifier (and an attacker) never learns which one was used.
//!
//! Pattern indices are 0-based; insert positions are 1-based as in the
//! provisioning records.

use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::apuf::{delay_of, eval_response, fill_features, response_bit, ApufInstance, DelayVector};
use crate::bits::{BitString, Challenge, PartialChallenge};
use crate::error::{check_len, Error, Result};
use crate::rng;

/// Positions and values of the inserted bits plus the response mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternVector {
    /// Strictly ascending, 1-based positions in the full challenge.
    pub insert_positions: Vec<usize>,
    pub insert_values: BitString,
    pub response_mask: BitString,
}

impl PatternVector {
    pub fn new(insert_positions: Vec<usize>, insert_values: BitString, response_mask: BitString) -> Self {
        Self { insert_positions, insert_values, response_mask }
    }

    pub fn m(&self) -> usize {
        self.insert_positions.len()
    }

    fn validate(&self, k: usize, n_ins: usize) -> Result<()> {
        check_len(self.m(), self.insert_values.len())?;
        check_len(n_ins, self.response_mask.len())?;
        check_positions(&self.insert_positions, k)
    }
}

fn check_positions(positions: &[usize], k: usize) -> Result<()> {
    let mut prev = 0;
    for &pos in positions {
        if pos <= prev || pos > k {
            return Err(Error::invalid(alloc::format!(
                "insert positions must be strictly ascending within 1..={k}"
            )));
        }
        prev = pos;
    }
    Ok(())
}

/// Interleaves `values` at the 1-based `positions` with the bits of `c_ob`.
pub fn expand_bits(c_ob: &[u8], positions: &[usize], values: &[u8], out: &mut [u8]) {
    debug_assert_eq!(out.len(), c_ob.len() + positions.len());
    let mut src = 0;
    let mut ins = 0;
    for (j, slot) in out.iter_mut().enumerate() {
        if ins < positions.len() && positions[ins] == j + 1 {
            *slot = values[ins];
            ins += 1;
        } else {
            *slot = c_ob[src];
            src += 1;
        }
    }
}

/// Forms the full challenge from a partial challenge and a pattern's insert positions and values.
pub fn expand_challenge(c_ob: &PartialChallenge, positions: &[usize], values: &BitString) -> Result<Challenge> {
    check_len(positions.len(), values.len())?;
    let k = c_ob.len() + positions.len();
    check_positions(positions, k)?;
    let mut out = alloc::vec![0u8; k];
    expand_bits(c_ob.as_slice(), positions, values.as_slice(), &mut out);
    Ok(BitString::from_bits(&out).expect("inputs are bit strings"))
}

/// `r ⊕ S_R`.
pub fn obfuscate_response(r: &BitString, pv: &PatternVector) -> Result<BitString> {
    r.xor(&pv.response_mask)
}

/// The `p` pattern vectors provisioned into a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PatternSetRecord", into = "PatternSetRecord")]
pub struct PatternSet {
    k: usize,
    n_ins: usize,
    m: usize,
    patterns: Vec<PatternVector>,
}

#[derive(Serialize, Deserialize)]
struct PatternSetRecord {
    k: usize,
    m: usize,
    n_ins: usize,
    patterns: Vec<PatternVector>,
}

impl TryFrom<PatternSetRecord> for PatternSet {
    type Error = Error;

    fn try_from(r: PatternSetRecord) -> Result<Self> {
        let set = PatternSet::new(r.k, r.n_ins, r.patterns)?;
        check_len(r.m, set.m)?;
        Ok(set)
    }
}

impl From<PatternSet> for PatternSetRecord {
    fn from(s: PatternSet) -> Self {
        PatternSetRecord { k: s.k, m: s.m, n_ins: s.n_ins, patterns: s.patterns }
    }
}

impl PatternSet {
    /// Validates lengths, positions, pairwise distinct values and mask balance.
    pub fn new(k: usize, n_ins: usize, patterns: Vec<PatternVector>) -> Result<Self> {
        let first = patterns.first().ok_or_else(|| Error::invalid("a pattern set needs at least one pattern"))?;
        let m = first.m();
        if m >= k {
            return Err(Error::invalid("insertions must leave a non-empty partial challenge"));
        }
        if n_ins == 0 {
            return Err(Error::invalid("the PUF block needs at least one APUF"));
        }
        for pv in &patterns {
            check_len(m, pv.m())?;
            pv.validate(k, n_ins)?;
        }
        let values: Vec<BitString> = patterns.iter().map(|pv| pv.insert_values.clone()).collect();
        if !pairwise_distinct(&values) {
            return Err(Error::invalid("inserted value strings must be pairwise distinct"));
        }
        if !masks_balanced(&patterns, n_ins) {
            return Err(Error::invalid("every response-mask column must hold floor(p/2) or ceil(p/2) ones"));
        }
        Ok(Self { k, n_ins, m, patterns })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.patterns.len()
    }

    pub fn n_ins(&self) -> usize {
        self.n_ins
    }

    pub fn patterns(&self) -> &[PatternVector] {
        &self.patterns
    }

    pub fn pattern(&self, i: usize) -> &PatternVector {
        &self.patterns[i]
    }

    pub fn base_values(&self) -> Vec<BitString> {
        self.patterns.iter().map(|pv| pv.insert_values.clone()).collect()
    }

    /// Full challenge for pattern `i` under the given session values.
    pub fn expand(&self, c_ob: &PartialChallenge, i: usize, values: &[BitString]) -> Result<Challenge> {
        check_len(self.k - self.m, c_ob.len())?;
        expand_challenge(c_ob, &self.patterns[i].insert_positions, &values[i])
    }

    /// Checks that `values` fit this set: `p` pairwise distinct strings of `m` bits.
    pub fn check_values(&self, values: &[BitString]) -> Result<()> {
        check_len(self.p(), values.len())?;
        for v in values {
            check_len(self.m, v.len())?;
        }
        if pairwise_distinct(values) {
            Ok(())
        } else {
            Err(Error::invalid("session values must be pairwise distinct"))
        }
    }
}

pub fn pairwise_distinct(values: &[BitString]) -> bool {
    values.iter().enumerate().all(|(i, a)| values[..i].iter().all(|b| a != b))
}

fn masks_balanced(patterns: &[PatternVector], n_ins: usize) -> bool {
    let p = patterns.len();
    (0..n_ins).all(|b| {
        let ones = patterns.iter().filter(|pv| pv.response_mask.get(b) == 1).count();
        ones == p / 2 || ones == p.div_ceil(2)
    })
}

/// `p` value strings of `m` bits with the largest achievable minimum pairwise
/// Hamming distance, found as a lexicographic code.
pub fn value_code(p: usize, m: usize) -> Result<Vec<BitString>> {
    if m >= usize::BITS as usize || p > (1usize << m) {
        return Err(Error::TooManyPatterns { patterns: p, bits: m });
    }
    if m > 20 {
        return Err(Error::invalid("value strings longer than 20 bits are not supported"));
    }
    for d in (1..=m.max(1)).rev() {
        let mut code: Vec<u32> = Vec::with_capacity(p);
        for w in 0..(1u32 << m) {
            if code.len() == p {
                break;
            }
            if code.iter().all(|&c| (c ^ w).count_ones() as usize >= d) {
                code.push(w);
            }
        }
        if code.len() == p {
            return Ok(code.into_iter().map(|w| BitString::from_uint(w as u64, m)).collect());
        }
    }
    // m = 0 and p = 1: the single empty string.
    Ok(alloc::vec![BitString::new(); p])
}

/// `p` response masks of `n_ins` bits whose columns each hold
/// `floor(p/2)` or `ceil(p/2)` ones.
pub fn balanced_masks<R: Rng + ?Sized>(p: usize, n_ins: usize, rng: &mut R) -> Vec<BitString> {
    let mut masks = alloc::vec![BitString::zeros(n_ins); p];
    for b in 0..n_ins {
        let ones = if p % 2 == 1 && rng.random::<bool>() { p / 2 + 1 } else { p / 2 };
        for row in index::sample(rng, p, ones) {
            masks[row].set(b, true);
        }
    }
    masks
}

/// Device and pattern dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObPufParams {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub n_ins: usize,
    /// APUFs in the reconfiguration XOR block.
    pub xors: usize,
}

impl ObPufParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ZeroStages);
        }
        if self.m >= self.k {
            return Err(Error::invalid("m must be smaller than k"));
        }
        if self.p == 0 || self.n_ins == 0 {
            return Err(Error::invalid("p and n_ins must be positive"));
        }
        if self.m >= usize::BITS as usize || self.p > (1usize << self.m) {
            return Err(Error::TooManyPatterns { patterns: self.p, bits: self.m });
        }
        Ok(())
    }

    pub fn partial_len(&self) -> usize {
        self.k - self.m
    }
}

/// Challenge-side and response-side divergence of a pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct FhdReport {
    /// Per sampled partial challenge, mean pairwise FHD of the `p` full challenges.
    pub challenge_side: Vec<f64>,
    /// Per sampled partial challenge, mean pairwise FHD of the `p` raw PUF-block responses.
    pub response_side: Vec<f64>,
}

impl FhdReport {
    pub fn challenge_mean(&self) -> f64 {
        mean(&self.challenge_side)
    }

    pub fn response_mean(&self) -> f64 {
        mean(&self.response_side)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Samples `samples` partial challenges and measures how far apart the `p`
/// possible full challenges and raw (unmasked) responses of `puf_block` are.
pub fn pattern_fhd_report<R: Rng + ?Sized>(
    set: &PatternSet,
    puf_block: &[DelayVector],
    samples: usize,
    rng: &mut R,
) -> Result<FhdReport> {
    check_len(set.n_ins, puf_block.len())?;
    for w in puf_block {
        check_len(set.k, w.stages())?;
    }
    let p = set.p();
    let k = set.k;
    let values = set.base_values();
    let mut full = alloc::vec![alloc::vec![0u8; k]; p];
    let mut resp = alloc::vec![alloc::vec![0u8; set.n_ins]; p];
    let mut challenge_side = Vec::with_capacity(samples);
    let mut response_side = Vec::with_capacity(samples);
    let pairs = (p * (p - 1) / 2).max(1) as f64;
    for _ in 0..samples {
        let c_ob = BitString::random(k - set.m, rng);
        for i in 0..p {
            expand_bits(c_ob.as_slice(), &set.patterns[i].insert_positions, values[i].as_slice(), &mut full[i]);
            for (b, w) in puf_block.iter().enumerate() {
                resp[i][b] = response_bit(delay_of(w.as_slice(), &full[i]));
            }
        }
        let (mut ch, mut rs) = (0.0, 0.0);
        for i in 0..p {
            for j in 0..i {
                ch += frac_diff(&full[i], &full[j]);
                rs += frac_diff(&resp[i], &resp[j]);
            }
        }
        challenge_side.push(ch / pairs);
        response_side.push(rs / pairs);
    }
    Ok(FhdReport { challenge_side, response_side })
}

fn frac_diff(a: &[u8], b: &[u8]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Minimum challenge-side mean pairwise FHD a designed set must reach.
pub const DESIGN_TARGET_FHD: f64 = 0.45;
const DESIGN_SCORE_SAMPLES: usize = 500;

/// Randomized pattern-set search.
///
/// Candidates either place every pattern's insertions uniformly at random or
/// split them between a head and a tail region with a different head count
/// per pattern, which shifts the partial challenge by a different offset in
/// each full challenge. Each candidate is scored by the simulated raw
/// response FHD on a freshly sampled PUF block; the best one is returned if
/// its challenge-side FHD reaches [`DESIGN_TARGET_FHD`].
///
/// The last stage is never an insert position. A fixed last bit pins
/// `Φ^k` and gives each pattern its own response bias, which the balanced
/// masks would then no longer cancel.
pub fn design_pattern_set(params: &ObPufParams, seed: u64, trial_budget: usize) -> Result<PatternSet> {
    params.validate()?;
    if trial_budget == 0 {
        return Err(Error::invalid("trial budget must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let mut code = value_code(params.p, params.m)?;
    code.shuffle(&mut rng);
    let block: Vec<DelayVector> = (0..params.n_ins)
        .map(|_| ApufInstance::sample(params.k, 0.0, &mut rng).map(|a| a.omega().clone()))
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, f64, PatternSet)> = None;
    for trial in 0..trial_budget {
        let positions = if trial % 2 == 0 {
            head_tail_positions(params, &mut rng)
        } else {
            (0..params.p).map(|_| uniform_positions(params.k - 1, params.m, &mut rng)).collect()
        };
        let masks = balanced_masks(params.p, params.n_ins, &mut rng);
        let patterns = positions
            .into_iter()
            .zip(code.iter().cloned())
            .zip(masks)
            .map(|((pos, val), mask)| PatternVector::new(pos, val, mask))
            .collect();
        let set = PatternSet::new(params.k, params.n_ins, patterns)?;
        if params.p == 1 {
            return Ok(set);
        }
        let report = pattern_fhd_report(&set, &block, DESIGN_SCORE_SAMPLES, &mut rng)?;
        let (ch, rs) = (report.challenge_mean(), report.response_mean());
        let better = match &best {
            None => true,
            Some((best_ch, best_rs, _)) => match (ch >= DESIGN_TARGET_FHD, *best_ch >= DESIGN_TARGET_FHD) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => rs > *best_rs,
                (false, false) => ch > *best_ch,
            },
        };
        if better {
            best = Some((ch, rs, set));
        }
    }
    let (ch, _, set) = best.expect("budget is positive");
    if ch < DESIGN_TARGET_FHD {
        return Err(Error::DesignBelowTarget { best: ch, required: DESIGN_TARGET_FHD });
    }
    Ok(set)
}

fn uniform_positions<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut pos: Vec<usize> = index::sample(rng, k, m).into_iter().map(|i| i + 1).collect();
    pos.sort_unstable();
    pos
}

fn head_tail_positions<R: Rng + ?Sized>(params: &ObPufParams, rng: &mut R) -> Vec<Vec<usize>> {
    let (k, m, p) = (params.k, params.m, params.p);
    let region = (k / 4).max(m);
    if 2 * region >= k {
        return (0..p).map(|_| uniform_positions(k - 1, m, rng)).collect();
    }
    let mut heads: Vec<usize> = if p <= m + 1 {
        index::sample(rng, m + 1, p).into_vec()
    } else {
        (0..p).map(|_| rng.random_range(0..=m)).collect()
    };
    heads.shuffle(rng);
    let head_len = rng.random_range(m..=region);
    let tail_len = rng.random_range(m..=region);
    heads
        .into_iter()
        .map(|h| {
            let mut pos: Vec<usize> = index::sample(rng, head_len, h).into_iter().map(|i| i + 1).collect();
            pos.extend(index::sample(rng, tail_len, m - h).into_iter().map(|i| k - tail_len + i));
            pos.sort_unstable();
            pos
        })
        .collect()
}

/// The weak design that inserts every pattern's values at positions `1..=m`.
pub fn first_positions_pattern_set(params: &ObPufParams, seed: u64) -> Result<PatternSet> {
    params.validate()?;
    let mut rng = rng::seeded(seed);
    let code = value_code(params.p, params.m)?;
    let masks = balanced_masks(params.p, params.n_ins, &mut rng);
    let positions: Vec<usize> = (1..=params.m).collect();
    let patterns = code
        .into_iter()
        .zip(masks)
        .map(|(val, mask)| PatternVector::new(positions.clone(), val, mask))
        .collect();
    PatternSet::new(params.k, params.n_ins, patterns)
}

/// Uniform pattern index in `0..p`, drawn afresh for every OB-CRP.
pub fn choose_pattern_index<R: Rng + ?Sized>(p: usize, rng: &mut R) -> usize {
    if p <= 1 {
        0
    } else {
        rng.random_range(0..p)
    }
}

/// An observable (partial challenge, obfuscated response) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObCrp {
    pub partial_challenge: PartialChallenge,
    pub obfuscated_response: BitString,
}

/// Inserted values in effect for the current session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionValues {
    pub values: Vec<BitString>,
    /// Set when colliding strings were replaced with random bits.
    pub healed: bool,
}

/// Splits `p·m` bits into `p` strings of `m` bits.
pub fn partition_values(bits: &[u8], p: usize, m: usize) -> Result<Vec<BitString>> {
    check_len(p * m, bits.len())?;
    (0..p).map(|i| BitString::from_bits(&bits[i * m..(i + 1) * m])).collect()
}

/// Replaces any string equal to an earlier one with fresh random bits until
/// all strings are pairwise distinct. Returns whether anything was replaced.
pub fn heal_collisions<R: Rng + ?Sized>(values: &mut [BitString], rng: &mut R) -> bool {
    let mut healed = false;
    for i in 1..values.len() {
        while values[..i].contains(&values[i]) {
            values[i] = BitString::random(values[i].len(), rng);
            healed = true;
        }
    }
    healed
}

/// Noiseless XOR of the reconfiguration models on each challenge.
pub fn predict_value_bits(models: &[DelayVector], challenges: &[PartialChallenge]) -> Result<Vec<u8>> {
    if models.is_empty() {
        return Err(Error::EmptyGroup);
    }
    challenges
        .iter()
        .map(|c| models.iter().try_fold(0u8, |acc, w| Ok(acc ^ w.response(c)?)))
        .collect()
}

/// An OB-PUF: PUF block, reconfiguration XOR block, provisioned patterns and
/// the session registers.
#[derive(Debug, Clone)]
pub struct ObPufDevice {
    puf_block: Vec<ApufInstance>,
    reconfig_block: Vec<ApufInstance>,
    patterns: PatternSet,
    session: Option<Vec<BitString>>,
}

impl ObPufDevice {
    pub fn new(puf_block: Vec<ApufInstance>, reconfig_block: Vec<ApufInstance>, patterns: PatternSet) -> Result<Self> {
        check_len(patterns.n_ins(), puf_block.len())?;
        for a in &puf_block {
            check_len(patterns.k(), a.stages())?;
        }
        if reconfig_block.is_empty() {
            return Err(Error::EmptyGroup);
        }
        for a in &reconfig_block {
            check_len(patterns.k() - patterns.m(), a.stages())?;
        }
        Ok(Self { puf_block, reconfig_block, patterns, session: None })
    }

    /// Samples both blocks with a common noise scale.
    pub fn sample<R: Rng + ?Sized>(
        params: &ObPufParams,
        patterns: PatternSet,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        if patterns.k() != params.k || patterns.m() != params.m || patterns.p() != params.p || patterns.n_ins() != params.n_ins {
            return Err(Error::invalid("pattern set does not match the device parameters"));
        }
        if params.xors == 0 {
            return Err(Error::EmptyGroup);
        }
        let puf_block = (0..params.n_ins)
            .map(|_| ApufInstance::sample(params.k, noise_sigma, rng))
            .collect::<Result<_>>()?;
        let reconfig_block = (0..params.xors)
            .map(|_| ApufInstance::sample(params.partial_len(), noise_sigma, rng))
            .collect::<Result<_>>()?;
        Self::new(puf_block, reconfig_block, patterns)
    }

    pub fn params(&self) -> ObPufParams {
        ObPufParams {
            k: self.patterns.k(),
            m: self.patterns.m(),
            p: self.patterns.p(),
            n_ins: self.patterns.n_ins(),
            xors: self.reconfig_block.len(),
        }
    }

    pub fn puf_block(&self) -> &[ApufInstance] {
        &self.puf_block
    }

    pub fn reconfig_block(&self) -> &[ApufInstance] {
        &self.reconfig_block
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn has_session(&self) -> bool {
        self.session.is_some()
    }

    /// Inserted values of the open session. Exposed for evaluation oracles only.
    pub fn session_values(&self) -> Option<&[BitString]> {
        self.session.as_deref()
    }

    /// Opens a session whose inserted values come straight from the base patterns.
    pub fn open_fixed_session(&mut self) {
        self.session = Some(self.patterns.base_values());
    }

    /// Derives the session's inserted values from the reconfiguration block.
    pub fn reconfigure_session<R: Rng + ?Sized>(
        &mut self,
        reconfig_challenges: &[PartialChallenge],
        rng: &mut R,
        noisy: bool,
    ) -> Result<SessionValues> {
        let (p, m) = (self.patterns.p(), self.patterns.m());
        check_len(p * m, reconfig_challenges.len())?;
        let mut bits = Vec::with_capacity(p * m);
        for c in reconfig_challenges {
            bits.push(crate::apuf::eval_xor_apuf(&self.reconfig_block, c, noisy, rng)?);
        }
        let mut values = partition_values(&bits, p, m)?;
        let healed = heal_collisions(&mut values, rng);
        self.session = Some(values.clone());
        Ok(SessionValues { values, healed })
    }

    pub fn close_session(&mut self) {
        self.session = None;
    }

    /// One OB-CRP. The chosen pattern index is not part of the output.
    pub fn eval<R: Rng + ?Sized>(&self, c_ob: &PartialChallenge, rng: &mut R, noisy: bool) -> Result<ObCrp> {
        self.eval_traced(c_ob, rng, noisy).map(|(crp, _)| crp)
    }

    /// Like [`eval`](Self::eval) but also reveals the chosen pattern index.
    pub fn eval_traced<R: Rng + ?Sized>(
        &self,
        c_ob: &PartialChallenge,
        rng: &mut R,
        noisy: bool,
    ) -> Result<(ObCrp, usize)> {
        let i = choose_pattern_index(self.patterns.p(), rng);
        let crp = self.eval_with_pattern(c_ob, i, rng, noisy)?;
        Ok((crp, i))
    }

    /// Evaluates with a caller-chosen pattern index.
    pub fn eval_with_pattern<R: Rng + ?Sized>(
        &self,
        c_ob: &PartialChallenge,
        i: usize,
        rng: &mut R,
        noisy: bool,
    ) -> Result<ObCrp> {
        let values = self.session.as_ref().ok_or(Error::NoSession)?;
        if i >= self.patterns.p() {
            return Err(Error::invalid("pattern index out of range"));
        }
        let full = self.patterns.expand(c_ob, i, values)?;
        let mut raw = BitString::zeros(self.puf_block.len());
        for (b, a) in self.puf_block.iter().enumerate() {
            raw.set(b, eval_response(a, &full, noisy, rng)? == 1);
        }
        Ok(ObCrp { partial_challenge: c_ob.clone(), obfuscated_response: obfuscate_response(&raw, self.patterns.pattern(i))? })
    }

    /// Noiseless obfuscated responses for every pattern under the open session.
    pub fn candidate_responses(&self, c_ob: &PartialChallenge) -> Result<Vec<BitString>> {
        let values = self.session.as_ref().ok_or(Error::NoSession)?;
        let models: Vec<DelayVector> = self.puf_block.iter().map(|a| a.omega().clone()).collect();
        emulate_responses(&models, &self.patterns, values, c_ob)
    }
}

/// Module-level form of [`ObPufDevice::eval`].
pub fn ob_puf_eval<R: Rng + ?Sized>(dev: &ObPufDevice, c_ob: &PartialChallenge, rng: &mut R, noisy: bool) -> Result<ObCrp> {
    dev.eval(c_ob, rng, noisy)
}

/// Emulated `R'_OB_i` for every pattern `i` from PUF-block models.
pub fn emulate_responses(
    models: &[DelayVector],
    patterns: &PatternSet,
    values: &[BitString],
    c_ob: &PartialChallenge,
) -> Result<Vec<BitString>> {
    check_len(patterns.n_ins(), models.len())?;
    check_len(patterns.k() - patterns.m(), c_ob.len())?;
    check_len(patterns.p(), values.len())?;
    let mut full = alloc::vec![0u8; patterns.k()];
    let mut phi = alloc::vec![0.0; patterns.k() + 1];
    let mut out = Vec::with_capacity(patterns.p());
    for (pv, v) in patterns.patterns().iter().zip(values) {
        check_len(patterns.m(), v.len())?;
        expand_bits(c_ob.as_slice(), &pv.insert_positions, v.as_slice(), &mut full);
        fill_features(&full, &mut phi);
        let bits = models.iter().zip(pv.response_mask.iter()).map(|(w, mask)| {
            check_len(phi.len(), w.as_slice().len()).map(|_| response_bit(crate::apuf::dot(w.as_slice(), &phi)) ^ mask)
        });
        out.push(BitString::from_bits(&bits.collect::<Result<Vec<u8>>>()?).expect("bits"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn params(k: usize, m: usize, p: usize, n_ins: usize, xors: usize) -> ObPufParams {
        ObPufParams { k, m, p, n_ins, xors }
    }

    #[test]
    fn expansion_examples() {
        let c_ob = bs("11111");
        assert_eq!(expand_challenge(&c_ob, &[1, 2, 3], &bs("010")).unwrap(), bs("01011111"));
        assert_eq!(expand_challenge(&c_ob, &[], &BitString::new()).unwrap(), c_ob);
        assert_eq!(expand_challenge(&bs("00"), &[2, 4], &bs("11")).unwrap(), bs("0101"));
        assert!(expand_challenge(&bs("00"), &[3, 2], &bs("11")).is_err());
        assert!(expand_challenge(&bs("00"), &[2, 5], &bs("11")).is_err());
    }

    #[test]
    fn masking_examples() {
        let pv = PatternVector::new(alloc::vec![], BitString::new(), bs("0101"));
        assert_eq!(obfuscate_response(&bs("1100"), &pv).unwrap(), bs("1001"));
        let zero = PatternVector::new(alloc::vec![], BitString::new(), bs("0000"));
        assert_eq!(obfuscate_response(&bs("1100"), &zero).unwrap(), bs("1100"));
        let twice = obfuscate_response(&obfuscate_response(&bs("1100"), &pv).unwrap(), &pv).unwrap();
        assert_eq!(twice, bs("1100"));
    }

    #[test]
    fn value_codes() {
        let code = value_code(4, 3).unwrap();
        assert_eq!(code, alloc::vec![bs("000"), bs("011"), bs("101"), bs("110")]);
        assert_eq!(value_code(2, 1).unwrap(), alloc::vec![bs("0"), bs("1")]);
        assert_eq!(value_code(2, 3).unwrap(), alloc::vec![bs("000"), bs("111")]);
        assert!(matches!(value_code(5, 2), Err(Error::TooManyPatterns { .. })));
    }

    /// Best achievable minimum distance by exhaustive subset search.
    fn best_min_distance(p: usize, m: usize) -> usize {
        let words: Vec<u32> = (0..1u32 << m).collect();
        let mut best = 0;
        for subset in 0u64..(1u64 << words.len()) {
            if subset.count_ones() as usize != p {
                continue;
            }
            let chosen: Vec<u32> = words.iter().copied().filter(|w| subset >> w & 1 == 1).collect();
            let mut d = m;
            for i in 0..p {
                for j in 0..i {
                    d = d.min((chosen[i] ^ chosen[j]).count_ones() as usize);
                }
            }
            best = best.max(d);
        }
        best
    }

    #[test]
    fn value_code_is_optimal_for_small_sizes() {
        for m in 1..=4 {
            for p in 2..=(1usize << m).min(6) {
                let code = value_code(p, m).unwrap();
                let mut d = m;
                for i in 0..p {
                    for j in 0..i {
                        d = d.min(code[i].hamming_distance(&code[j]).unwrap());
                    }
                }
                assert_eq!(d, best_min_distance(p, m), "p={p} m={m}");
            }
        }
    }

    #[test]
    fn masks_are_balanced() {
        let mut rng = seeded(3);
        for p in 1..=7 {
            let masks = balanced_masks(p, 16, &mut rng);
            for b in 0..16 {
                let ones = masks.iter().filter(|m| m.get(b) == 1).count();
                assert!(ones == p / 2 || ones == p.div_ceil(2));
            }
        }
    }

    #[test]
    fn pattern_set_rejects_duplicates() {
        let pv = |v: &str, mask: &str| PatternVector::new(alloc::vec![1, 2], bs(v), bs(mask));
        assert!(PatternSet::new(8, 2, alloc::vec![pv("01", "01"), pv("10", "10")]).is_ok());
        assert!(PatternSet::new(8, 2, alloc::vec![pv("01", "01"), pv("01", "10")]).is_err());
        assert!(PatternSet::new(8, 2, alloc::vec![pv("01", "11"), pv("10", "11")]).is_err());
    }

    #[test]
    fn pattern_index_draws() {
        let mut rng = seeded(8);
        assert!((0..100).all(|_| choose_pattern_index(1, &mut rng) == 0));
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[choose_pattern_index(4, &mut rng)] += 1;
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((0.24..=0.26).contains(&f), "{f}");
        }
    }

    #[test]
    fn designed_set_diverges() {
        let pr = params(64, 3, 4, 4, 1);
        let set = design_pattern_set(&pr, 1, 40).unwrap();
        assert_eq!(set.p(), 4);
        let mut rng = seeded(2);
        let block: Vec<_> = (0..4).map(|_| ApufInstance::sample(64, 0.0, &mut rng).unwrap().omega().clone()).collect();
        let report = pattern_fhd_report(&set, &block, 10_000, &mut rng).unwrap();
        assert!((0.45..=0.55).contains(&report.challenge_mean()), "{}", report.challenge_mean());
        assert!((0.45..=0.55).contains(&report.response_mean()), "{}", report.response_mean());
    }

    #[test]
    fn first_positions_baseline() {
        let pr = params(64, 3, 4, 4, 1);
        let set = first_positions_pattern_set(&pr, 1).unwrap();
        let mut rng = seeded(2);
        let block: Vec<_> = (0..4).map(|_| ApufInstance::sample(64, 0.0, &mut rng).unwrap().omega().clone()).collect();
        let report = pattern_fhd_report(&set, &block, 1000, &mut rng).unwrap();
        assert!((report.challenge_mean() - 2.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn design_with_two_single_bit_patterns() {
        let set = design_pattern_set(&params(64, 1, 2, 4, 1), 5, 10).unwrap();
        let mut values = set.base_values();
        values.sort();
        assert_eq!(values, alloc::vec![bs("0"), bs("1")]);
        assert!(matches!(design_pattern_set(&params(64, 2, 5, 4, 1), 5, 10), Err(Error::TooManyPatterns { .. })));
        assert!(matches!(design_pattern_set(&params(64, 2, 4, 4, 1), 5, 10), Err(Error::DesignBelowTarget { .. })));
    }

    fn device(pr: ObPufParams, seed: u64, sigma: f64) -> ObPufDevice {
        // Designs need p <= m + 1 to separate every pair of offsets.
        let set = design_pattern_set(&pr, seed, 10).unwrap();
        ObPufDevice::sample(&pr, set, sigma, &mut seeded(seed + 1)).unwrap()
    }

    #[test]
    fn eval_requires_session() {
        let dev = device(params(32, 3, 4, 4, 1), 1, 0.0);
        let c = BitString::zeros(29);
        assert_eq!(dev.eval(&c, &mut seeded(0), false), Err(Error::NoSession));
    }

    #[test]
    fn eval_composes_expansion_and_mask() {
        let mut dev = device(params(32, 3, 4, 4, 1), 1, 0.0);
        dev.open_fixed_session();
        let mut rng = seeded(4);
        for _ in 0..50 {
            let c = BitString::random(29, &mut rng);
            let (crp, i) = dev.eval_traced(&c, &mut rng, false).unwrap();
            let full = dev.patterns().expand(&c, i, dev.session_values().unwrap()).unwrap();
            let raw = BitString::from_bools(dev.puf_block().iter().map(|a| a.omega().response(&full).unwrap() == 1));
            assert_eq!(crp.obfuscated_response, raw.xor(&dev.patterns().pattern(i).response_mask).unwrap());
            assert_eq!(crp.partial_challenge, c);
        }
    }

    #[test]
    fn at_most_p_distinct_outputs() {
        let mut dev = device(params(32, 3, 4, 4, 1), 2, 0.0);
        dev.open_fixed_session();
        let mut rng = seeded(5);
        let c = BitString::random(29, &mut rng);
        let candidates = dev.candidate_responses(&c).unwrap();
        let mut seen = alloc::collections::BTreeSet::new();
        for _ in 0..500 {
            let crp = dev.eval(&c, &mut rng, false).unwrap();
            assert!(candidates.contains(&crp.obfuscated_response));
            seen.insert(crp.obfuscated_response);
        }
        assert!(seen.len() <= 4);

        let mut single = device(params(32, 3, 1, 4, 1), 3, 0.0);
        single.open_fixed_session();
        let first = single.eval(&c, &mut rng, false).unwrap();
        assert!((0..20).all(|_| single.eval(&c, &mut rng, false).unwrap() == first));
    }

    #[test]
    fn session_values_follow_reconfig_block() {
        let pr = params(32, 3, 4, 4, 1);
        let mut dev = device(pr, 6, 0.0);
        let mut rng = seeded(7);
        let challenges: Vec<_> = (0..12).map(|_| BitString::random(29, &mut rng)).collect();
        let session = dev.reconfigure_session(&challenges, &mut rng, false).unwrap();
        let bits: Vec<u8> = challenges.iter().map(|c| dev.reconfig_block()[0].omega().response(c).unwrap()).collect();
        if !session.healed {
            assert_eq!(session.values, partition_values(&bits, 4, 3).unwrap());
        }
        assert!(pairwise_distinct(&session.values));
    }

    #[test]
    fn collisions_are_healed() {
        let pr = params(32, 3, 4, 4, 2);
        let mut dev = device(pr, 8, 0.0);
        let mut rng = seeded(9);
        let group: Vec<_> = (0..3).map(|_| BitString::random(29, &mut rng)).collect();
        let challenges: Vec<_> = (0..4).flat_map(|_| group.clone()).collect();
        let session = dev.reconfigure_session(&challenges, &mut rng, false).unwrap();
        assert!(session.healed);
        assert!(pairwise_distinct(&session.values));
        assert_eq!(dev.session_values().unwrap(), &session.values[..]);
    }

    #[test]
    fn reliable_reconfig_is_reproducible() {
        let pr = params(64, 3, 4, 4, 2);
        let cal = crate::apuf::calibrate_noise(64, 0.05, 20_000, 3).unwrap();
        let mut dev = device(pr, 10, cal.sigma);
        let mut rng = seeded(11);
        let models: Vec<_> = dev.reconfig_block().iter().map(|a| a.omega().clone()).collect();
        let challenges = loop {
            let challenges = crate::apuf::draw_reliable_challenges(&models, 12, 1_000_000, 5.0 * cal.sigma, &mut rng).unwrap();
            let predicted = partition_values(&predict_value_bits(&models, &challenges).unwrap(), 4, 3).unwrap();
            if pairwise_distinct(&predicted) {
                break challenges;
            }
        };
        let first = dev.reconfigure_session(&challenges, &mut rng, true).unwrap();
        assert!(!first.healed);
        for _ in 0..100 {
            assert_eq!(dev.reconfigure_session(&challenges, &mut rng, true).unwrap(), first);
        }
    }

    #[test]
    fn mask_balance_of_outputs() {
        let mut dev = device(params(64, 3, 4, 4, 1), 12, 0.0);
        dev.open_fixed_session();
        let mut rng = seeded(13);
        let mut ones = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let c = BitString::random(61, &mut rng);
            let crp = dev.eval(&c, &mut rng, false).unwrap();
            for (b, o) in ones.iter_mut().enumerate() {
                *o += crp.obfuscated_response.get(b) as usize;
            }
        }
        for o in ones {
            let f = o as f64 / n as f64;
            assert!((0.48..=0.52).contains(&f), "{f}");
        }
    }

    #[test]
    fn pattern_set_json_shape() {
        let set = first_positions_pattern_set(&params(8, 2, 2, 2, 1), 1).unwrap();
        assert_eq!(set.pattern(0).insert_positions, alloc::vec![1, 2]);
        assert!(set.patterns().iter().all(|pv| pv.insert_values.len() == 2));
    }

    proptest! {
        #[test]
        fn expansion_keeps_partial_order(
            bits in proptest::collection::vec(any::<bool>(), 1..40),
            m in 0usize..5,
            seed in any::<u64>(),
        ) {
            let c_ob = BitString::from_bools(bits);
            let k = c_ob.len() + m;
            let mut rng = seeded(seed);
            let pos = uniform_positions(k, m, &mut rng);
            let vals = BitString::random(m, &mut rng);
            let full = expand_challenge(&c_ob, &pos, &vals).unwrap();
            prop_assert_eq!(full.len(), k);
            let mut rest = Vec::new();
            let mut ins = 0;
            for j in 0..k {
                if ins < m && pos[ins] == j + 1 {
                    prop_assert_eq!(full.get(j), vals.get(ins));
                    ins += 1;
                } else {
                    rest.push(full.get(j));
                }
            }
            prop_assert_eq!(rest, c_ob.as_slice().to_vec());
        }

        #[test]
        fn healing_always_yields_distinct(seed in any::<u64>(), p in 1usize..8) {
            let mut rng = seeded(seed);
            let mut values = alloc::vec![BitString::zeros(3); p];
            heal_collisions(&mut values, &mut rng);
            prop_assert!(pairwise_distinct(&values));
        }
    }
}
