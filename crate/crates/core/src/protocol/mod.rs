//! Server-aided authentication of OB-PUFs.
//!
//! The server enrolls a device by storing delay models of both its blocks
//! together with the provisioned pattern set. A session then runs as:
//!
//! 1. The server takes `p·m` reliable challenges from its pool, predicts the
//!    session's inserted values and sends the challenges in `SESSION_INIT`.
//! 2. The prover reconfigures its registers from the same challenges.
//! 3. For `n` rounds the server sends a fresh partial challenge and checks
//!    whether the returned obfuscated response matches one of its `p`
//!    emulated candidates within `n_mismatch` bits.
//! 4. The device is accepted iff at most `n_th` rounds failed to match.

pub mod wire;

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::apuf::{draw_reliable_challenges, ApufInstance, DelayVector};
use crate::attack::{self, BaselineOptions};
use crate::bits::{BitString, PartialChallenge};
use crate::error::{check_len, Error, Result};
use crate::obfuscation::{emulate_responses, pairwise_distinct, partition_values, predict_value_bits, ObPufDevice, PatternSet};
use crate::rng::StreamRng;

pub use wire::{decode_message, decode_prefix, encode_message, Message};

/// Rounds per decision, accept threshold and per-round tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthParams {
    pub n: usize,
    pub n_th: usize,
    pub n_mismatch: usize,
}

impl AuthParams {
    pub fn validate(&self, n_ins: usize) -> Result<()> {
        if self.n == 0 || self.n_th > self.n {
            return Err(Error::invalid("need n >= 1 and n_th <= n"));
        }
        if self.n_mismatch > n_ins {
            return Err(Error::invalid("n_mismatch cannot exceed n_ins"));
        }
        if u32::try_from(self.n).is_err() {
            return Err(Error::invalid("too many rounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrollMode {
    /// Copy the true delay vectors.
    Ideal,
    /// Fit each APUF from direct noiseless CRPs.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollOptions {
    pub mode: EnrollMode,
    /// Reliability threshold on `|t_dif|` for pool challenges.
    pub theta: f64,
    /// Sessions' worth of reconfiguration challenges to preselect.
    pub pool_sessions: usize,
    /// Random candidates examined per requested pool challenge.
    pub candidates_per_challenge: usize,
    /// Refill the pool on demand instead of failing when it runs dry.
    pub auto_replenish: bool,
    /// Learned mode: training CRPs per APUF.
    pub training_crps: usize,
    /// Learned mode: held-out CRPs per APUF.
    pub holdout_crps: usize,
    /// Learned mode: minimum held-out accuracy per APUF.
    pub required_accuracy: f64,
    pub baseline: BaselineOptions,
}

impl EnrollOptions {
    pub fn ideal(theta: f64) -> Self {
        Self {
            mode: EnrollMode::Ideal,
            theta,
            pool_sessions: 50,
            candidates_per_challenge: 1000,
            auto_replenish: true,
            training_crps: 10_000,
            holdout_crps: 2000,
            required_accuracy: 0.99,
            baseline: BaselineOptions::default(),
        }
    }

    pub fn learned(theta: f64) -> Self {
        Self { mode: EnrollMode::Learned, ..Self::ideal(theta) }
    }
}

/// Everything the server keeps about one enrolled device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerModel {
    pub device_id: u64,
    pub puf_block_models: Vec<DelayVector>,
    pub reconfig_models: Vec<DelayVector>,
    pub patterns: PatternSet,
    pub theta: f64,
    pub candidates_per_challenge: usize,
    pub auto_replenish: bool,
    reliable_pool: VecDeque<PartialChallenge>,
    used_log: BTreeSet<PartialChallenge>,
}

impl ServerModel {
    pub fn new(
        device_id: u64,
        puf_block_models: Vec<DelayVector>,
        reconfig_models: Vec<DelayVector>,
        patterns: PatternSet,
        theta: f64,
    ) -> Result<Self> {
        check_len(patterns.n_ins(), puf_block_models.len())?;
        for w in &puf_block_models {
            check_len(patterns.k(), w.stages())?;
        }
        if reconfig_models.is_empty() {
            return Err(Error::EmptyGroup);
        }
        for w in &reconfig_models {
            check_len(patterns.k() - patterns.m(), w.stages())?;
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::invalid("reliability threshold must be finite and non-negative"));
        }
        Ok(Self {
            device_id,
            puf_block_models,
            reconfig_models,
            patterns,
            theta,
            candidates_per_challenge: 1000,
            auto_replenish: true,
            reliable_pool: VecDeque::new(),
            used_log: BTreeSet::new(),
        })
    }

    pub fn pool_len(&self) -> usize {
        self.reliable_pool.len()
    }

    pub fn reliable_pool(&self) -> impl Iterator<Item = &PartialChallenge> {
        self.reliable_pool.iter()
    }

    pub fn used_log(&self) -> &BTreeSet<PartialChallenge> {
        &self.used_log
    }

    fn partial_len(&self) -> usize {
        self.patterns.k() - self.patterns.m()
    }

    fn per_session(&self) -> usize {
        self.patterns.p() * self.patterns.m()
    }

    /// Adds `count` reliable challenges for the reconfiguration block.
    pub fn replenish_pool<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) -> Result<()> {
        let budget = count.saturating_mul(self.candidates_per_challenge.max(1));
        let fresh = draw_reliable_challenges(&self.reconfig_models, count, budget, self.theta, rng)?;
        self.reliable_pool.extend(fresh);
        Ok(())
    }

    /// Inserted values the device will derive from `challenges`.
    pub fn predict_session_values(&self, challenges: &[PartialChallenge]) -> Result<Vec<BitString>> {
        let bits = predict_value_bits(&self.reconfig_models, challenges)?;
        partition_values(&bits, self.patterns.p(), self.patterns.m())
    }

    /// Takes `p·m` pool challenges whose predicted value strings are pairwise
    /// distinct. Sets that would collide are discarded.
    pub fn issue_reconfig<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(Vec<PartialChallenge>, Vec<BitString>)> {
        let need = self.per_session();
        if need == 0 {
            return Ok((Vec::new(), alloc::vec![BitString::new(); self.patterns.p()]));
        }
        for _ in 0..1000 {
            if self.reliable_pool.len() < need {
                if !self.auto_replenish {
                    return Err(Error::PoolExhausted { available: self.reliable_pool.len(), needed: need });
                }
                self.replenish_pool(need * 8, rng)?;
            }
            let challenges: Vec<_> = self.reliable_pool.drain(..need).collect();
            let values = self.predict_session_values(&challenges)?;
            if pairwise_distinct(&values) {
                return Ok((challenges, values));
            }
        }
        Err(Error::invalid("reconfiguration challenges keep producing colliding values"))
    }

    /// Draws a partial challenge never issued before and records it.
    pub fn fresh_partial_challenge<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PartialChallenge> {
        const ATTEMPTS: usize = 10_000;
        for _ in 0..ATTEMPTS {
            let c = BitString::random(self.partial_len(), rng);
            if self.used_log.insert(c.clone()) {
                return Ok(c);
            }
        }
        Err(Error::ChallengeSpaceExhausted { attempts: ATTEMPTS })
    }

    /// Emulated obfuscated responses for every pattern.
    pub fn emulate(&self, c_ob: &PartialChallenge, values: &[BitString]) -> Result<Vec<BitString>> {
        emulate_responses(&self.puf_block_models, &self.patterns, values, c_ob)
    }
}

/// Index of the first pattern whose emulated response lies within
/// `n_mismatch` bits of `r_ob`.
pub fn recover(
    c_ob: &PartialChallenge,
    r_ob: &BitString,
    model: &ServerModel,
    values: &[BitString],
    n_mismatch: usize,
) -> Result<Option<usize>> {
    check_len(model.patterns.n_ins(), r_ob.len())?;
    let candidates = model.emulate(c_ob, values)?;
    for (i, cand) in candidates.iter().enumerate() {
        if cand.hamming_distance(r_ob)? <= n_mismatch {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Builds the server record for `dev`, preselecting `pool_sessions` sessions
/// of reliable reconfiguration challenges.
pub fn enroll<R: Rng + ?Sized>(
    dev: &ObPufDevice,
    device_id: u64,
    opts: &EnrollOptions,
    rng: &mut R,
) -> Result<ServerModel> {
    let (puf_block_models, reconfig_models) = match opts.mode {
        EnrollMode::Ideal => (
            dev.puf_block().iter().map(|a| a.omega().clone()).collect(),
            dev.reconfig_block().iter().map(|a| a.omega().clone()).collect(),
        ),
        EnrollMode::Learned => (
            learn_block(dev.puf_block(), opts, rng)?,
            learn_block(dev.reconfig_block(), opts, rng)?,
        ),
    };
    let mut model = ServerModel::new(device_id, puf_block_models, reconfig_models, dev.patterns().clone(), opts.theta)?;
    model.candidates_per_challenge = opts.candidates_per_challenge;
    model.auto_replenish = opts.auto_replenish;
    let pool = model.per_session() * opts.pool_sessions;
    if pool > 0 {
        model.replenish_pool(pool, rng)?;
    }
    Ok(model)
}

/// Fits every APUF of a block and rescales each model to the expected norm
/// `√(2k)` of the stage-delay law so that thresholds keep their meaning.
fn learn_block<R: Rng + ?Sized>(block: &[ApufInstance], opts: &EnrollOptions, rng: &mut R) -> Result<Vec<DelayVector>> {
    block
        .iter()
        .map(|a| {
            let k = a.stages();
            let total = opts.training_crps + opts.holdout_crps;
            let challenges: Vec<BitString> = (0..total).map(|_| BitString::random(k, rng)).collect();
            let responses: Vec<u8> = challenges.iter().map(|c| a.omega().response(c)).collect::<Result<_>>()?;
            let (train_c, test_c) = challenges.split_at(opts.training_crps);
            let (train_r, test_r) = responses.split_at(opts.training_crps);
            let mut baseline = opts.baseline.clone();
            baseline.seed = rng.random();
            let fit = attack::attack_apuf_baseline(train_c, train_r, &baseline)?;
            let accuracy = attack::model_accuracy(&fit.model, test_c, test_r)?;
            if accuracy < opts.required_accuracy {
                return Err(Error::EnrollmentFailed { accuracy, required: opts.required_accuracy });
            }
            let norm = fit.model.norm();
            Ok(if norm > 0.0 { fit.model.scaled(libm::sqrt(2.0 * k as f64) / norm) } else { fit.model })
        })
        .collect()
}

/// One challenge-response round as seen by the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub c_ob: PartialChallenge,
    pub r_ob: BitString,
    /// Matched pattern index, or `None` for a mismatching round.
    pub matched: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub accept: bool,
    pub mismatches: u32,
}

/// Server-side record of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: u64,
    pub device_id: u64,
    pub reconfig_challenges: Vec<PartialChallenge>,
    pub rounds: Vec<RoundRecord>,
    /// Present once the session completed.
    pub decision: Option<Decision>,
}

impl SessionTranscript {
    pub fn mismatches(&self) -> usize {
        self.rounds.iter().filter(|r| r.matched.is_none()).count()
    }
}

/// Re-runs the matching rule over recorded rounds with another tolerance and threshold.
pub fn redecide(
    model: &ServerModel,
    transcript: &SessionTranscript,
    n_mismatch: usize,
    n_th: usize,
) -> Result<Decision> {
    let values = model.predict_session_values(&transcript.reconfig_challenges)?;
    let mut mismatches = 0u32;
    for r in &transcript.rounds {
        if recover(&r.c_ob, &r.r_ob, model, &values, n_mismatch)?.is_none() {
            mismatches += 1;
        }
    }
    Ok(Decision { accept: mismatches as usize <= n_th, mismatches })
}

/// Bidirectional message channel from the server's point of view.
pub trait Link {
    type Error: fmt::Display;

    fn send(&mut self, msg: &Message) -> core::result::Result<(), Self::Error>;
    fn recv(&mut self) -> core::result::Result<Message, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionFailure {
    Transport(String),
    /// The peer sent something the protocol does not allow at this point.
    Protocol(String),
    Core(Error),
}

impl fmt::Display for SessionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionFailure::Transport(e) => write!(f, "transport failure: {e}"),
            SessionFailure::Protocol(e) => write!(f, "protocol violation: {e}"),
            SessionFailure::Core(e) => write!(f, "{e}"),
        }
    }
}

/// An aborted session with whatever had been recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionError {
    pub failure: SessionFailure,
    pub partial: SessionTranscript,
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "session {} aborted after {} rounds: {}", self.partial.session_id, self.partial.rounds.len(), self.failure)
    }
}

/// Runs one session over `link` and returns the server transcript.
pub fn run_session<L: Link, R: Rng + ?Sized>(
    model: &mut ServerModel,
    link: &mut L,
    params: &AuthParams,
    session_id: u64,
    rng: &mut R,
) -> core::result::Result<SessionTranscript, SessionError> {
    let mut transcript = SessionTranscript {
        session_id,
        device_id: model.device_id,
        reconfig_challenges: Vec::new(),
        rounds: Vec::with_capacity(params.n),
        decision: None,
    };
    macro_rules! fail {
        ($failure:expr) => {
            return Err(SessionError { failure: $failure, partial: transcript })
        };
    }
    macro_rules! core_try {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => fail!(SessionFailure::Core(e)),
            }
        };
    }
    macro_rules! io_try {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => fail!(SessionFailure::Transport(format!("{e}"))),
            }
        };
    }

    core_try!(params.validate(model.patterns.n_ins()));
    let (challenges, values) = core_try!(model.issue_reconfig(rng));
    transcript.reconfig_challenges = challenges.clone();
    let init = core_try!(Message::session_init(session_id, challenges, model.partial_len()));
    io_try!(link.send(&init));

    let mut mismatches = 0u32;
    for round in 0..params.n as u32 {
        let c_ob = core_try!(model.fresh_partial_challenge(rng));
        io_try!(link.send(&Message::Challenge { round, c_ob: c_ob.clone() }));
        let r_ob = match io_try!(link.recv()) {
            Message::Response { round: got, r_ob } if got == round => r_ob,
            other => fail!(SessionFailure::Protocol(format!("expected RESPONSE for round {round}, got {other:?}"))),
        };
        if r_ob.len() != model.patterns.n_ins() {
            fail!(SessionFailure::Protocol(format!("response has {} bits, expected {}", r_ob.len(), model.patterns.n_ins())));
        }
        let matched = core_try!(recover(&c_ob, &r_ob, model, &values, params.n_mismatch));
        mismatches += matched.is_none() as u32;
        transcript.rounds.push(RoundRecord { round, c_ob, r_ob, matched });
    }
    let decision = Decision { accept: mismatches as usize <= params.n_th, mismatches };
    io_try!(link.send(&Message::Decision {
        session_id,
        accept: decision.accept,
        mismatches,
        rounds: params.n as u32,
    }));
    transcript.decision = Some(decision);
    Ok(transcript)
}

/// Device side of the protocol.
pub struct Prover {
    device: ObPufDevice,
    rng: StreamRng,
    noisy: bool,
    session: Option<u64>,
    last_decision: Option<Decision>,
}

impl Prover {
    pub fn new(device: ObPufDevice, rng: StreamRng, noisy: bool) -> Self {
        Self { device, rng, noisy, session: None, last_decision: None }
    }

    pub fn device(&self) -> &ObPufDevice {
        &self.device
    }

    pub fn into_device(self) -> ObPufDevice {
        self.device
    }

    pub fn last_decision(&self) -> Option<Decision> {
        self.last_decision
    }

    /// Processes one server message and returns the reply, if any.
    pub fn handle(&mut self, msg: Message) -> Result<Option<Message>> {
        match msg {
            Message::SessionInit { session_id, reconfig_challenges, .. } => {
                self.device.reconfigure_session(&reconfig_challenges, &mut self.rng, self.noisy)?;
                self.session = Some(session_id);
                Ok(None)
            }
            Message::Challenge { round, c_ob } => {
                if self.session.is_none() {
                    return Err(Error::NoSession);
                }
                let crp = self.device.eval(&c_ob, &mut self.rng, self.noisy)?;
                Ok(Some(Message::Response { round, r_ob: crp.obfuscated_response }))
            }
            Message::Decision { session_id, accept, mismatches, .. } => {
                if self.session != Some(session_id) {
                    return Err(Error::invalid("decision for a session that is not open"));
                }
                self.device.close_session();
                self.session = None;
                self.last_decision = Some(Decision { accept, mismatches });
                Ok(None)
            }
            Message::Response { .. } => Err(Error::invalid("a prover does not accept responses")),
        }
    }
}

/// In-process link that drives a [`Prover`] directly. Every message passes
/// through the wire codec.
pub struct LocalLink {
    prover: Prover,
    inbox: VecDeque<Vec<u8>>,
}

impl LocalLink {
    pub fn new(prover: Prover) -> Self {
        Self { prover, inbox: VecDeque::new() }
    }

    pub fn prover(&self) -> &Prover {
        &self.prover
    }

    pub fn into_prover(self) -> Prover {
        self.prover
    }
}

impl Link for LocalLink {
    type Error = Error;

    fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = encode_message(msg)?;
        if let Some(reply) = self.prover.handle(decode_message(&frame)?)? {
            self.inbox.push_back(encode_message(&reply)?);
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = self.inbox.pop_front().ok_or(Error::invalid("no pending reply"))?;
        decode_message(&frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apuf::{calibrate_noise, default_threshold};
    use crate::obfuscation::{design_pattern_set, ObPufParams};
    use crate::rng::{seeded, substream};

    fn params() -> ObPufParams {
        ObPufParams { k: 64, m: 3, p: 4, n_ins: 8, xors: 2 }
    }

    fn device(seed: u64, sigma: f64) -> ObPufDevice {
        let pr = params();
        let set = design_pattern_set(&pr, 1, 20).unwrap();
        ObPufDevice::sample(&pr, set, sigma, &mut seeded(seed)).unwrap()
    }

    fn noise() -> f64 {
        calibrate_noise(64, 0.05, 50_000, 9).unwrap().sigma
    }

    #[test]
    fn ideal_enrollment_emulates_device() {
        let dev = device(1, 0.0);
        let model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(2)).unwrap();
        let mut rng = seeded(3);
        for _ in 0..10_000 {
            let c = BitString::random(64, &mut rng);
            for (a, w) in dev.puf_block().iter().zip(&model.puf_block_models) {
                assert_eq!(a.omega().response(&c).unwrap(), w.response(&c).unwrap());
            }
        }
        assert_eq!(model.pool_len(), 4 * 3 * 50);
    }

    #[test]
    fn recovery_finds_genuine_and_rejects_complements() {
        let mut dev = device(4, 0.0);
        let model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(5)).unwrap();
        dev.open_fixed_session();
        let values = dev.patterns().base_values();
        let mut rng = seeded(6);
        for _ in 0..200 {
            let c = BitString::random(61, &mut rng);
            let crp = dev.eval(&c, &mut rng, false).unwrap();
            let i = recover(&c, &crp.obfuscated_response, &model, &values, 0).unwrap().unwrap();
            assert_eq!(model.emulate(&c, &values).unwrap()[i], crp.obfuscated_response);
        }
    }

    #[test]
    fn complement_of_all_candidates_is_unmatched() {
        let pr = ObPufParams { k: 32, m: 2, p: 2, n_ins: 4, xors: 1 };
        let set = design_pattern_set(&pr, 3, 20).unwrap();
        let dev = ObPufDevice::sample(&pr, set, 0.0, &mut seeded(7)).unwrap();
        let model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(8)).unwrap();
        let values = dev.patterns().base_values();
        let mut rng = seeded(9);
        let mut checked = 0;
        for _ in 0..200 {
            let c = BitString::random(30, &mut rng);
            let cands = model.emulate(&c, &values).unwrap();
            let comp = cands[0].complement();
            if cands.contains(&comp) {
                continue;
            }
            assert_eq!(recover(&c, &comp, &model, &values, 0).unwrap(), None);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn random_responses_rarely_match() {
        let pr = ObPufParams { k: 64, m: 3, p: 4, n_ins: 16, xors: 1 };
        let set = design_pattern_set(&pr, 3, 10).unwrap();
        let dev = ObPufDevice::sample(&pr, set, 0.0, &mut seeded(10)).unwrap();
        let model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(11)).unwrap();
        let values = dev.patterns().base_values();
        let mut rng = seeded(12);
        let trials = 1_000_000;
        let c = BitString::random(61, &mut rng);
        let cands = model.emulate(&c, &values).unwrap();
        let mut hits = 0;
        for t in 0..trials {
            let r = BitString::from_uint(rng.random::<u64>() & 0xFFFF, 16);
            if t % 1000 == 0 {
                // Exercise the full path now and then.
                hits += recover(&c, &r, &model, &values, 0).unwrap().is_some() as usize;
            } else {
                hits += cands.contains(&r) as usize;
            }
        }
        let rate = hits as f64 / trials as f64;
        let expected = 1.0 - libm::pow(1.0 - 1.0 / 65536.0, 4.0);
        assert!((rate - expected).abs() < 4.0 * libm::sqrt(expected / trials as f64), "{rate} vs {expected}");
    }

    #[test]
    fn learned_enrollment_authenticates() {
        let pr = ObPufParams { k: 32, m: 2, p: 2, n_ins: 2, xors: 1 };
        let set = design_pattern_set(&pr, 5, 20).unwrap();
        let dev = ObPufDevice::sample(&pr, set, 0.0, &mut seeded(30)).unwrap();
        let mut opts = EnrollOptions::learned(0.0);
        opts.training_crps = 5000;
        opts.pool_sessions = 2;
        let mut model = enroll(&dev, 1, &opts, &mut seeded(31)).unwrap();
        for w in model.puf_block_models.iter().chain(&model.reconfig_models) {
            assert!((w.norm() - libm::sqrt(2.0 * w.stages() as f64)).abs() < 1e-9);
        }
        let mut rng = seeded(32);
        let mut agree = 0;
        for _ in 0..5000 {
            let c = BitString::random(32, &mut rng);
            agree += (dev.puf_block()[0].omega().response(&c).unwrap() == model.puf_block_models[0].response(&c).unwrap()) as usize;
        }
        assert!(agree as f64 / 5000.0 >= 0.98, "{agree}");
        let mut link = genuine_link(dev, 33, false);
        let params = AuthParams { n: 42, n_th: 30, n_mismatch: 0 };
        let t = run_session(&mut model, &mut link, &params, 1, &mut rng).unwrap();
        assert!(t.decision.unwrap().accept);
    }

    #[test]
    fn learned_enrollment_fails_below_required_accuracy() {
        let pr = ObPufParams { k: 32, m: 2, p: 2, n_ins: 2, xors: 1 };
        let set = design_pattern_set(&pr, 5, 20).unwrap();
        let dev = ObPufDevice::sample(&pr, set, 0.0, &mut seeded(34)).unwrap();
        let mut opts = EnrollOptions::learned(0.0);
        opts.training_crps = 20;
        opts.baseline.generations = 20;
        assert!(matches!(enroll(&dev, 1, &opts, &mut seeded(35)), Err(Error::EnrollmentFailed { .. })));
    }

    fn genuine_link(dev: ObPufDevice, seed: u64, noisy: bool) -> LocalLink {
        LocalLink::new(Prover::new(dev, substream(seed, 1), noisy))
    }

    #[test]
    fn genuine_noiseless_session_accepts() {
        let dev = device(13, 0.0);
        let mut model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(14)).unwrap();
        let mut link = genuine_link(dev, 15, false);
        let params = AuthParams { n: 42, n_th: 30, n_mismatch: 0 };
        let t = run_session(&mut model, &mut link, &params, 1, &mut seeded(16)).unwrap();
        assert_eq!(t.rounds.len(), 42);
        assert_eq!(t.decision, Some(Decision { accept: true, mismatches: 0 }));
        assert_eq!(link.prover().last_decision(), t.decision);
        assert!(!link.prover().device().has_session());
    }

    #[test]
    fn impostor_sessions_are_rejected() {
        let sigma = noise();
        let dev = device(17, sigma);
        let mut model = enroll(&dev, 1, &EnrollOptions::ideal(default_threshold(sigma)), &mut seeded(18)).unwrap();
        let params = AuthParams { n: 42, n_th: 29, n_mismatch: 0 };
        let mut rng = seeded(19);
        for s in 0..100 {
            let impostor = device(1000 + s, sigma);
            let mut link = genuine_link(impostor, s, true);
            let t = run_session(&mut model, &mut link, &params, s, &mut rng).unwrap();
            assert!(!t.decision.unwrap().accept);
        }
    }

    #[test]
    fn symmetric_session_values_under_noise() {
        let sigma = noise();
        let mut dev = device(20, sigma);
        let mut model = enroll(&dev, 1, &EnrollOptions::ideal(default_threshold(sigma)), &mut seeded(21)).unwrap();
        let mut rng = seeded(22);
        for _ in 0..100 {
            let (challenges, predicted) = model.issue_reconfig(&mut rng).unwrap();
            let got = dev.reconfigure_session(&challenges, &mut rng, true).unwrap();
            assert!(!got.healed);
            assert_eq!(got.values, predicted);
        }
    }

    #[test]
    fn challenges_are_never_reused() {
        let dev = device(23, 0.0);
        let mut model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(24)).unwrap();
        let mut link = genuine_link(dev, 25, false);
        let params = AuthParams { n: 50, n_th: 0, n_mismatch: 0 };
        let mut rng = seeded(26);
        let mut seen = BTreeSet::new();
        for s in 0..20 {
            let t = run_session(&mut model, &mut link, &params, s, &mut rng).unwrap();
            for r in t.rounds {
                assert!(seen.insert(r.c_ob));
            }
        }
        assert_eq!(model.used_log().len(), seen.len());
    }

    #[test]
    fn accept_is_monotone_in_tolerances() {
        let sigma = noise() * 3.0;
        let dev = device(27, sigma);
        let mut model = enroll(&dev, 1, &EnrollOptions::ideal(default_threshold(sigma)), &mut seeded(28)).unwrap();
        let mut link = genuine_link(dev, 29, true);
        let mut rng = seeded(30);
        for s in 0..10 {
            let t = run_session(&mut model, &mut link, &AuthParams { n: 40, n_th: 5, n_mismatch: 0 }, s, &mut rng).unwrap();
            assert_eq!(redecide(&model, &t, 0, 5).unwrap(), t.decision.unwrap());
            for nm in 0..=8 {
                for n_th in 0..=40 {
                    let d = redecide(&model, &t, nm, n_th).unwrap();
                    if d.accept {
                        assert!(redecide(&model, &t, (nm + 1).min(8), n_th).unwrap().accept);
                        assert!(redecide(&model, &t, nm, (n_th + 1).min(40)).unwrap().accept);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_exhaustion_is_reported() {
        let dev = device(31, 0.0);
        let mut opts = EnrollOptions::ideal(0.0);
        opts.pool_sessions = 1;
        opts.auto_replenish = false;
        let mut model = enroll(&dev, 1, &opts, &mut seeded(32)).unwrap();
        let mut rng = seeded(33);
        let mut issued = 0;
        loop {
            match model.issue_reconfig(&mut rng) {
                Ok(_) => issued += 1,
                Err(Error::PoolExhausted { needed: 12, .. }) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(issued <= 1);
    }

    struct BrokenLink {
        inner: LocalLink,
        sends_left: usize,
    }

    impl Link for BrokenLink {
        type Error = &'static str;

        fn send(&mut self, msg: &Message) -> core::result::Result<(), &'static str> {
            if self.sends_left == 0 {
                return Err("connection reset");
            }
            self.sends_left -= 1;
            self.inner.send(msg).map_err(|_| "inner failure")
        }

        fn recv(&mut self) -> core::result::Result<Message, &'static str> {
            self.inner.recv().map_err(|_| "inner failure")
        }
    }

    #[test]
    fn transport_failure_keeps_partial_transcript() {
        let dev = device(34, 0.0);
        let mut model = enroll(&dev, 1, &EnrollOptions::ideal(0.0), &mut seeded(35)).unwrap();
        let mut link = BrokenLink { inner: genuine_link(dev, 36, false), sends_left: 6 };
        let err = run_session(&mut model, &mut link, &AuthParams { n: 10, n_th: 0, n_mismatch: 0 }, 9, &mut seeded(37))
            .unwrap_err();
        assert!(matches!(err.failure, SessionFailure::Transport(_)));
        assert_eq!(err.partial.rounds.len(), 5);
        assert_eq!(err.partial.decision, None);
        assert_eq!(err.partial.reconfig_challenges.len(), 12);
    }

    #[test]
    fn sessions_are_deterministic() {
        let run = || {
            let dev = device(38, 0.3);
            let mut model = enroll(&dev, 1, &EnrollOptions::ideal(1.5), &mut seeded(39)).unwrap();
            let mut link = genuine_link(dev, 40, true);
            run_session(&mut model, &mut link, &AuthParams { n: 20, n_th: 5, n_mismatch: 0 }, 1, &mut seeded(41)).unwrap()
        };
        assert_eq!(run(), run());
    }
}
