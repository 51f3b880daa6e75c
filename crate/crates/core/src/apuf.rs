//! Arbiter PUFs under the linear additive delay model.
//!
//! A `k`-stage APUF is reduced to a delay vector `ω` of `k + 1` weights. Its
//! delay difference for a challenge `C` is `t_dif = ω · Φ(C)` where `Φ` is the
//! parity vector (challenge feature) and the response bit is `1` iff
//! `t_dif > 0`. A tie at exactly zero answers `0`.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, Challenge};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, standard_normal};

/// Per-stage raw delays, indexed by [`TOP_UNCROSSED`] etc.
pub type StageDelays = [f64; 4];

pub const TOP_UNCROSSED: usize = 0;
pub const BOTTOM_UNCROSSED: usize = 1;
pub const TOP_CROSSED: usize = 2;
pub const BOTTOM_CROSSED: usize = 3;

/// The `k + 1` signed units `Φ^j(C) = Π_{i=j}^{k} (1 − 2c_i)`, followed by `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityVector(Vec<f64>);

impl ParityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Computes the challenge feature of `c`.
pub fn challenge_feature(c: &BitString) -> ParityVector {
    let mut out = alloc::vec![0.0; c.len() + 1];
    fill_features(c.as_slice(), &mut out);
    ParityVector(out)
}

/// Writes `Φ(bits)` into `out`, which must hold `bits.len() + 1` entries.
#[inline]
pub fn fill_features(bits: &[u8], out: &mut [f64]) {
    let k = bits.len();
    debug_assert_eq!(out.len(), k + 1);
    let mut acc = 1.0;
    out[k] = 1.0;
    for j in (0..k).rev() {
        if bits[j] == 1 {
            acc = -acc;
        }
        out[j] = acc;
    }
}

/// The weight vector `ω` of the additive delay model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DelayVector(Vec<f64>);

impl DelayVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::ZeroStages);
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("delay weights must be finite"));
        }
        Ok(Self(weights))
    }

    /// Stage count `k` (one less than the number of weights).
    pub fn stages(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, phi: &ParityVector) -> Result<f64> {
        check_len(self.0.len(), phi.len())?;
        Ok(dot(&self.0, &phi.0))
    }

    /// Noiseless delay difference for `c`.
    pub fn delay(&self, c: &Challenge) -> Result<f64> {
        check_len(self.stages(), c.len())?;
        Ok(delay_of(&self.0, c.as_slice()))
    }

    pub fn response(&self, c: &Challenge) -> Result<u8> {
        Ok(response_bit(self.delay(c)?))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|w| w * factor).collect())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|w| w * w).sum())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ω · Φ(bits)` without allocating. `weights.len()` must be `bits.len() + 1`.
#[inline]
pub fn delay_of(weights: &[f64], bits: &[u8]) -> f64 {
    let k = bits.len();
    let mut acc = 1.0;
    let mut sum = weights[k];
    for j in (0..k).rev() {
        if bits[j] == 1 {
            acc = -acc;
        }
        sum += weights[j] * acc;
    }
    sum
}

#[inline]
pub fn response_bit(t_dif: f64) -> u8 {
    (t_dif > 0.0) as u8
}

/// Reduces raw per-stage delays to `ω`.
///
/// With `σ_i^0` the top-minus-bottom delay of stage `i` when uncrossed and
/// `σ_i^1` when crossed: `ω^1 = (σ_1^0 − σ_1^1)/2`,
/// `ω^i = (σ_{i−1}^0 + σ_{i−1}^1 + σ_i^0 − σ_i^1)/2` and
/// `ω^{k+1} = (σ_k^0 + σ_k^1)/2`.
pub fn reduce_stage_delays(stages: &[StageDelays]) -> Result<DelayVector> {
    let k = stages.len();
    if k == 0 {
        return Err(Error::ZeroStages);
    }
    let uncrossed = |i: usize| stages[i][TOP_UNCROSSED] - stages[i][BOTTOM_UNCROSSED];
    let crossed = |i: usize| stages[i][TOP_CROSSED] - stages[i][BOTTOM_CROSSED];
    let mut w = Vec::with_capacity(k + 1);
    w.push((uncrossed(0) - crossed(0)) / 2.0);
    for i in 1..k {
        w.push((uncrossed(i - 1) + crossed(i - 1) + uncrossed(i) - crossed(i)) / 2.0);
    }
    w.push((uncrossed(k - 1) + crossed(k - 1)) / 2.0);
    DelayVector::new(w)
}

/// A simulated arbiter PUF. Immutable after creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ApufRecord", into = "ApufRecord")]
pub struct ApufInstance {
    stage_delays: Vec<StageDelays>,
    omega: DelayVector,
    noise_sigma: f64,
}

/// Flat serialized form: `k`, per-stage delays in stage order, noise scale.
#[derive(Serialize, Deserialize)]
struct ApufRecord {
    k: usize,
    stage_delays: Vec<StageDelays>,
    noise_sigma: f64,
}

impl TryFrom<ApufRecord> for ApufInstance {
    type Error = Error;

    fn try_from(r: ApufRecord) -> Result<Self> {
        check_len(r.k, r.stage_delays.len())?;
        ApufInstance::from_stage_delays(r.stage_delays, r.noise_sigma)
    }
}

impl From<ApufInstance> for ApufRecord {
    fn from(a: ApufInstance) -> Self {
        ApufRecord { k: a.stage_delays.len(), stage_delays: a.stage_delays, noise_sigma: a.noise_sigma }
    }
}

impl ApufInstance {
    pub fn from_stage_delays(stage_delays: Vec<StageDelays>, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        if stage_delays.iter().flatten().any(|d| !d.is_finite()) {
            return Err(Error::invalid("stage delays must be finite"));
        }
        let omega = reduce_stage_delays(&stage_delays)?;
        Ok(Self { stage_delays, omega, noise_sigma })
    }

    /// Draws every stage-delay component i.i.d. standard normal.
    pub fn sample<R: Rng + ?Sized>(k: usize, noise_sigma: f64, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroStages);
        }
        let stages = (0..k)
            .map(|_| core::array::from_fn(|_| standard_normal(rng)))
            .collect();
        Self::from_stage_delays(stages, noise_sigma)
    }

    pub fn stages(&self) -> usize {
        self.stage_delays.len()
    }

    pub fn stage_delays(&self) -> &[StageDelays] {
        &self.stage_delays
    }

    pub fn omega(&self) -> &DelayVector {
        &self.omega
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self> {
        Self::from_stage_delays(self.stage_delays.clone(), noise_sigma)
    }

    /// Draws a noise sample for one evaluation (zero when noiseless).
    pub fn noise_draw<R: Rng + ?Sized>(&self, noisy: bool, rng: &mut R) -> f64 {
        if noisy && self.noise_sigma > 0.0 {
            self.noise_sigma * standard_normal(rng)
        } else {
            0.0
        }
    }
}

/// Samples an instance from a seed; identical `(k, seed)` give identical instances.
pub fn sample_apuf(k: usize, seed: u64, noise_sigma: f64) -> Result<ApufInstance> {
    ApufInstance::sample(k, noise_sigma, &mut rng::seeded(seed))
}

/// `ω · Φ(C) + noise_draw`.
pub fn eval_delay(a: &ApufInstance, c: &Challenge, noise_draw: f64) -> Result<f64> {
    Ok(a.omega.delay(c)? + noise_draw)
}

pub fn eval_response<R: Rng + ?Sized>(
    a: &ApufInstance,
    c: &Challenge,
    noisy: bool,
    rng: &mut R,
) -> Result<u8> {
    let noise = a.noise_draw(noisy, rng);
    Ok(response_bit(eval_delay(a, c, noise)?))
}

/// XOR of the member responses, every member evaluated on the same challenge.
pub fn eval_xor_apuf<R: Rng + ?Sized>(
    group: &[ApufInstance],
    c: &Challenge,
    noisy: bool,
    rng: &mut R,
) -> Result<u8> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    group.iter().try_fold(0u8, |acc, a| Ok(acc ^ eval_response(a, c, noisy, rng)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    pub sigma: f64,
    /// Disagreement rate between two noisy evaluations measured at `sigma`.
    pub flip_rate: f64,
}

const CALIBRATION_INSTANCES: usize = 256;
const CALIBRATION_ITERATIONS: usize = 80;

/// Finds the additive noise scale whose two-evaluation disagreement rate
/// matches `target_flip_rate` over `trials` random (instance, challenge) pairs.
///
/// The same instances, challenges and standard-normal draws are reused for
/// every candidate `σ`, so the bisection runs on a fixed sample.
pub fn calibrate_noise(
    k: usize,
    target_flip_rate: f64,
    trials: usize,
    seed: u64,
) -> Result<NoiseCalibration> {
    if k == 0 {
        return Err(Error::ZeroStages);
    }
    if target_flip_rate == 0.0 {
        return Ok(NoiseCalibration { sigma: 0.0, flip_rate: 0.0 });
    }
    if !(target_flip_rate > 0.0 && target_flip_rate < 0.5) {
        return Err(Error::invalid("target flip rate must lie in (0, 0.5)"));
    }
    if trials == 0 {
        return Err(Error::invalid("calibration needs at least one trial"));
    }
    let mut rng = rng::seeded(seed);
    let pool: Vec<ApufInstance> = (0..CALIBRATION_INSTANCES.min(trials))
        .map(|_| ApufInstance::sample(k, 0.0, &mut rng))
        .collect::<Result<_>>()?;
    let samples: Vec<(f64, f64, f64)> = (0..trials)
        .map(|t| {
            let c = BitString::random(k, &mut rng);
            let delay = delay_of(pool[t % pool.len()].omega.as_slice(), c.as_slice());
            (delay, standard_normal(&mut rng), standard_normal(&mut rng))
        })
        .collect();
    let rate = |sigma: f64| {
        let flips = samples
            .iter()
            .filter(|(t, z1, z2)| response_bit(t + sigma * z1) != response_bit(t + sigma * z2))
            .count();
        flips as f64 / samples.len() as f64
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut grow = 0;
    while rate(hi) < target_flip_rate {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 64 {
            return Err(Error::CalibrationFailed { sigma: hi, flip_rate: rate(hi) });
        }
    }
    let mut best = NoiseCalibration { sigma: hi, flip_rate: rate(hi) };
    for _ in 0..CALIBRATION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if libm::fabs(r - target_flip_rate) < libm::fabs(best.flip_rate - target_flip_rate) {
            best = NoiseCalibration { sigma: mid, flip_rate: r };
        }
        if r < target_flip_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if libm::fabs(best.flip_rate - target_flip_rate) > 0.1 * target_flip_rate {
        return Err(Error::CalibrationFailed { sigma: best.sigma, flip_rate: best.flip_rate });
    }
    Ok(best)
}

fn check_threshold(theta: f64) -> Result<()> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("reliability threshold must be finite and non-negative"))
    }
}

/// True when every member's noiseless `|t_dif|` clears `theta`.
pub fn is_reliable(group: &[DelayVector], c: &Challenge, theta: f64) -> Result<bool> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    for w in group {
        if libm::fabs(w.delay(c)?) < theta {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Keeps the candidates on which every member of `group` is reliable at `theta`.
pub fn select_reliable_challenges(
    group: &[DelayVector],
    candidates: &[Challenge],
    theta: f64,
) -> Result<Vec<Challenge>> {
    check_threshold(theta)?;
    let mut out = Vec::new();
    for c in candidates {
        if is_reliable(group, c, theta)? {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Draws up to `candidate_count` random challenges and keeps the first
/// `requested` reliable ones.
pub fn draw_reliable_challenges<R: Rng + ?Sized>(
    group: &[DelayVector],
    requested: usize,
    candidate_count: usize,
    theta: f64,
    rng: &mut R,
) -> Result<Vec<Challenge>> {
    check_threshold(theta)?;
    let k = group.first().ok_or(Error::EmptyGroup)?.stages();
    let mut out = Vec::with_capacity(requested);
    for _ in 0..candidate_count {
        if out.len() == requested {
            break;
        }
        let c = BitString::random(k, rng);
        if is_reliable(group, &c, theta)? {
            out.push(c);
        }
    }
    if out.len() < requested {
        return Err(Error::InsufficientReliable { found: out.len(), requested });
    }
    Ok(out)
}

/// Default reliability threshold for a noise scale: five standard deviations.
pub fn default_threshold(noise_sigma: f64) -> f64 {
    5.0 * noise_sigma
}
