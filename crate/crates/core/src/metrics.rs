//! Distance statistics, binomial estimators and the FAR/FRR/EER solver.
//!
//! A round of authentication is a *mismatch* when the server cannot match the
//! received obfuscated response. `p_inter` is the per-round mismatch
//! probability for an impostor and `p_intra` the one for the genuine device.
//! Over `n` rounds a decision accepts iff at most `n_th` rounds mismatch, so
//!
//! * `FAR(n_th) = P[Bin(n, p_inter) ≤ n_th]`
//! * `FRR(n_th) = P[Bin(n, p_intra) > n_th]`
//!
//! Tails are accumulated in the log domain; they reach far below `1e-15`.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{check_len, Error, Result};
use crate::obfuscation::{choose_pattern_index, ObPufDevice};

pub fn hd(x: &BitString, y: &BitString) -> Result<usize> {
    x.hamming_distance(y)
}

pub fn fhd(x: &BitString, y: &BitString) -> Result<f64> {
    if x.is_empty() {
        check_len(0, y.len())?;
        return Err(Error::invalid("fractional distance of empty strings is undefined"));
    }
    Ok(hd(x, y)? as f64 / x.len() as f64)
}

/// Mean FHD over all unordered pairs.
pub fn mean_pairwise_fhd(xs: &[BitString]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::invalid("mean pairwise distance needs at least two strings"));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..xs.len() {
        for j in 0..i {
            sum += fhd(&xs[i], &xs[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Worst-case per-APUF flip rate assumed by the estimators.
pub const DEFAULT_P_INTRA_PUF: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorInputs {
    pub n_ins: usize,
    pub p: usize,
    pub n_mismatch: usize,
    pub p_intra_puf: f64,
}

impl EstimatorInputs {
    pub fn new(n_ins: usize, p: usize, n_mismatch: usize) -> Self {
        Self { n_ins, p, n_mismatch, p_intra_puf: DEFAULT_P_INTRA_PUF }
    }

    pub fn with_p_intra_puf(self, q: f64) -> Self {
        Self { p_intra_puf: q, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ins == 0 || self.p == 0 {
            return Err(Error::invalid("n_ins and p must be positive"));
        }
        if self.n_mismatch > self.n_ins {
            return Err(Error::invalid("n_mismatch cannot exceed n_ins"));
        }
        if !(0.0..=1.0).contains(&self.p_intra_puf) {
            return Err(Error::invalid("p_intra_puf must be a probability"));
        }
        Ok(())
    }
}

/// Which inter-distance estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterForm {
    /// `(1 − (n_mismatch + 1) / 2^n_ins)^{p²}`.
    Printed,
    /// `(1 − Σ_{i ≤ n_mismatch} C(n_ins, i) / 2^n_ins)^{p²}`.
    Corrected,
}

/// `x^e` by repeated squaring.
fn powi(mut x: f64, mut e: usize) -> f64 {
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= x;
        }
        x *= x;
        e >>= 1;
    }
    acc
}

/// Printed inter-distance estimator `(1 − (n_mismatch + 1)/2^{n_ins})^{p²}`.
pub fn p_inter_analytic(inp: &EstimatorInputs) -> f64 {
    let tolerated = (inp.n_mismatch + 1) as f64 * libm::exp2(-(inp.n_ins as f64));
    powi(1.0 - tolerated.min(1.0), inp.p * inp.p)
}

/// Inter-distance estimator with binomial coefficients in the tolerated mass.
pub fn p_inter_corrected(inp: &EstimatorInputs) -> f64 {
    let tolerated: f64 = (0..=inp.n_mismatch.min(inp.n_ins))
        .map(|i| libm::exp(ln_choose(inp.n_ins, i) - inp.n_ins as f64 * core::f64::consts::LN_2))
        .sum();
    powi((1.0 - tolerated).max(0.0), inp.p * inp.p)
}

pub fn p_inter(inp: &EstimatorInputs, form: InterForm) -> f64 {
    match form {
        InterForm::Printed => p_inter_analytic(inp),
        InterForm::Corrected => p_inter_corrected(inp),
    }
}

/// Probability that at most `n_mismatch` of `n_ins` bits flip.
pub fn p_min(inp: &EstimatorInputs) -> f64 {
    let q = inp.p_intra_puf;
    (0..=inp.n_mismatch.min(inp.n_ins))
        .map(|i| libm::round(libm::exp(ln_choose(inp.n_ins, i))) * powi(1.0 - q, inp.n_ins - i) * powi(q, i))
        .sum::<f64>()
        .min(1.0)
}

/// `1 − p_min`: probability that a genuine response exceeds the tolerance.
pub fn p_intra_analytic(inp: &EstimatorInputs) -> f64 {
    if inp.n_mismatch >= inp.n_ins {
        return 0.0;
    }
    (1.0 - p_min(inp)).max(0.0)
}

pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `ln P[Bin(n, p) = i]` for `i = 0..=n`.
fn ln_pmf(n: usize, p: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let a = if i == 0 { 0.0 } else { i as f64 * libm::log(p) };
            let b = if i == n { 0.0 } else { (n - i) as f64 * libm::log1p(-p) };
            ln_choose(n, i) + a + b
        })
        .collect()
}

fn ln_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + libm::log1p(libm::exp(a.min(b) - hi))
}

/// `ln P[Bin(n, p) ≤ j]` for `j = 0..=n`.
fn ln_lower_tails(n: usize, p: f64) -> Vec<f64> {
    let pmf = ln_pmf(n, p);
    let mut acc = f64::NEG_INFINITY;
    let mut out: Vec<f64> = pmf
        .into_iter()
        .map(|x| {
            acc = ln_add(acc, x);
            acc.min(0.0)
        })
        .collect();
    out[n] = 0.0;
    out
}

/// `ln P[Bin(n, p) > j]` for `j = 0..=n`.
fn ln_upper_tails(n: usize, p: f64) -> Vec<f64> {
    let pmf = ln_pmf(n, p);
    let mut out = alloc::vec![f64::NEG_INFINITY; n + 1];
    let mut acc = f64::NEG_INFINITY;
    for j in (0..n).rev() {
        acc = ln_add(acc, pmf[j + 1]);
        out[j] = acc.min(0.0);
    }
    out
}

fn check_rounds(n: usize, n_th: usize, p: f64) -> Result<()> {
    if n_th > n {
        return Err(Error::invalid("n_th cannot exceed n"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("probability out of range"));
    }
    Ok(())
}

/// Natural log of the false-accept rate.
pub fn ln_far(n: usize, n_th: usize, p_inter: f64) -> Result<f64> {
    check_rounds(n, n_th, p_inter)?;
    Ok(ln_lower_tails(n, p_inter)[n_th])
}

/// Natural log of the false-reject rate.
pub fn ln_frr(n: usize, n_th: usize, p_intra: f64) -> Result<f64> {
    check_rounds(n, n_th, p_intra)?;
    Ok(ln_upper_tails(n, p_intra)[n_th])
}

pub fn far(n: usize, n_th: usize, p_inter: f64) -> Result<f64> {
    ln_far(n, n_th, p_inter).map(libm::exp)
}

pub fn frr(n: usize, n_th: usize, p_intra: f64) -> Result<f64> {
    ln_frr(n, n_th, p_intra).map(libm::exp)
}

pub fn log10_far(n: usize, n_th: usize, p_inter: f64) -> Result<f64> {
    ln_far(n, n_th, p_inter).map(|x| x / core::f64::consts::LN_10)
}

pub fn log10_frr(n: usize, n_th: usize, p_intra: f64) -> Result<f64> {
    ln_frr(n, n_th, p_intra).map(|x| x / core::f64::consts::LN_10)
}

/// The balanced operating point for `n` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub n_th: usize,
    pub ln_far: f64,
    pub ln_frr: f64,
}

impl EerPoint {
    pub fn ln_eer(&self) -> f64 {
        self.ln_far.max(self.ln_frr)
    }

    pub fn eer(&self) -> f64 {
        libm::exp(self.ln_eer())
    }

    pub fn log10_far(&self) -> f64 {
        self.ln_far / core::f64::consts::LN_10
    }

    pub fn log10_frr(&self) -> f64 {
        self.ln_frr / core::f64::consts::LN_10
    }
}

fn check_estimators(p_inter: f64, p_intra: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_inter) || !(0.0..=1.0).contains(&p_intra) || p_intra >= p_inter {
        return Err(Error::DegenerateEstimators { p_inter, p_intra });
    }
    Ok(())
}

/// `argmin_{n_th} max(FAR, FRR)`, ties going to the smaller `n_th`.
pub fn eer_search(n: usize, p_inter: f64, p_intra: f64) -> Result<EerPoint> {
    check_estimators(p_inter, p_intra)?;
    let fa = ln_lower_tails(n, p_inter);
    let fr = ln_upper_tails(n, p_intra);
    let mut best = EerPoint { n_th: 0, ln_far: fa[0], ln_frr: fr[0] };
    for n_th in 1..=n {
        let cand = EerPoint { n_th, ln_far: fa[n_th], ln_frr: fr[n_th] };
        if cand.ln_eer() < best.ln_eer() {
            best = cand;
        }
    }
    Ok(best)
}

/// A capability record: the fewest rounds meeting an EER target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityRow {
    pub config: EstimatorInputs,
    pub form: InterForm,
    pub target_eer: f64,
    pub p_inter: f64,
    pub p_intra: f64,
    pub n: usize,
    pub n_eer: usize,
    pub log10_far: f64,
    pub log10_frr: f64,
}

/// Upper bound on rounds searched by [`min_crps_for_eer`].
pub const MAX_ROUNDS: usize = 1 << 22;

/// Smallest `n` whose balanced error rate is at most `target`.
pub fn min_rounds_for_eer(p_inter: f64, p_intra: f64, target: f64, max_rounds: usize) -> Result<(usize, EerPoint)> {
    check_estimators(p_inter, p_intra)?;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid("EER target must lie in (0, 1)"));
    }
    let ln_target = libm::log(target);
    let meets = |n: usize| -> Result<Option<EerPoint>> {
        let pt = eer_search(n, p_inter, p_intra)?;
        Ok((pt.ln_eer() <= ln_target).then_some(pt))
    };

    // Exponential bracketing, then bisection as if the EER fell monotonically.
    let mut hi = 1;
    while meets(hi)?.is_none() {
        if hi >= max_rounds {
            return Err(Error::UnreachableTarget { target, max_rounds });
        }
        hi = (hi * 2).min(max_rounds);
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // The EER wobbles with the integer threshold; rescan below the bisection result.
    let window = (hi / 8).max(64).min(hi - 1);
    let mut best = hi;
    for n in (hi - window..hi).rev() {
        if meets(n)?.is_some() {
            best = n;
        }
    }
    let pt = meets(best)?.expect("best meets the target");
    Ok((best, pt))
}

pub fn min_crps_for_eer(inp: &EstimatorInputs, form: InterForm, target_eer: f64) -> Result<CapabilityRow> {
    inp.validate()?;
    let (pi, pa) = (p_inter(inp, form), p_intra_analytic(inp));
    let (n, pt) = min_rounds_for_eer(pi, pa, target_eer, MAX_ROUNDS)?;
    Ok(CapabilityRow {
        config: *inp,
        form,
        target_eer,
        p_inter: pi,
        p_intra: pa,
        n,
        n_eer: pt.n_th,
        log10_far: pt.log10_far(),
        log10_frr: pt.log10_frr(),
    })
}

/// Standard EER targets of the capability table.
pub const EER_TARGETS: [f64; 3] = [1e-6, 1e-9, 1e-12];

/// A published capability operating point. Its `n_eer` counts thresholds
/// from one, so it sits one above the 0-based `n_th` reported here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub n: usize,
    pub n_eer: usize,
    pub log10_far: f64,
    pub log10_frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub n_ins: usize,
    pub p: usize,
    pub n_mismatch: usize,
    /// One point per entry of [`EER_TARGETS`].
    pub points: [ReferencePoint; 3],
}

const fn pt(n: usize, n_eer: usize, log10_far: f64, log10_frr: f64) -> ReferencePoint {
    ReferencePoint { n, n_eer, log10_far, log10_frr }
}

/// Published capability table at `p_intra_puf = 0.05`.
pub const REFERENCE_ROWS: [ReferenceRow; 7] = [
    ReferenceRow { n_ins: 2, p: 2, n_mismatch: 0, points: [pt(294, 57, -6.06, -6.06), pt(465, 90, -9.02, -9.06), pt(641, 124, -12.02, -12.13)] },
    ReferenceRow { n_ins: 4, p: 2, n_mismatch: 0, points: [pt(219, 46, -6.05, -6.01), pt(348, 73, -9.01, -9.05), pt(478, 100, -12.03, -12.00)] },
    ReferenceRow { n_ins: 4, p: 4, n_mismatch: 0, points: [pt(599, 159, -6.06, -6.02), pt(950, 252, -9.04, -9.01), pt(1308, 347, -12.03, -12.06)] },
    ReferenceRow { n_ins: 8, p: 4, n_mismatch: 0, points: [pt(42, 30, -6.14, -6.19), pt(68, 48, -9.49, -9.25), pt(92, 65, -12.15, -12.27)] },
    ReferenceRow { n_ins: 8, p: 4, n_mismatch: 1, points: [pt(58, 15, -6.22, -6.19), pt(90, 23, -9.14, -9.02), pt(125, 32, -12.15, -12.27)] },
    ReferenceRow { n_ins: 16, p: 4, n_mismatch: 0, points: [pt(39, 36, -7.71, -6.13), pt(57, 53, -9.17, -9.14), pt(79, 73, -12.64, -12.04)] },
    ReferenceRow { n_ins: 16, p: 4, n_mismatch: 1, points: [pt(15, 12, -6.43, -6.27), pt(24, 19, -9.22, -9.54), pt(32, 25, -12.11, -12.16)] },
];

impl ReferenceRow {
    pub fn inputs(&self) -> EstimatorInputs {
        EstimatorInputs::new(self.n_ins, self.p, self.n_mismatch)
    }
}

/// A Monte Carlo rate with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub hits: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateEstimate {
    pub fn new(hits: u64, trials: u64) -> Self {
        if trials == 0 {
            return Self { hits, trials, rate: 0.0, ci_low: 0.0, ci_high: 1.0 };
        }
        let n = trials as f64;
        let p = hits as f64 / n;
        let z = 1.959_963_984_540_054;
        let denom = 1.0 + z * z / n;
        let centre = (p + z * z / (2.0 * n)) / denom;
        let half = z * libm::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
        let ci_low = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
        let ci_high = if hits == trials { 1.0 } else { (centre + half).min(1.0) };
        Self { hits, trials, rate: p, ci_low, ci_high }
    }
}

/// Empirical intra- and inter-distance statistics of a device population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimates {
    /// Same device and pattern, two noisy evaluations farther apart than `n_mismatch`.
    pub intra: RateEstimate,
    /// Two devices whose `p × p` candidate pairs all lie farther apart than `n_mismatch`.
    pub inter: RateEstimate,
    /// Genuine noisy response matching none of the device's own candidates.
    pub intra_protocol: RateEstimate,
    /// One device's response matching none of another device's candidates.
    pub inter_protocol: RateEstimate,
    /// Counts of intra HD `0..=n_ins`.
    pub intra_hd_histogram: Vec<u64>,
    /// Counts of the smallest inter HD over candidate pairs, `0..=n_ins`.
    pub inter_hd_histogram: Vec<u64>,
}

fn min_hd(r: &BitString, candidates: &[BitString]) -> usize {
    candidates.iter().map(|c| r.hamming_distance(c).expect("equal lengths")).min().unwrap_or(usize::MAX)
}

/// Monte Carlo intra/inter distances over devices with open sessions.
///
/// Each trial picks a device (and for inter a second, distinct one), a random
/// partial challenge and random pattern indices.
pub fn empirical_distances<R: Rng + ?Sized>(
    devices: &[ObPufDevice],
    trials: usize,
    n_mismatch: usize,
    rng: &mut R,
) -> Result<DistanceEstimates> {
    let first = devices.first().ok_or(Error::EmptyGroup)?;
    let pr = first.params();
    for d in devices {
        if d.params().k != pr.k || d.params().m != pr.m || d.params().p != pr.p || d.params().n_ins != pr.n_ins {
            return Err(Error::invalid("devices must share k, m, p and n_ins"));
        }
        if !d.has_session() {
            return Err(Error::NoSession);
        }
    }
    let mut intra_hist = alloc::vec![0u64; pr.n_ins + 1];
    let mut inter_hist = alloc::vec![0u64; pr.n_ins + 1];
    let (mut intra, mut intra_proto, mut inter, mut inter_proto) = (0u64, 0u64, 0u64, 0u64);
    let mut inter_trials = 0u64;
    for _ in 0..trials {
        let a = rng.random_range(0..devices.len());
        let dev = &devices[a];
        let c = BitString::random(pr.partial_len(), rng);
        let i = choose_pattern_index(pr.p, rng);
        let r1 = dev.eval_with_pattern(&c, i, rng, true)?.obfuscated_response;
        let r2 = dev.eval_with_pattern(&c, i, rng, true)?.obfuscated_response;
        let d = r1.hamming_distance(&r2)?;
        intra_hist[d] += 1;
        intra += (d > n_mismatch) as u64;
        let own = dev.candidate_responses(&c)?;
        intra_proto += (min_hd(&r1, &own) > n_mismatch) as u64;

        if devices.len() >= 2 {
            let mut b = rng.random_range(0..devices.len() - 1);
            if b >= a {
                b += 1;
            }
            let other = devices[b].candidate_responses(&c)?;
            let closest = other.iter().map(|o| min_hd(o, &own)).min().expect("p >= 1");
            inter_hist[closest] += 1;
            inter += (closest > n_mismatch) as u64;
            let j = choose_pattern_index(pr.p, rng);
            let impostor = devices[b].eval_with_pattern(&c, j, rng, true)?.obfuscated_response;
            inter_proto += (min_hd(&impostor, &own) > n_mismatch) as u64;
            inter_trials += 1;
        }
    }
    let t = trials as u64;
    Ok(DistanceEstimates {
        intra: RateEstimate::new(intra, t),
        inter: RateEstimate::new(inter, inter_trials),
        intra_protocol: RateEstimate::new(intra_proto, t),
        inter_protocol: RateEstimate::new(inter_proto, inter_trials),
        intra_hd_histogram: intra_hist,
        inter_hd_histogram: inter_hist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obfuscation::{design_pattern_set, ObPufParams};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn distances() {
        assert_eq!(hd(&bs("0101"), &bs("0011")).unwrap(), 2);
        assert_eq!(fhd(&bs("0101"), &bs("0011")).unwrap(), 0.5);
        let x = bs("0110101");
        assert_eq!(hd(&x, &x).unwrap(), 0);
        assert_eq!(hd(&x, &x.complement()).unwrap(), 7);
        assert!(hd(&x, &bs("01")).is_err());
    }

    #[test]
    fn pairwise_means() {
        assert_eq!(mean_pairwise_fhd(&[bs("00"), bs("11")]).unwrap(), 1.0);
        assert_eq!(mean_pairwise_fhd(&[bs("00"), bs("00"), bs("00")]).unwrap(), 0.0);
        let code = [bs("000"), bs("011"), bs("101"), bs("110")];
        assert!(close(mean_pairwise_fhd(&code).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(mean_pairwise_fhd(&[bs("0")]).is_err());
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(p_inter_analytic(&EstimatorInputs::new(1, 2, 0)), 0.0625);
        assert_eq!(p_inter_analytic(&EstimatorInputs::new(4, 1, 0)), 15.0 / 16.0);
        assert!(close(p_inter_analytic(&EstimatorInputs::new(16, 4, 1)), libm::pow(1.0 - 2.0 / 65536.0, 16.0), 1e-15));
        assert!(close(p_inter_analytic(&EstimatorInputs::new(16, 4, 1)), 0.999512, 1e-6));
        assert!(close(p_intra_analytic(&EstimatorInputs::new(2, 1, 0)), 0.0975, 1e-15));
        assert_eq!(p_intra_analytic(&EstimatorInputs::new(4, 1, 4)), 0.0);
        assert_eq!(p_intra_analytic(&EstimatorInputs::new(4, 1, 0).with_p_intra_puf(0.0)), 0.0);
        assert_eq!(p_min(&EstimatorInputs::new(2, 2, 0)), 0.9025);
        assert_eq!(p_min(&EstimatorInputs::new(4, 4, 0)), 0.81450625);
        assert_eq!(p_min(&EstimatorInputs::new(4, 4, 4)), 1.0);
    }

    #[test]
    fn corrected_inter_adds_binomial_mass() {
        let inp = EstimatorInputs::new(8, 4, 1);
        assert!(close(p_inter_corrected(&inp), libm::pow(1.0 - 9.0 / 256.0, 16.0), 1e-14));
        let nm0 = EstimatorInputs::new(8, 4, 0);
        assert!(close(p_inter_corrected(&nm0), p_inter_analytic(&nm0), 1e-15));
    }

    /// Intra estimator by enumerating every flip pattern.
    #[test]
    fn intra_matches_flip_enumeration() {
        for n_ins in 1..=8usize {
            for nm in 0..=n_ins {
                let q = 0.05;
                let mut mass = 0.0;
                for flips in 0u32..(1 << n_ins) {
                    let w = flips.count_ones() as usize;
                    if w > nm {
                        mass += libm::pow(q, w as f64) * libm::pow(1.0 - q, (n_ins - w) as f64);
                    }
                }
                let inp = EstimatorInputs::new(n_ins, 1, nm);
                assert!(close(p_intra_analytic(&inp), mass, 1e-12));
                assert!(close(p_min(&inp), 1.0 - mass, 1e-12));
            }
        }
    }

    #[test]
    fn printed_inter_is_monotone() {
        for nm in 0..3 {
            for n_ins in (nm + 1)..12 {
                for p in 1..6 {
                    let a = p_inter_analytic(&EstimatorInputs::new(n_ins, p, nm));
                    assert!(p_inter_analytic(&EstimatorInputs::new(n_ins, p + 1, nm)) <= a);
                    assert!(p_inter_analytic(&EstimatorInputs::new(n_ins + 1, p, nm)) >= a);
                }
            }
        }
    }

    #[test]
    fn rate_edges() {
        assert_eq!(far(10, 10, 0.3).unwrap(), 1.0);
        assert_eq!(frr(10, 10, 0.3).unwrap(), 0.0);
        assert!(close(far(10, 0, 0.5).unwrap(), libm::exp2(-10.0), 1e-18));
        assert!(far(5, 6, 0.5).is_err());
    }

    /// Probability mass of all `2^n` outcome sequences whose mismatch count
    /// satisfies `keep`, visited one sequence at a time.
    fn enumerate(n: usize, p: f64, keep: &dyn Fn(usize) -> bool) -> f64 {
        fn walk(left: usize, w: usize, p: f64, keep: &dyn Fn(usize) -> bool) -> f64 {
            if left == 0 {
                return if keep(w) { 1.0 } else { 0.0 };
            }
            p * walk(left - 1, w + 1, p, keep) + (1.0 - p) * walk(left - 1, w, p, keep)
        }
        walk(n, 0, p, keep)
    }

    fn enum_far(n: usize, n_th: usize, p: f64) -> f64 {
        enumerate(n, p, &|w| w <= n_th)
    }

    fn enum_frr(n: usize, n_th: usize, p: f64) -> f64 {
        enumerate(n, p, &|w| w > n_th)
    }

    #[test]
    fn tails_match_enumeration() {
        let mut rng = seeded(1);
        for n in 1..=16usize {
            for _ in 0..4 {
                let p_inter: f64 = rng.random_range(0.0..1.0);
                let p_intra: f64 = rng.random_range(0.0..1.0);
                for n_th in 0..=n {
                    let lower = enum_far(n, n_th, p_inter);
                    assert!(close(far(n, n_th, p_inter).unwrap(), lower, 1e-12));
                    let upper = enum_frr(n, n_th, p_intra);
                    assert!(close(frr(n, n_th, p_intra).unwrap(), upper, 1e-12));
                }
            }
        }
    }

    #[test]
    fn deep_tails_do_not_underflow() {
        let v = log10_far(600, 158, 0.44).unwrap();
        assert!(v.is_finite() && v < -5.0);
        let w = log10_frr(2000, 1000, 0.01).unwrap();
        assert!(w.is_finite() && w < -300.0);
    }

    #[test]
    fn perfect_separation() {
        let pt = eer_search(10, 1.0, 0.0).unwrap();
        assert_eq!(pt.n_th, 0);
        assert_eq!(pt.eer(), 0.0);
        assert!(matches!(eer_search(10, 0.2, 0.3), Err(Error::DegenerateEstimators { .. })));
    }

    fn brute_eer(n: usize, p_inter: f64, p_intra: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for n_th in 0..=n {
            let e = enum_far(n, n_th, p_inter).max(enum_frr(n, n_th, p_intra));
            if e < best.1 - 1e-15 {
                best = (n_th, e);
            }
        }
        best
    }

    #[test]
    fn eer_search_matches_exhaustive_scan() {
        let mut rng = seeded(2);
        for _ in 0..300 {
            let n = rng.random_range(1..=20usize);
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let (p_intra, p_inter) = if a < b { (a, b) } else { (b, a) };
            if p_inter - p_intra < 1e-3 {
                continue;
            }
            let pt = eer_search(n, p_inter, p_intra).unwrap();
            let (n_th, e) = brute_eer(n, p_inter, p_intra);
            assert!(close(pt.eer(), e, 1e-12), "n={n} {} vs {e}", pt.eer());
            let at_ours = enum_far(n, pt.n_th, p_inter).max(enum_frr(n, pt.n_th, p_intra));
            assert!(pt.n_th == n_th || close(at_ours, e, 1e-12));
        }
    }

    /// Smallest n by a plain linear scan.
    fn linear_min_rounds(p_inter: f64, p_intra: f64, target: f64) -> usize {
        (1..).find(|&n| eer_search(n, p_inter, p_intra).unwrap().eer() <= target).unwrap()
    }

    #[test]
    fn min_rounds_matches_linear_scan() {
        let cases = [(0.9, 0.1, 1e-3), (0.6, 0.3, 1e-4), (0.8145, 0.1855, 1e-6), (0.99, 0.2, 1e-9), (0.5, 0.05, 1e-6)];
        for (pi, pa, t) in cases {
            let (n, _) = min_rounds_for_eer(pi, pa, t, MAX_ROUNDS).unwrap();
            assert_eq!(n, linear_min_rounds(pi, pa, t), "{pi} {pa} {t}");
        }
        for row in &REFERENCE_ROWS {
            for target in EER_TARGETS {
                let inp = row.inputs();
                for form in [InterForm::Printed, InterForm::Corrected] {
                    let r = min_crps_for_eer(&inp, form, target).unwrap();
                    assert_eq!(r.n, linear_min_rounds(r.p_inter, r.p_intra, target));
                    assert!(r.log10_far.max(r.log10_frr) <= libm::log10(target) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn reachable_rows_reproduce() {
        // Rows whose reference values follow from these estimators directly.
        let r = min_crps_for_eer(&EstimatorInputs::new(4, 4, 0), InterForm::Printed, 1e-12).unwrap();
        assert_eq!((r.n, r.n_eer), (1308, 346));
        let r = min_crps_for_eer(&EstimatorInputs::new(8, 4, 0), InterForm::Printed, 1e-12).unwrap();
        assert_eq!((r.n, r.n_eer), (92, 64));
        let r = min_crps_for_eer(&EstimatorInputs::new(16, 4, 1), InterForm::Corrected, 1e-6).unwrap();
        assert_eq!((r.n, r.n_eer), (15, 11));
    }

    #[test]
    fn unreachable_target_is_reported() {
        assert!(matches!(min_rounds_for_eer(0.5, 0.4999, 1e-12, 1000), Err(Error::UnreachableTarget { .. })));
    }

    #[test]
    fn wilson_interval_brackets_rate() {
        let e = RateEstimate::new(50, 1000);
        assert!(e.ci_low < 0.05 && 0.05 < e.ci_high);
        assert_eq!(RateEstimate::new(0, 100).ci_low, 0.0);
    }

    fn population(pr: ObPufParams, count: usize, sigma: f64, seed: u64) -> Vec<ObPufDevice> {
        let set = design_pattern_set(&pr, seed, 10).unwrap();
        let mut rng = seeded(seed);
        (0..count)
            .map(|_| {
                let mut d = ObPufDevice::sample(&pr, set.clone(), sigma, &mut rng).unwrap();
                d.open_fixed_session();
                d
            })
            .collect()
    }

    #[test]
    fn noiseless_single_pattern_has_zero_intra() {
        let devs = population(ObPufParams { k: 32, m: 1, p: 1, n_ins: 4, xors: 1 }, 2, 0.0, 3);
        let est = empirical_distances(&devs, 2000, 0, &mut seeded(4)).unwrap();
        assert_eq!(est.intra.hits, 0);
        assert_eq!(est.intra_protocol.hits, 0);
    }

    #[test]
    fn empirical_intra_tracks_estimator() {
        let cal = crate::apuf::calibrate_noise(64, 0.05, 100_000, 5).unwrap();
        let pr = ObPufParams { k: 64, m: 3, p: 4, n_ins: 4, xors: 1 };
        let devs = population(pr, 200, cal.sigma, 6);
        let est = empirical_distances(&devs, 100_000, 0, &mut seeded(7)).unwrap();
        let analytic = p_intra_analytic(&EstimatorInputs::new(4, 4, 0));
        assert!(close(est.intra.rate, analytic, 0.01), "{} vs {analytic}", est.intra.rate);
    }

    proptest! {
        #[test]
        fn far_frr_monotone(n in 1usize..60, p_inter in 0.0f64..1.0, p_intra in 0.0f64..1.0) {
            let mut prev_far = 0.0;
            let mut prev_frr = 1.0;
            for n_th in 0..=n {
                let fa = far(n, n_th, p_inter).unwrap();
                let fr = frr(n, n_th, p_intra).unwrap();
                prop_assert!(fa >= prev_far - 1e-15);
                prop_assert!(fr <= prev_frr + 1e-15);
                prev_far = fa;
                prev_frr = fr;
            }
            prop_assert_eq!(far(n, n, p_inter).unwrap(), 1.0);
            prop_assert_eq!(frr(n, n, p_intra).unwrap(), 0.0);
        }

        #[test]
        fn p_min_complements_intra(n_ins in 1usize..20, nm in 0usize..20, q in 0.0f64..0.5) {
            let inp = EstimatorInputs::new(n_ins, 1, nm.min(n_ins)).with_p_intra_puf(q);
            prop_assert!((p_min(&inp) + p_intra_analytic(&inp) - 1.0).abs() < 1e-12);
        }
    }
}
