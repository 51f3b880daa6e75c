//! Covariance matrix adaptation evolution strategy, `(μ/μ_w, λ)` form.
//!
//! Defaults follow the standard parameterization: `λ = 4 + ⌊3 ln n⌋`,
//! log-linear weights over the best `⌊λ/2⌋`, cumulative step-size control and
//! a rank-one plus rank-μ covariance update. The eigendecomposition of `C` is
//! refreshed lazily.
//!
//! The loop is split into [`Cmaes::ask`] and [`Cmaes::tell`] so that callers
//! can evaluate a population however they like; [`minimize`] drives both with
//! a [`BatchEvaluator`].

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, standard_normal, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesOptions {
    /// Offspring per generation; `None` picks `4 + ⌊3 ln n⌋`.
    pub population: Option<usize>,
    pub generations: usize,
    pub sigma0: f64,
    pub seed: u64,
    /// Stop as soon as the best fitness is at or below this value.
    pub target: Option<f64>,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        Self { population: None, generations: 100, sigma0: 1.0, seed: 0, target: None }
    }
}

pub fn default_population(dim: usize) -> usize {
    4 + libm::floor(3.0 * libm::log(dim as f64)) as usize
}

/// Evaluates a whole population. Implementations may run candidates in
/// parallel but must return fitness values in candidate order.
pub trait BatchEvaluator {
    fn evaluate(&self, objective: &(dyn Fn(&[f64]) -> f64 + Sync), candidates: &[Vec<f64>]) -> Vec<f64>;
}

/// Evaluates candidates one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchEvaluator for Sequential {
    fn evaluate(&self, objective: &(dyn Fn(&[f64]) -> f64 + Sync), candidates: &[Vec<f64>]) -> Vec<f64> {
        candidates.iter().map(|c| objective(c)).collect()
    }
}

/// Strategy state.
#[derive(Debug, Clone)]
pub struct Cmaes {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    seed: u64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    pc: DVector<f64>,
    ps: DVector<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    eigen_generation: usize,
    eigen_interval: usize,
    generation: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl Cmaes {
    pub fn new(initial_mean: Vec<f64>, opts: &CmaesOptions) -> Result<Self> {
        let n = initial_mean.len();
        if n == 0 {
            return Err(Error::invalid("search dimension must be at least 1"));
        }
        if !(opts.sigma0 > 0.0 && opts.sigma0.is_finite()) {
            return Err(Error::invalid("initial step size must be positive"));
        }
        let lambda = opts.population.unwrap_or_else(|| default_population(n)).max(2);
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| libm::log(mu as f64 + 0.5) - libm::log(i as f64)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3) * (nf + 1.3) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0) * (nf + 2.0) + mueff));
        let damps = 1.0 + 2.0 * (libm::sqrt((mueff - 1.0) / (nf + 1.0)) - 1.0).max(0.0) + cs;
        let chi_n = libm::sqrt(nf) * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let eigen_interval = ((1.0 / ((c1 + cmu) * nf * 10.0)) as usize).max(1);
        Ok(Self {
            dim: n,
            lambda,
            mu,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            seed: opts.seed,
            mean: DVector::from_vec(initial_mean),
            sigma: opts.sigma0,
            cov: DMatrix::identity(n, n),
            pc: DVector::zeros(n),
            ps: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            eigen_generation: 0,
            eigen_interval,
            generation: 0,
            best: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn population(&self) -> usize {
        self.lambda
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Best candidate seen so far and its fitness.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, f)| (x.as_slice(), *f))
    }

    /// Samples this generation's candidates. Candidate `i` draws from its own
    /// stream derived from the seed, the generation and `i`.
    pub fn ask(&self) -> Vec<Vec<f64>> {
        (0..self.lambda)
            .map(|i| {
                let mut rng = substream(mix(&[self.seed, self.generation as u64, i as u64]), 0);
                let z = DVector::from_fn(self.dim, |_, _| standard_normal(&mut rng));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + y * self.sigma).as_slice().to_vec()
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates (smaller is better).
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        if candidates.len() != self.lambda || fitness.len() != self.lambda {
            return Err(Error::LengthMismatch { expected: self.lambda, actual: candidates.len().min(fitness.len()) });
        }
        let score = |f: f64| if f.is_nan() { f64::INFINITY } else { f };
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| score(fitness[a]).total_cmp(&score(fitness[b])).then(a.cmp(&b)));

        let top = order[0];
        if self.best.as_ref().is_none_or(|(_, f)| score(fitness[top]) < *f) {
            self.best = Some((candidates[top].clone(), score(fitness[top])));
        }

        let old = self.mean.clone();
        let mut mean = DVector::zeros(self.dim);
        for (w, &i) in self.weights.iter().zip(&order) {
            mean += DVector::from_column_slice(&candidates[i]) * *w;
        }
        let step = (&mean - &old) / self.sigma;

        // C^{-1/2} · step = B · D^{-1} · Bᵀ · step
        let inv_sqrt_step = &self.basis * (self.basis.tr_mul(&step)).component_div(&self.scales);
        self.ps = &self.ps * (1.0 - self.cs) + inv_sqrt_step * libm::sqrt(self.cs * (2.0 - self.cs) * self.mueff);
        let gens = (self.generation + 1) as f64;
        let ps_norm = self.ps.norm();
        let hsig = ps_norm / libm::sqrt(1.0 - libm::pow(1.0 - self.cs, 2.0 * gens)) / self.chi_n
            < 1.4 + 2.0 / (self.dim as f64 + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        self.pc = &self.pc * (1.0 - self.cc) + &step * (hsig_f * libm::sqrt(self.cc * (2.0 - self.cc) * self.mueff));

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, &i) in self.weights.iter().zip(&order[..self.mu]) {
            let d = (DVector::from_column_slice(&candidates[i]) - &old) / self.sigma;
            rank_mu.ger(*w, &d, &d, 1.0);
        }
        let rank_one = &self.pc * self.pc.transpose();
        let keep = 1.0 - self.c1 - self.cmu;
        let correction = (1.0 - hsig_f) * self.cc * (2.0 - self.cc);
        self.cov = &self.cov * keep + (rank_one + &self.cov * correction) * self.c1 + rank_mu * self.cmu;

        self.sigma *= libm::exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0));
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::invalid("step size degenerated"));
        }
        self.mean = mean;
        self.generation += 1;
        if self.generation - self.eigen_generation >= self.eigen_interval {
            self.refresh_eigen();
        }
        Ok(())
    }

    fn refresh_eigen(&mut self) {
        self.eigen_generation = self.generation;
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let floor = max * 1e-14;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        self.basis = eig.eigenvectors;
        self.scales = values.map(libm::sqrt);
        // Rebuild C from the repaired spectrum so it stays positive definite.
        self.cov = &self.basis * DMatrix::from_diagonal(&values) * self.basis.transpose();
    }
}

/// Result of [`minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness found in each generation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Runs the strategy from `initial_mean` for `opts.generations` generations.
///
/// `observe` is called after every generation with the state and the
/// generation's best fitness; returning `false` stops early.
pub fn minimize_with<E: BatchEvaluator + ?Sized>(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    initial_mean: Vec<f64>,
    opts: &CmaesOptions,
    evaluator: &E,
    observe: &mut dyn FnMut(&Cmaes, f64) -> bool,
) -> Result<CmaesResult> {
    if opts.generations == 0 {
        return Err(Error::invalid("at least one generation is required"));
    }
    let mut es = Cmaes::new(initial_mean, opts)?;
    let mut trace = Vec::with_capacity(opts.generations);
    let mut evaluations = 0;
    for _ in 0..opts.generations {
        let candidates = es.ask();
        let fitness = evaluator.evaluate(objective, &candidates);
        evaluations += candidates.len();
        let gen_best = fitness.iter().map(|&f| if f.is_nan() { f64::INFINITY } else { f }).fold(f64::INFINITY, f64::min);
        trace.push(gen_best);
        es.tell(&candidates, &fitness)?;
        let keep_going = observe(&es, gen_best);
        let reached = opts.target.is_some_and(|t| es.best().is_some_and(|(_, f)| f <= t));
        if !keep_going || reached {
            break;
        }
    }
    let (best, best_fitness) = es.best().map(|(x, f)| (x.to_vec(), f)).expect("one generation ran");
    Ok(CmaesResult { best, best_fitness, trace, evaluations })
}

/// Minimizes `objective` over `dim` dimensions starting from the origin.
pub fn minimize<E: BatchEvaluator + ?Sized>(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    dim: usize,
    opts: &CmaesOptions,
    evaluator: &E,
) -> Result<CmaesResult> {
    minimize_with(objective, alloc::vec![0.0; dim], opts, evaluator, &mut |_, _| true)
}
