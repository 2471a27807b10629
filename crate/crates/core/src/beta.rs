//! Beta-model analysis of the MEAN and VAR uncertainty metrics.
//!
//! Model: the K member predictions for an input x are i.i.d. draws from
//! `B(alpha_x, beta_x)` with `alpha_x + beta_x` fixed to a shared
//! concentration c, so a single shape parameter orders the inputs by
//! severity. For two inputs with `alpha_i < alpha_j <= beta_j`, closed
//! forms give
//!
//! ```text
//! mu    = alpha / c           delta_mean = mu_j - mu_i
//! sigma = mu (1 - mu) / (1+c) delta_var  = sigma_j - sigma_i
//! ```
//!
//! and the ordering `delta_mean > delta_var > 0` holds for every such
//! pair. A Chebyshev argument then bounds the probability that a
//! finite ensemble of n members misranks the pair:
//! `P(s(x_i) > s(x_j)) <= (Var(s(x_i)) + Var(s(x_j))) / delta^2`, where
//! `Var(s_mean) = sigma / n` and `Var(s_var)` decays as O(1/n), so the
//! MEAN metric enjoys the smaller bound. In the infinite-ensemble limit
//! both metrics order any conforming pair identically.
//!
//! [`simulate_misranking`] and [`corollary_check`] estimate the misranking
//! probabilities and the ordering agreement by seeded Monte Carlo;
//! [`run_verification`] packages the closed forms, the estimates, and a
//! set of pass/fail assertions into a [`TheoryReport`].
//!
//! Monte Carlo trials are partitioned into fixed-size chunks; each chunk
//! draws from its own counter-derived RNG stream and partial results are
//! merged in chunk order, so results are byte-identical for a given seed
//! regardless of how many worker threads run the chunks.
//!
//! Beta draws use the ratio-of-gammas construction
//! `X / (X + Y), X ~ Gamma(alpha, 1), Y ~ Gamma(beta, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Seed used when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 0xE75EED;

/// Assertions are skipped below this many trials; the standard errors get
/// too large for the margins they certify.
pub const MIN_TRIALS_FOR_ASSERTIONS: u64 = 1_000;

/// One-sided slack, in standard errors, applied to every Monte Carlo
/// assertion.
pub const SE_MULTIPLIER: f64 = 3.0;

/// Required MEAN/VAR ordering agreement for the infinite-ensemble check.
pub const AGREEMENT_THRESHOLD: f64 = 0.99;

/// Misranking margins are asserted only at ensemble sizes >= this; below
/// it the Chebyshev separation is too weak to certify at 3 SE.
pub const MARGIN_MIN_ENSEMBLE_SIZE: usize = 10;

const DOMAIN_MISRANK: u16 = 1;
const DOMAIN_VAR_OF_VAR: u16 = 2;
const DOMAIN_COROLLARY: u16 = 3;

/// Beta distribution parameters plus the simulation settings that go with
/// one input: ensemble size n, trial count, seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaEnsembleSpec<F> {
    alpha: F,
    beta: F,
    ensemble_size: usize,
    trials: u64,
    seed: u64,
}

impl<F: Real> BetaEnsembleSpec<F> {
    /// Requires `alpha > 0`, `beta > 0`, `ensemble_size >= 2`, `trials >= 1`.
    pub fn new(alpha: F, beta: F, ensemble_size: usize, trials: u64, seed: u64) -> Result<Self> {
        if !(alpha > F::zero()) || !(beta > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "beta shape parameters must be positive, got alpha={alpha}, beta={beta}"
            )));
        }
        if ensemble_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "ensemble size must be >= 2, got {ensemble_size}"
            )));
        }
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".to_owned()));
        }
        Ok(Self {
            alpha,
            beta,
            ensemble_size,
            trials,
            seed,
        })
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    pub fn beta(&self) -> F {
        self.beta
    }

    /// Fixed sum `alpha + beta`.
    pub fn concentration(&self) -> F {
        self.alpha + self.beta
    }

    pub fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Closed-form `(mean, variance)` of the distribution.
    pub fn moments(&self) -> (F, F) {
        beta_moments(self.alpha, self.beta).expect("parameters validated on construction")
    }
}

/// Closed-form mean and variance of `B(alpha, beta)`:
/// `mu = alpha / (alpha + beta)`, `var = mu (1 - mu) / (1 + alpha + beta)`.
pub fn beta_moments<F: Real>(alpha: F, beta: F) -> Result<(F, F)> {
    if !(alpha > F::zero()) || !(beta > F::zero()) {
        return Err(Error::InvalidParameter(format!(
            "beta shape parameters must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    let sum = alpha + beta;
    let mean = alpha / sum;
    let variance = mean * (F::one() - mean) / (F::one() + sum);
    Ok((mean, variance))
}

/// Beta sampler built from two gamma draws: `X / (X + Y)`.
#[derive(Debug, Clone)]
pub struct BetaSampler<F: Real> {
    gamma_alpha: F::GammaSampler,
    gamma_beta: F::GammaSampler,
    mean: F,
}

impl<F: Real> BetaSampler<F> {
    pub fn new(alpha: F, beta: F) -> Result<Self> {
        let (mean, _) = beta_moments(alpha, beta)?;
        Ok(Self {
            gamma_alpha: F::new_gamma(alpha)?,
            gamma_beta: F::new_gamma(beta)?,
            mean,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let x = F::sample_gamma(&self.gamma_alpha, rng);
        let y = F::sample_gamma(&self.gamma_beta, rng);
        let total = x + y;
        if total > F::zero() {
            x / total
        } else {
            // both gamma draws underflowed to zero; fall back to the mean
            self.mean
        }
    }
}

/// Closed-form pairwise comparison of two inputs under the shared-sum beta
/// model, at one ensemble size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwiseTheory<F> {
    pub mu_i: F,
    pub mu_j: F,
    pub sigma_i: F,
    pub sigma_j: F,
    /// Expected-score gap under MEAN (linearized form `mu_j - mu_i` at
    /// tau = 0.5).
    pub delta_mean: F,
    /// Expected-score gap under VAR: `sigma_j - sigma_i`.
    pub delta_var: F,
    pub ensemble_size: usize,
    /// Chebyshev bound on the MEAN misranking probability:
    /// `(sigma_i + sigma_j) / (n delta_mean^2)`.
    pub bound_mean: F,
    /// Chebyshev bound on the VAR misranking probability; requires a Monte
    /// Carlo estimate of `Var(s_var)`, so it is filled in separately via
    /// [`PairwiseTheory::with_var_bound`].
    pub bound_var: Option<F>,
}

impl<F: Real> PairwiseTheory<F> {
    /// The ordering claimed for every conforming pair.
    pub fn ordering_holds(&self) -> bool {
        self.delta_mean > self.delta_var && self.delta_var > F::zero()
    }

    /// Attach the VAR-side Chebyshev bound
    /// `(var_s_var_i + var_s_var_j) / delta_var^2` from Monte Carlo
    /// estimates of the variance of the sample variance.
    pub fn with_var_bound(mut self, var_s_var_i: F, var_s_var_j: F) -> Self {
        self.bound_var = Some((var_s_var_i + var_s_var_j) / (self.delta_var * self.delta_var));
        self
    }
}

/// Closed-form theory values for the pair `(alpha_i, alpha_j)` with shared
/// concentration `c`, evaluated at ensemble size `n`.
///
/// Preconditions: `0 < alpha_i < alpha_j <= c/2` (so input j is the more
/// ambiguous one and both means sit at or below 1/2), `n >= 2`,
/// `0 < tau < 1`. The expected-score gap under MEAN uses the linearized
/// form `|tau - mu_i| - |tau - mu_j|`, which at tau = 0.5 under the
/// preconditions reduces to `mu_j - mu_i`; the Monte Carlo side evaluates
/// the exact metric instead, and any daylight between the two shows up in
/// the report as `mc_delta_mean` next to `delta_mean`.
pub fn pairwise_theory<F: Real>(
    alpha_i: F,
    alpha_j: F,
    c: F,
    ensemble_size: usize,
    tau: F,
) -> Result<PairwiseTheory<F>> {
    let two = F::from(2.0).unwrap();
    if !(alpha_i > F::zero()) {
        return Err(Error::InvalidParameter(format!(
            "alpha_i must be positive, got {alpha_i}"
        )));
    }
    if !(alpha_i < alpha_j) {
        return Err(Error::InvalidParameter(format!(
            "requires alpha_i < alpha_j, got alpha_i={alpha_i}, alpha_j={alpha_j}"
        )));
    }
    if !(alpha_j <= c / two) {
        return Err(Error::InvalidParameter(format!(
            "requires alpha_j <= c/2 (alpha_j <= beta_j), got alpha_j={alpha_j}, c={c}"
        )));
    }
    if ensemble_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble size must be >= 2, got {ensemble_size}"
        )));
    }
    if !(tau > F::zero() && tau < F::one()) {
        return Err(Error::InvalidParameter(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    let (mu_i, sigma_i) = beta_moments(alpha_i, c - alpha_i)?;
    let (mu_j, sigma_j) = beta_moments(alpha_j, c - alpha_j)?;
    let delta_mean = (tau - mu_i).abs() - (tau - mu_j).abs();
    let delta_var = sigma_j - sigma_i;
    let n_f = F::from_usize(ensemble_size).unwrap();
    let bound_mean = (sigma_i + sigma_j) / (n_f * delta_mean * delta_mean);
    Ok(PairwiseTheory {
        mu_i,
        mu_j,
        sigma_i,
        sigma_j,
        delta_mean,
        delta_var,
        ensemble_size,
        bound_mean,
        bound_var: None,
    })
}

/// Estimated misranking probabilities for one ensemble size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisrankEstimate<F> {
    pub ensemble_size: usize,
    pub trials: u64,
    /// Estimated `P(s_mean(x_i) > s_mean(x_j))`; ties count half.
    pub p_mean: F,
    pub se_mean: F,
    /// Estimated `P(s_var(x_i) > s_var(x_j))`; ties count half.
    pub p_var: F,
    pub se_var: F,
    /// Monte Carlo `E[s_mean(x_j) - s_mean(x_i)]` under the exact metric,
    /// for comparison with the linearized `delta_mean`.
    pub mc_delta_mean: F,
    /// Monte Carlo `E[s_var(x_j) - s_var(x_i)]`.
    pub mc_delta_var: F,
}

/// Ordering agreement between the MEAN and VAR rankings of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementEstimate<F> {
    pub ensemble_size: usize,
    pub trials: u64,
    /// Fraction of trials where `s_mean` and `s_var` order the pair the
    /// same way.
    pub agreement: F,
    pub se: F,
}

// --- deterministic chunked Monte Carlo -----------------------------------

/// Trials per chunk: sized so a chunk stays around 2^18 draws, clamped so
/// small jobs still split and huge ensembles do not starve the pool.
fn chunk_trial_count(draws_per_trial: usize) -> u64 {
    ((1u64 << 18) / draws_per_trial.max(1) as u64).clamp(16, 4096)
}

fn stream_id(domain: u16, cell: u16, chunk: u32) -> u64 {
    ((domain as u64) << 48) | ((cell as u64) << 32) | chunk as u64
}

/// Run `trials` trials split into fixed chunks, each chunk on its own RNG
/// stream derived from `(seed, domain, cell, chunk index)`. Chunk results
/// come back in chunk order, so any fold over them is independent of the
/// number of worker threads.
fn run_chunked<T, G>(
    seed: u64,
    domain: u16,
    cell: u16,
    trials: u64,
    per_chunk: u64,
    gen: G,
) -> Vec<T>
where
    T: Send,
    G: Fn(&mut ChaCha12Rng, u64) -> T + Sync,
{
    let n_chunks = trials.div_ceil(per_chunk);
    assert!(n_chunks <= u32::MAX as u64, "trial count too large");
    (0..n_chunks as usize)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(domain, cell, ci as u32));
            let done = ci as u64 * per_chunk;
            let len = per_chunk.min(trials - done);
            gen(&mut rng, len)
        })
        .collect()
}

/// Single-pass (Welford) mean and unbiased sample variance of `n` draws.
fn sample_mean_var<F: Real, R: Rng + ?Sized>(
    sampler: &BetaSampler<F>,
    n: usize,
    rng: &mut R,
) -> (F, F) {
    let mut mean = F::zero();
    let mut m2 = F::zero();
    for k in 1..=n {
        let x = sampler.sample(rng);
        let delta = x - mean;
        mean = mean + delta / F::from_usize(k).unwrap();
        m2 = m2 + delta * (x - mean);
    }
    (mean, m2 / F::from_usize(n - 1).unwrap())
}

struct MisrankAccum<F> {
    mean_wins_i: u64,
    mean_ties: u64,
    var_wins_i: u64,
    var_ties: u64,
    sum_delta_mean: F,
    sum_delta_var: F,
}

impl<F: Real> MisrankAccum<F> {
    fn zero() -> Self {
        Self {
            mean_wins_i: 0,
            mean_ties: 0,
            var_wins_i: 0,
            var_ties: 0,
            sum_delta_mean: F::zero(),
            sum_delta_var: F::zero(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.mean_wins_i += other.mean_wins_i;
        self.mean_ties += other.mean_ties;
        self.var_wins_i += other.var_wins_i;
        self.var_ties += other.var_ties;
        self.sum_delta_mean = self.sum_delta_mean + other.sum_delta_mean;
        self.sum_delta_var = self.sum_delta_var + other.sum_delta_var;
        self
    }
}

fn tie_adjusted_rate<F: Real>(wins: u64, ties: u64, trials: u64) -> (F, F) {
    let half = F::from(0.5).unwrap();
    let t = F::from_u64(trials).unwrap();
    let p = (F::from_u64(wins).unwrap() + half * F::from_u64(ties).unwrap()) / t;
    let se = (p * (F::one() - p) / t).sqrt();
    (p, se)
}

fn check_shared_concentration<F: Real>(
    spec_i: &BetaEnsembleSpec<F>,
    spec_j: &BetaEnsembleSpec<F>,
) -> Result<F> {
    let ci = spec_i.concentration();
    let cj = spec_j.concentration();
    let tol = F::from(1e-9).unwrap() * ci.max(cj);
    if (ci - cj).abs() > tol {
        return Err(Error::InvalidParameter(format!(
            "inputs must share the concentration alpha + beta, got {ci} and {cj}"
        )));
    }
    Ok(ci)
}

/// Estimate the misranking probabilities `P(s(x_i) > s(x_j))` for MEAN and
/// VAR at each ensemble size in `n_grid`.
///
/// Every trial draws a fresh size-n ensemble per input and scores both
/// metrics from the same draws; exact ties count half. Results are
/// deterministic in `seed` and independent of worker-thread count.
///
/// Only structural preconditions are enforced here (shared concentration,
/// valid sizes); this op is also the diagnostic tool for pairs outside the
/// theorem's ordering (equal shapes, swapped shapes), for which the
/// misranking event is still well defined. Callers verifying the theorem
/// get the ordering preconditions checked by [`pairwise_theory`] and
/// [`run_verification`].
pub fn simulate_misranking<F: Real>(
    spec_i: &BetaEnsembleSpec<F>,
    spec_j: &BetaEnsembleSpec<F>,
    n_grid: &[usize],
    trials: u64,
    seed: u64,
    tau: F,
) -> Result<Vec<MisrankEstimate<F>>> {
    check_shared_concentration(spec_i, spec_j)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".to_owned()));
    }
    if n_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "empty ensemble-size grid".to_owned(),
        ));
    }
    if n_grid.len() > u16::MAX as usize {
        return Err(Error::InvalidParameter(
            "ensemble-size grid too large".to_owned(),
        ));
    }
    for &n in n_grid {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "ensemble sizes must be >= 2, got {n}"
            )));
        }
    }
    let sampler_i = BetaSampler::new(spec_i.alpha(), spec_i.beta())?;
    let sampler_j = BetaSampler::new(spec_j.alpha(), spec_j.beta())?;

    let mut out = Vec::with_capacity(n_grid.len());
    for (cell, &n) in n_grid.iter().enumerate() {
        let per_chunk = chunk_trial_count(2 * n);
        let chunks = run_chunked(
            seed,
            DOMAIN_MISRANK,
            cell as u16,
            trials,
            per_chunk,
            |rng, len| {
                let mut acc = MisrankAccum::<F>::zero();
                for _ in 0..len {
                    let (mean_i, var_i) = sample_mean_var(&sampler_i, n, rng);
                    let (mean_j, var_j) = sample_mean_var(&sampler_j, n, rng);
                    let s_mean_i = F::one() - (mean_i - tau).abs();
                    let s_mean_j = F::one() - (mean_j - tau).abs();
                    match s_mean_i.partial_cmp(&s_mean_j).unwrap() {
                        std::cmp::Ordering::Greater => acc.mean_wins_i += 1,
                        std::cmp::Ordering::Equal => acc.mean_ties += 1,
                        std::cmp::Ordering::Less => {}
                    }
                    match var_i.partial_cmp(&var_j).unwrap() {
                        std::cmp::Ordering::Greater => acc.var_wins_i += 1,
                        std::cmp::Ordering::Equal => acc.var_ties += 1,
                        std::cmp::Ordering::Less => {}
                    }
                    acc.sum_delta_mean = acc.sum_delta_mean + (s_mean_j - s_mean_i);
                    acc.sum_delta_var = acc.sum_delta_var + (var_j - var_i);
                }
                acc
            },
        );
        let acc = chunks
            .into_iter()
            .fold(MisrankAccum::zero(), MisrankAccum::merge);
        let (p_mean, se_mean) = tie_adjusted_rate(acc.mean_wins_i, acc.mean_ties, trials);
        let (p_var, se_var) = tie_adjusted_rate(acc.var_wins_i, acc.var_ties, trials);
        let t = F::from_u64(trials).unwrap();
        out.push(MisrankEstimate {
            ensemble_size: n,
            trials,
            p_mean,
            se_mean,
            p_var,
            se_var,
            mc_delta_mean: acc.sum_delta_mean / t,
            mc_delta_var: acc.sum_delta_var / t,
        });
    }
    Ok(out)
}

/// Estimate how often the MEAN and VAR orderings of the pair agree at one
/// (large) ensemble size. As the size grows the agreement approaches 1 for
/// pairs satisfying the theory preconditions.
pub fn corollary_check<F: Real>(
    alpha_i: F,
    alpha_j: F,
    c: F,
    n_large: usize,
    trials: u64,
    seed: u64,
    tau: F,
) -> Result<AgreementEstimate<F>> {
    if n_large < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble size must be >= 2, got {n_large}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".to_owned()));
    }
    let sampler_i = BetaSampler::new(alpha_i, c - alpha_i)?;
    let sampler_j = BetaSampler::new(alpha_j, c - alpha_j)?;
    let per_chunk = chunk_trial_count(2 * n_large);
    let chunks = run_chunked(seed, DOMAIN_COROLLARY, 0, trials, per_chunk, |rng, len| {
        let mut agree = 0u64;
        for _ in 0..len {
            let (mean_i, var_i) = sample_mean_var(&sampler_i, n_large, rng);
            let (mean_j, var_j) = sample_mean_var(&sampler_j, n_large, rng);
            let s_mean_i = F::one() - (mean_i - tau).abs();
            let s_mean_j = F::one() - (mean_j - tau).abs();
            if (s_mean_i < s_mean_j) == (var_i < var_j) {
                agree += 1;
            }
        }
        agree
    });
    let agree: u64 = chunks.into_iter().sum();
    let t = F::from_u64(trials).unwrap();
    let agreement = F::from_u64(agree).unwrap() / t;
    let se = (agreement * (F::one() - agreement) / t).sqrt();
    Ok(AgreementEstimate {
        ensemble_size: n_large,
        trials,
        agreement,
        se,
    })
}

fn mc_var_of_sample_variance_cell<F: Real>(
    alpha: F,
    beta: F,
    ensemble_size: usize,
    trials: u64,
    seed: u64,
    cell: u16,
) -> Result<F> {
    if ensemble_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble size must be >= 2, got {ensemble_size}"
        )));
    }
    if trials < 2 {
        return Err(Error::InvalidParameter(
            "variance estimation needs at least 2 trials".to_owned(),
        ));
    }
    let sampler = BetaSampler::new(alpha, beta)?;
    let (_, sigma2) = beta_moments(alpha, beta)?;
    let per_chunk = chunk_trial_count(ensemble_size);
    // accumulate deviations around the analytic variance so the final
    // subtraction does not cancel
    let chunks = run_chunked(
        seed,
        DOMAIN_VAR_OF_VAR,
        cell,
        trials,
        per_chunk,
        |rng, len| {
            let mut sum_d = F::zero();
            let mut sum_d2 = F::zero();
            for _ in 0..len {
                let (_, v) = sample_mean_var(&sampler, ensemble_size, rng);
                let d = v - sigma2;
                sum_d = sum_d + d;
                sum_d2 = sum_d2 + d * d;
            }
            (sum_d, sum_d2)
        },
    );
    let (sum_d, sum_d2) = chunks
        .into_iter()
        .fold((F::zero(), F::zero()), |(a, b), (c, d)| (a + c, b + d));
    let t = F::from_u64(trials).unwrap();
    Ok((sum_d2 - sum_d * sum_d / t) / (t - F::one()))
}

/// Monte Carlo estimate of `Var(s_var)`: the variance, across ensembles of
/// the given size, of the unbiased sample variance of draws from
/// `B(alpha, beta)`. Used for the VAR-side Chebyshev bound.
pub fn mc_var_of_sample_variance<F: Real>(
    alpha: F,
    beta: F,
    ensemble_size: usize,
    trials: u64,
    seed: u64,
) -> Result<F> {
    mc_var_of_sample_variance_cell(alpha, beta, ensemble_size, trials, seed, 0)
}

/// Method-of-moments beta fit.
///
/// Unconstrained: with sample mean m and unbiased sample variance v,
/// `alpha = m (m(1-m)/v - 1)`, `beta = (1-m) (m(1-m)/v - 1)`. The moment
/// estimate exists only when `v < m(1-m)`; larger spread than a Bernoulli
/// cannot come from a beta distribution.
///
/// Constrained to a fixed sum c: `alpha = c m`, `beta = c (1-m)`.
///
/// Samples must lie in [0, 1]; they are clamped to `[1e-12, 1 - 1e-12]`
/// before the moments are taken.
pub fn fit_beta<F: Real>(samples: &[F], constraint: Option<F>) -> Result<(F, F)> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "beta fitting needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let eps = F::from(1e-12).unwrap();
    let mut mean = F::zero();
    let mut m2 = F::zero();
    for (k, &raw) in samples.iter().enumerate() {
        if !(raw >= F::zero() && raw <= F::one()) {
            return Err(Error::InvalidParameter(format!(
                "sample {raw} outside [0, 1]"
            )));
        }
        let x = raw.max(eps).min(F::one() - eps);
        let delta = x - mean;
        mean = mean + delta / F::from_usize(k + 1).unwrap();
        m2 = m2 + delta * (x - mean);
    }
    let variance = m2 / F::from_usize(samples.len() - 1).unwrap();
    if variance <= F::zero() {
        return Err(Error::ZeroVariance);
    }
    if let Some(c) = constraint {
        if !(c > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "constrained sum must be positive, got {c}"
            )));
        }
        return Ok((c * mean, c * (F::one() - mean)));
    }
    let limit = mean * (F::one() - mean);
    let scale = limit / variance - F::one();
    if !(scale > F::zero()) {
        return Err(Error::Unfittable {
            variance: variance.to_f64().unwrap_or(f64::NAN),
            limit: limit.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((mean * scale, (F::one() - mean) * scale))
}

// --- verification report ---------------------------------------------------

/// Parameters of one theory-verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig<F> {
    pub alpha_i: F,
    pub alpha_j: F,
    pub concentration: F,
    pub tau: F,
    pub n_grid: Vec<usize>,
    pub trials: u64,
    pub seed: u64,
    /// Ensemble size for the infinite-limit agreement check.
    pub corollary_ensemble_size: usize,
    pub corollary_trials: u64,
}

impl<F: Real> Default for VerifyConfig<F> {
    fn default() -> Self {
        Self {
            alpha_i: F::from(2.0).unwrap(),
            alpha_j: F::from(4.0).unwrap(),
            concentration: F::from(10.0).unwrap(),
            tau: F::from(0.5).unwrap(),
            n_grid: vec![5, 10, 20, 50],
            trials: 100_000,
            seed: DEFAULT_SEED,
            corollary_ensemble_size: 10_000,
            corollary_trials: 10_000,
        }
    }
}

/// One verified (or failed) claim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryAssertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Closed-form and estimated values at one ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryEstimateRow<F> {
    #[serde(flatten)]
    pub theory: PairwiseTheory<F>,
    #[serde(flatten)]
    pub estimate: MisrankEstimate<F>,
    /// Monte Carlo `Var(s_var)` for each input at this ensemble size.
    pub var_s_var_i: F,
    pub var_s_var_j: F,
}

/// Everything one `verify-theory` run produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport<F> {
    pub config: VerifyConfig<F>,
    pub rows: Vec<TheoryEstimateRow<F>>,
    pub corollary: AgreementEstimate<F>,
    pub assertions: Vec<TheoryAssertion>,
    /// True when the trial counts were too small to certify anything.
    pub assertions_skipped: bool,
    /// `None` when assertions were skipped.
    pub all_passed: Option<bool>,
}

/// Run the full verification: closed forms, misranking estimates across the
/// grid, VAR-side bounds, the infinite-limit agreement check, and the
/// assertion battery. Enforces the theory preconditions on the parameter
/// triple.
pub fn run_verification<F: Real>(config: &VerifyConfig<F>) -> Result<TheoryReport<F>> {
    let c = config.concentration;
    // validates 0 < alpha_i < alpha_j <= c/2 and the tau range
    let first_n = *config
        .n_grid
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty ensemble-size grid".to_owned()))?;
    pairwise_theory(
        config.alpha_i,
        config.alpha_j,
        c,
        first_n.max(2),
        config.tau,
    )?;
    if !config.n_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "ensemble-size grid must be strictly increasing".to_owned(),
        ));
    }

    let spec_i = BetaEnsembleSpec::new(
        config.alpha_i,
        c - config.alpha_i,
        first_n.max(2),
        config.trials,
        config.seed,
    )?;
    let spec_j = BetaEnsembleSpec::new(
        config.alpha_j,
        c - config.alpha_j,
        first_n.max(2),
        config.trials,
        config.seed,
    )?;
    let estimates = simulate_misranking(
        &spec_i,
        &spec_j,
        &config.n_grid,
        config.trials,
        config.seed,
        config.tau,
    )?;

    let mut rows = Vec::with_capacity(estimates.len());
    for (idx, estimate) in estimates.into_iter().enumerate() {
        let n = estimate.ensemble_size;
        let var_s_var_i = mc_var_of_sample_variance_cell(
            config.alpha_i,
            c - config.alpha_i,
            n,
            config.trials,
            config.seed,
            (2 * idx) as u16,
        )?;
        let var_s_var_j = mc_var_of_sample_variance_cell(
            config.alpha_j,
            c - config.alpha_j,
            n,
            config.trials,
            config.seed,
            (2 * idx + 1) as u16,
        )?;
        let theory = pairwise_theory(config.alpha_i, config.alpha_j, c, n, config.tau)?
            .with_var_bound(var_s_var_i, var_s_var_j);
        rows.push(TheoryEstimateRow {
            theory,
            estimate,
            var_s_var_i,
            var_s_var_j,
        });
    }

    let corollary = corollary_check(
        config.alpha_i,
        config.alpha_j,
        c,
        config.corollary_ensemble_size,
        config.corollary_trials,
        config.seed,
        config.tau,
    )?;

    let assertions_skipped = config.trials < MIN_TRIALS_FOR_ASSERTIONS
        || config.corollary_trials < MIN_TRIALS_FOR_ASSERTIONS;
    let assertions = if assertions_skipped {
        Vec::new()
    } else {
        build_assertions(&rows, &corollary)
    };
    let all_passed = (!assertions_skipped).then(|| assertions.iter().all(|a| a.pass));
    Ok(TheoryReport {
        config: config.clone(),
        rows,
        corollary,
        assertions,
        assertions_skipped,
        all_passed,
    })
}

fn f<F: Real>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn build_assertions<F: Real>(
    rows: &[TheoryEstimateRow<F>],
    corollary: &AgreementEstimate<F>,
) -> Vec<TheoryAssertion> {
    let mut out = Vec::new();
    let theory = &rows[0].theory;
    out.push(TheoryAssertion {
        name: "analytic_ordering".to_owned(),
        pass: theory.ordering_holds(),
        detail: format!(
            "delta_mean={:.6} > delta_var={:.6} > 0",
            f(theory.delta_mean),
            f(theory.delta_var)
        ),
    });
    for row in rows {
        let n = row.estimate.ensemble_size;
        let e = &row.estimate;
        out.push(TheoryAssertion {
            name: format!("misrank_ordering_n{n}"),
            pass: e.p_mean <= e.p_var,
            detail: format!("p_mean={:.6} <= p_var={:.6}", f(e.p_mean), f(e.p_var)),
        });
        if n >= MARGIN_MIN_ENSEMBLE_SIZE {
            let combined = (f(e.se_mean).powi(2) + f(e.se_var).powi(2)).sqrt();
            let margin = f(e.p_var) - f(e.p_mean);
            out.push(TheoryAssertion {
                name: format!("misrank_margin_n{n}"),
                pass: margin >= SE_MULTIPLIER * combined,
                detail: format!(
                    "margin={margin:.6} >= {SE_MULTIPLIER}*combined_se={:.6}",
                    SE_MULTIPLIER * combined
                ),
            });
        }
        let bound = f(row.theory.bound_mean);
        if bound <= 1.0 {
            out.push(TheoryAssertion {
                name: format!("lemma_bound_n{n}"),
                pass: f(e.p_mean) <= bound + SE_MULTIPLIER * f(e.se_mean),
                detail: format!(
                    "p_mean={:.6} <= bound_mean={bound:.6} + {SE_MULTIPLIER}*se",
                    f(e.p_mean)
                ),
            });
        } else {
            out.push(TheoryAssertion {
                name: format!("lemma_bound_n{n}"),
                pass: true,
                detail: format!("bound_mean={bound:.3} > 1 is vacuous"),
            });
        }
    }
    out.push(TheoryAssertion {
        name: "corollary_agreement".to_owned(),
        pass: f(corollary.agreement) >= AGREEMENT_THRESHOLD,
        detail: format!(
            "agreement={:.6} >= {AGREEMENT_THRESHOLD} at n={}",
            f(corollary.agreement),
            corollary.ensemble_size
        ),
    });
    if rows.len() >= 2 {
        let first = &rows[0].estimate;
        let last = &rows[rows.len() - 1].estimate;
        out.push(TheoryAssertion {
            name: "p_mean_decay".to_owned(),
            pass: last.p_mean <= first.p_mean,
            detail: format!(
                "p_mean(n={})={:.6} <= p_mean(n={})={:.6}",
                last.ensemble_size,
                f(last.p_mean),
                first.ensemble_size,
                f(first.p_mean)
            ),
        });
    }
    out
}

impl<F: Real> TheoryReport<F> {
    /// One CSV row per ensemble size in the grid.
    pub fn write_csv(&self, mut writer: impl std::io::Write) -> Result<()> {
        writeln!(
            writer,
            "alpha_i,alpha_j,concentration,tau,n,trials,p_mean,se_mean,p_var,se_var,\
             mc_delta_mean,mc_delta_var,delta_mean,delta_var,bound_mean,bound_var"
        )?;
        for row in &self.rows {
            let e = &row.estimate;
            let t = &row.theory;
            writeln!(
                writer,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.config.alpha_i,
                self.config.alpha_j,
                self.config.concentration,
                self.config.tau,
                e.ensemble_size,
                e.trials,
                e.p_mean.to_decimal(),
                e.se_mean.to_decimal(),
                e.p_var.to_decimal(),
                e.se_var.to_decimal(),
                e.mc_delta_mean.to_decimal(),
                e.mc_delta_var.to_decimal(),
                t.delta_mean.to_decimal(),
                t.delta_var.to_decimal(),
                t.bound_mean.to_decimal(),
                t.bound_var.map(|b| b.to_decimal()).unwrap_or_default(),
            )?;
        }
        Ok(())
    }

    /// `name,pass,detail` rows for the assertion battery.
    pub fn write_assertions_csv(&self, mut writer: impl std::io::Write) -> Result<()> {
        writeln!(writer, "name,pass,detail")?;
        for a in &self.assertions {
            // details contain commas-free text, but quote defensively
            writeln!(writer, "{},{},{:?}", a.name, a.pass, a.detail)?;
        }
        Ok(())
    }
}
