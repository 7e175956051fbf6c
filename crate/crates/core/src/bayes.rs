//! Parametric empirical Bayes for the two conjugate pairs used to score links.
//!
//! Completion data from custom artist stations is modelled as binomial with
//! a per-station beta prior; spin data from live stations is modelled as
//! Poisson with per-track exposure and a per-station gamma prior. Priors are
//! fitted by maximizing the marginal likelihood of the station's
//! observations (beta-binomial and gamma-Poisson respectively), then each
//! observation is updated to its conjugate posterior and scored by a lower
//! posterior quantile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::special::{beta_reg, digamma, gamma_p, ln_beta, ln_gamma, trigamma};

/// Lower and upper clamp applied to every fitted prior parameter.
pub const PARAM_MIN: f64 = 1e-3;
pub const PARAM_MAX: f64 = 1e6;

const GRAD_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-10;
const MAX_FIT_ITER: usize = 500;
const QUANTILE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct BinomialObs {
    pub child: EntityId,
    pub trials: u64,
    pub successes: u64,
}

impl BinomialObs {
    pub fn new(child: EntityId, trials: u64, successes: u64) -> Result<Self> {
        if successes > trials {
            return Err(Error::InvalidParameter(format!(
                "{child}: successes {successes} exceed trials {trials}"
            )));
        }
        Ok(BinomialObs {
            child,
            trials,
            successes,
        })
    }

    pub fn rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.successes as f64 / self.trials as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonObs {
    pub child: EntityId,
    pub count: u64,
    /// Distinct days the track was presented; at least one.
    pub exposure: u64,
}

impl PoissonObs {
    pub fn new(child: EntityId, count: u64, exposure: u64) -> Result<Self> {
        if exposure == 0 {
            return Err(Error::InvalidParameter(format!("{child}: exposure must be at least 1 day")));
        }
        Ok(PoissonObs {
            child,
            count,
            exposure,
        })
    }

    pub fn rate(&self) -> f64 {
        self.count as f64 / self.exposure as f64
    }
}

fn check_positive(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {value}")))
    }
}

fn check_probability(q: f64) -> Result<f64> {
    if q > 0.0 && q < 1.0 {
        Ok(q)
    } else {
        Err(Error::Domain(q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Ok(BetaPrior {
            alpha: check_positive("alpha", alpha)?,
            beta: check_positive("beta", beta)?,
        })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Conjugate update: Beta(α + k, β + n − k).
    pub fn update(&self, obs: &BinomialObs) -> BetaPosterior {
        BetaPosterior {
            alpha: self.alpha + obs.successes as f64,
            beta: self.beta + (obs.trials - obs.successes) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    /// Rate, in days.
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        Ok(GammaPrior {
            shape: check_positive("shape", shape)?,
            rate: check_positive("rate", rate)?,
        })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// Conjugate update: Gamma(α + n, β + d).
    pub fn update(&self, obs: &PoissonObs) -> GammaPosterior {
        GammaPosterior {
            shape: self.shape + obs.count as f64,
            rate: self.rate + obs.exposure as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Ok(BetaPosterior {
            alpha: check_positive("alpha", alpha)?,
            beta: check_positive("beta", beta)?,
        })
    }

    /// Posterior mean α / (α + β).
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        beta_reg(self.alpha, self.beta, x)
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        (self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (-x).ln_1p() - ln_beta(self.alpha, self.beta)
    }

    /// The `q`-quantile, i.e. x with I_x(α, β) = q.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        let q = check_probability(q)?;
        Ok(invert_cdf(
            |x| self.cdf(x),
            |x| self.ln_pdf(x),
            q,
            0.0,
            1.0,
            self.mean(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPosterior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        Ok(GammaPosterior {
            shape: check_positive("shape", shape)?,
            rate: check_positive("rate", rate)?,
        })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn std_dev(&self) -> f64 {
        self.shape.sqrt() / self.rate
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gamma_p(self.shape, self.rate * x)
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln() - self.rate * x - ln_gamma(self.shape)
    }

    /// The `q`-quantile, i.e. x with P(shape, rate·x) = q.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        let q = check_probability(q)?;
        let mut hi = self.mean() + 20.0 * self.std_dev();
        while self.cdf(hi) < q {
            hi *= 2.0;
        }
        Ok(invert_cdf(
            |x| self.cdf(x),
            |x| self.ln_pdf(x),
            q,
            0.0,
            hi,
            self.mean().min(hi * 0.5),
        ))
    }
}

/// Safeguarded Newton iteration for `cdf(x) = q` on the bracket (lo, hi).
///
/// Newton steps that leave the current bracket are replaced by bisection.
/// Returns the iterate with the smallest CDF residual.
fn invert_cdf(
    cdf: impl Fn(f64) -> f64,
    ln_pdf: impl Fn(f64) -> f64,
    q: f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
) -> f64 {
    let mut x = if start > lo && start < hi {
        start
    } else {
        0.5 * (lo + hi)
    };
    let mut best = (f64::INFINITY, x);
    for _ in 0..400 {
        let residual = cdf(x) - q;
        if residual.abs() < best.0 {
            best = (residual.abs(), x);
        }
        if residual.abs() < QUANTILE_TOL {
            break;
        }
        if residual < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        let newton = x - residual / ln_pdf(x).exp();
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    best.1
}

/// Beta-binomial marginal log-likelihood, Σ [ln B(α+k, β+n−k) − ln B(α, β)].
pub fn beta_binomial_log_likelihood(obs: &[BinomialObs], alpha: f64, beta: f64) -> f64 {
    let base = ln_beta(alpha, beta);
    obs.iter()
        .map(|o| {
            let k = o.successes as f64;
            let n = o.trials as f64;
            ln_beta(alpha + k, beta + n - k) - base
        })
        .sum()
}

/// Gradient of [`beta_binomial_log_likelihood`] with respect to (α, β).
pub fn beta_binomial_gradient(obs: &[BinomialObs], alpha: f64, beta: f64) -> [f64; 2] {
    beta_binomial_derivatives(obs, alpha, beta).0
}

fn beta_binomial_derivatives(obs: &[BinomialObs], alpha: f64, beta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let (da0, db0, dab0) = (digamma(alpha), digamma(beta), digamma(alpha + beta));
    let (ta0, tb0, tab0) = (trigamma(alpha), trigamma(beta), trigamma(alpha + beta));
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for o in obs {
        let k = o.successes as f64;
        let n = o.trials as f64;
        let dab = digamma(alpha + beta + n) - dab0;
        let tab = trigamma(alpha + beta + n) - tab0;
        g[0] += digamma(alpha + k) - da0 - dab;
        g[1] += digamma(beta + n - k) - db0 - dab;
        h[0][0] += trigamma(alpha + k) - ta0 - tab;
        h[1][1] += trigamma(beta + n - k) - tb0 - tab;
        h[0][1] -= tab;
    }
    h[1][0] = h[0][1];
    (g, h)
}

/// Gamma-Poisson marginal log-likelihood with per-observation exposure,
/// Σ [ln Γ(α+n) − ln Γ(α) − ln n! + α ln β + n ln d − (α+n) ln(β+d)].
pub fn gamma_poisson_log_likelihood(obs: &[PoissonObs], shape: f64, rate: f64) -> f64 {
    let base = ln_gamma(shape);
    let ln_rate = rate.ln();
    obs.iter()
        .map(|o| {
            let n = o.count as f64;
            let d = o.exposure as f64;
            ln_gamma(shape + n) - base - ln_gamma(n + 1.0) + shape * ln_rate + n * d.ln()
                - (shape + n) * (rate + d).ln()
        })
        .sum()
}

/// Gradient of [`gamma_poisson_log_likelihood`] with respect to (α, β).
pub fn gamma_poisson_gradient(obs: &[PoissonObs], shape: f64, rate: f64) -> [f64; 2] {
    gamma_poisson_derivatives(obs, shape, rate).0
}

fn gamma_poisson_derivatives(obs: &[PoissonObs], shape: f64, rate: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let (d0, t0, ln_rate) = (digamma(shape), trigamma(shape), rate.ln());
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for o in obs {
        let n = o.count as f64;
        let bd = rate + o.exposure as f64;
        g[0] += digamma(shape + n) - d0 + ln_rate - bd.ln();
        g[1] += shape / rate - (shape + n) / bd;
        h[0][0] += trigamma(shape + n) - t0;
        h[0][1] += 1.0 / rate - 1.0 / bd;
        h[1][1] += (shape + n) / (bd * bd) - shape / (rate * rate);
    }
    h[1][0] = h[0][1];
    (g, h)
}

/// Box-constrained maximization of a smooth two-parameter objective over
/// [PARAM_MIN, PARAM_MAX]², working in log-parameter space.
///
/// Newton steps are taken when the log-space Hessian is negative definite,
/// gradient steps otherwise, each followed by Armijo backtracking.
fn maximize_positive(
    value: impl Fn([f64; 2]) -> f64,
    derivatives: impl Fn([f64; 2]) -> ([f64; 2], [[f64; 2]; 2]),
    init: [f64; 2],
) -> Result<[f64; 2]> {
    let (lo, hi) = (PARAM_MIN.ln(), PARAM_MAX.ln());
    let to_theta = |u: [f64; 2]| [u[0].exp(), u[1].exp()];
    let mut u = [init[0].ln().clamp(lo, hi), init[1].ln().clamp(lo, hi)];
    let mut f = value(to_theta(u));
    if !f.is_finite() {
        return Err(Error::fit("non-finite likelihood at the initial point"));
    }
    for _ in 0..MAX_FIT_ITER {
        let theta = to_theta(u);
        let (g, h) = derivatives(theta);
        // chain rule into log space
        let gu = [theta[0] * g[0], theta[1] * g[1]];
        let mut hu = [
            [theta[0] * theta[0] * h[0][0] + gu[0], theta[0] * theta[1] * h[0][1]],
            [theta[0] * theta[1] * h[1][0], theta[1] * theta[1] * h[1][1] + gu[1]],
        ];
        // coordinates pinned at a bound with the gradient pushing outward
        let pinned = [0, 1].map(|i| (u[i] <= lo && gu[i] < 0.0) || (u[i] >= hi && gu[i] > 0.0));
        let free_grad = [0, 1].map(|i| if pinned[i] { 0.0 } else { g[i] });
        if free_grad.iter().all(|v| v.abs() < GRAD_TOL) {
            return Ok(theta);
        }
        for i in 0..2 {
            if pinned[i] {
                hu[i] = [0.0, 0.0];
                hu[0][i] = 0.0;
                hu[1][i] = 0.0;
                hu[i][i] = -1.0;
            }
        }
        let gu = [0, 1].map(|i| if pinned[i] { 0.0 } else { gu[i] });
        let det = hu[0][0] * hu[1][1] - hu[0][1] * hu[1][0];
        let mut dir = if hu[0][0] < 0.0 && det > 0.0 {
            [
                -(hu[1][1] * gu[0] - hu[0][1] * gu[1]) / det,
                -(-hu[1][0] * gu[0] + hu[0][0] * gu[1]) / det,
            ]
        } else {
            let norm = gu[0].abs().max(gu[1].abs());
            [gu[0] / norm, gu[1] / norm]
        };
        let len = dir[0].abs().max(dir[1].abs());
        if len > 2.0 {
            dir = [2.0 * dir[0] / len, 2.0 * dir[1] / len];
        }
        let slope = (gu[0] * dir[0] + gu[1] * dir[1]).max(0.0);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let cand = [(u[0] + t * dir[0]).clamp(lo, hi), (u[1] + t * dir[1]).clamp(lo, hi)];
            let fc = value(to_theta(cand));
            if fc.is_finite() && fc >= f + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // no ascent possible along the search direction
            return Ok(theta);
        };
        let moved = (0..2)
            .map(|i| ((cand[i] - u[i]).exp() - 1.0).abs())
            .fold(0.0, f64::max);
        u = cand;
        f = fc;
        if moved < STEP_TOL {
            break;
        }
    }
    Ok(to_theta(u))
}

fn distinct_rates<T>(obs: &[T], key: impl Fn(&T) -> (u64, u64)) -> bool {
    // exact comparison of num/den by cross multiplication
    let Some(first) = obs.first().map(&key) else {
        return false;
    };
    obs.iter().skip(1).any(|o| {
        let (n, d) = key(o);
        (n as u128) * (first.1 as u128) != (first.0 as u128) * (d as u128)
    })
}

/// Method-of-moments beta prior from the empirical completion rates, or
/// `None` when fewer than two observations have trials or the mean rate is
/// 0 or 1.
pub fn beta_moment_estimate(obs: &[BinomialObs]) -> Option<BetaPrior> {
    let rates: Vec<f64> = obs.iter().filter_map(BinomialObs::rate).collect();
    if rates.len() < 2 {
        return None;
    }
    let m = rates.iter().sum::<f64>() / rates.len() as f64;
    if m <= 0.0 || m >= 1.0 {
        return None;
    }
    let v = rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rates.len() as f64;
    if v <= 0.0 {
        return None;
    }
    let mut concentration = m * (1.0 - m) / v - 1.0;
    if !(concentration.is_finite() && concentration > 0.0) {
        concentration = 1.0;
    }
    Some(BetaPrior {
        alpha: (m * concentration).clamp(PARAM_MIN, PARAM_MAX),
        beta: ((1.0 - m) * concentration).clamp(PARAM_MIN, PARAM_MAX),
    })
}

/// Method-of-moments gamma prior from the empirical rates n/d, correcting
/// the rate variance for Poisson noise.
pub fn gamma_moment_estimate(obs: &[PoissonObs]) -> Option<GammaPrior> {
    if obs.len() < 2 {
        return None;
    }
    let len = obs.len() as f64;
    let m = obs.iter().map(PoissonObs::rate).sum::<f64>() / len;
    if m <= 0.0 {
        return None;
    }
    let v = obs.iter().map(|o| (o.rate() - m).powi(2)).sum::<f64>() / len;
    if v <= 0.0 {
        return None;
    }
    let mean_inv_exposure = obs.iter().map(|o| 1.0 / o.exposure as f64).sum::<f64>() / len;
    let mut var_rate = v - m * mean_inv_exposure;
    if !(var_rate.is_finite() && var_rate > 0.0) {
        var_rate = m * m;
    }
    Some(GammaPrior {
        shape: (m * m / var_rate).clamp(PARAM_MIN, PARAM_MAX),
        rate: (m / var_rate).clamp(PARAM_MIN, PARAM_MAX),
    })
}

/// Fits a beta prior by maximizing the beta-binomial marginal likelihood.
///
/// Observations with zero trials carry no information and are ignored.
/// Fails when fewer than two informative observations remain or all of
/// them share the same completion rate.
pub fn fit_beta_prior(obs: &[BinomialObs]) -> Result<BetaPrior> {
    let usable: Vec<BinomialObs> = obs.iter().filter(|o| o.trials > 0).cloned().collect();
    if usable.len() < 2 {
        return Err(Error::fit(format!(
            "need at least 2 observations with trials, got {}",
            usable.len()
        )));
    }
    if !distinct_rates(&usable, |o| (o.successes, o.trials)) {
        return Err(Error::fit("all completion rates are identical"));
    }
    let init = beta_moment_estimate(&usable).ok_or_else(|| Error::fit("moment estimate undefined"))?;
    let [alpha, beta] = maximize_positive(
        |[a, b]| beta_binomial_log_likelihood(&usable, a, b),
        |[a, b]| beta_binomial_derivatives(&usable, a, b),
        [init.alpha, init.beta],
    )?;
    BetaPrior::new(alpha.clamp(PARAM_MIN, PARAM_MAX), beta.clamp(PARAM_MIN, PARAM_MAX))
}

/// Fits a gamma prior by maximizing the gamma-Poisson marginal likelihood.
pub fn fit_gamma_prior(obs: &[PoissonObs]) -> Result<GammaPrior> {
    if obs.len() < 2 {
        return Err(Error::fit(format!("need at least 2 observations, got {}", obs.len())));
    }
    if !distinct_rates(obs, |o| (o.count, o.exposure)) {
        return Err(Error::fit("all spin rates are identical"));
    }
    let init = gamma_moment_estimate(obs).ok_or_else(|| Error::fit("moment estimate undefined"))?;
    let [shape, rate] = maximize_positive(
        |[a, b]| gamma_poisson_log_likelihood(obs, a, b),
        |[a, b]| gamma_poisson_derivatives(obs, a, b),
        [init.shape, init.rate],
    )?;
    GammaPrior::new(shape.clamp(PARAM_MIN, PARAM_MAX), rate.clamp(PARAM_MIN, PARAM_MAX))
}

/// Where a station's prior came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    MaximumLikelihood,
    MethodOfMoments,
    Default,
}

/// [`fit_beta_prior`], falling back to the moment estimate and then to
/// Beta(1, 1).
pub fn beta_prior_or_fallback(obs: &[BinomialObs]) -> (BetaPrior, PriorSource) {
    match fit_beta_prior(obs) {
        Ok(prior) => (prior, PriorSource::MaximumLikelihood),
        Err(_) => match beta_moment_estimate(obs) {
            Some(prior) => (prior, PriorSource::MethodOfMoments),
            None => (BetaPrior { alpha: 1.0, beta: 1.0 }, PriorSource::Default),
        },
    }
}

/// [`fit_gamma_prior`], falling back to the moment estimate and then to
/// Gamma(1, mean exposure).
pub fn gamma_prior_or_fallback(obs: &[PoissonObs]) -> (GammaPrior, PriorSource) {
    match fit_gamma_prior(obs) {
        Ok(prior) => (prior, PriorSource::MaximumLikelihood),
        Err(_) => match gamma_moment_estimate(obs) {
            Some(prior) => (prior, PriorSource::MethodOfMoments),
            None => {
                let mean_exposure = if obs.is_empty() {
                    1.0
                } else {
                    obs.iter().map(|o| o.exposure as f64).sum::<f64>() / obs.len() as f64
                };
                (
                    GammaPrior {
                        shape: 1.0,
                        rate: mean_exposure,
                    },
                    PriorSource::Default,
                )
            }
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Beta,
    Gamma,
}

/// A fitted prior of either family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Beta(BetaPrior),
    Gamma(GammaPrior),
}

impl Prior {
    pub fn model(&self) -> ModelKind {
        match self {
            Prior::Beta(_) => ModelKind::Beta,
            Prior::Gamma(_) => ModelKind::Gamma,
        }
    }

    /// The two parameters as (α, β): (alpha, beta) or (shape, rate).
    pub fn params(&self) -> (f64, f64) {
        match *self {
            Prior::Beta(p) => (p.alpha, p.beta),
            Prior::Gamma(p) => (p.shape, p.rate),
        }
    }
}

/// One line of the fitted-priors JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub station: EntityId,
    pub model: ModelKind,
    pub alpha: f64,
    pub beta: f64,
    pub n_obs: usize,
}

impl PriorRecord {
    pub fn new(station: EntityId, prior: Prior, n_obs: usize) -> Self {
        let (alpha, beta) = prior.params();
        PriorRecord {
            station,
            model: prior.model(),
            alpha,
            beta,
            n_obs,
        }
    }

    pub fn prior(&self) -> Result<Prior> {
        Ok(match self.model {
            ModelKind::Beta => Prior::Beta(BetaPrior::new(self.alpha, self.beta)?),
            ModelKind::Gamma => Prior::Gamma(GammaPrior::new(self.alpha, self.beta)?),
        })
    }
}

/// Observations of one station feeding a single prior fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Binomial(Vec<BinomialObs>),
    Poisson(Vec<PoissonObs>),
}

impl Observations {
    pub fn model(&self) -> ModelKind {
        match self {
            Observations::Binomial(_) => ModelKind::Beta,
            Observations::Poisson(_) => ModelKind::Gamma,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Observations::Binomial(v) => v.len(),
            Observations::Poisson(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGroup {
    pub station: EntityId,
    pub observations: Observations,
}

impl ObservationGroup {
    /// Fits the group's prior, applying the fallback chain on failure.
    pub fn fit_prior(&self) -> (Prior, PriorSource) {
        match &self.observations {
            Observations::Binomial(obs) => {
                let (prior, source) = beta_prior_or_fallback(obs);
                (Prior::Beta(prior), source)
            }
            Observations::Poisson(obs) => {
                let (prior, source) = gamma_prior_or_fallback(obs);
                (Prior::Gamma(prior), source)
            }
        }
    }

    /// Whether a maximum-likelihood fit is possible at all (two or more
    /// informative observations).
    pub fn is_fittable(&self) -> bool {
        match &self.observations {
            Observations::Binomial(obs) => obs.iter().filter(|o| o.trials > 0).count() >= 2,
            Observations::Poisson(obs) => obs.len() >= 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(i: usize) -> EntityId {
        EntityId::new(EntityKind::Track, i.to_string()).unwrap()
    }

    fn binom(n: u64, k: u64) -> BinomialObs {
        BinomialObs::new(track(0), n, k).unwrap()
    }

    fn pois(n: u64, d: u64) -> PoissonObs {
        PoissonObs::new(track(0), n, d).unwrap()
    }

    #[test]
    fn beta_update_examples() {
        let post = BetaPrior::new(2.0, 2.0).unwrap().update(&binom(10, 3));
        assert_eq!((post.alpha, post.beta), (5.0, 9.0));
        let post = BetaPrior::new(1.0, 1.0).unwrap().update(&binom(0, 0));
        assert_eq!((post.alpha, post.beta), (1.0, 1.0));
        let post = BetaPrior::new(0.5, 0.5).unwrap().update(&binom(7, 7));
        assert_eq!((post.alpha, post.beta), (7.5, 0.5));
    }

    #[test]
    fn gamma_update_examples() {
        let post = GammaPrior::new(3.0, 2.0).unwrap().update(&pois(5, 4));
        assert_eq!((post.shape, post.rate), (8.0, 6.0));
        let post = GammaPrior::new(1.0, 1.0).unwrap().update(&pois(0, 1));
        assert_eq!((post.shape, post.rate), (1.0, 2.0));
        let post = GammaPrior::new(2.0, 10.0).unwrap().update(&pois(100, 30));
        assert_eq!((post.shape, post.rate), (102.0, 40.0));
    }

    #[test]
    fn invalid_observations_rejected() {
        assert!(BinomialObs::new(track(0), 3, 4).is_err());
        assert!(PoissonObs::new(track(0), 3, 0).is_err());
        assert!(BetaPrior::new(0.0, 1.0).is_err());
        assert!(GammaPrior::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn posterior_means() {
        assert_eq!(BetaPosterior::new(1.0, 1.0).unwrap().mean(), 0.5);
        assert_relative_eq!(BetaPosterior::new(5.0, 9.0).unwrap().mean(), 5.0 / 14.0, epsilon = 1e-15);
        let post = BetaPrior::new(2.0, 2.0).unwrap().update(&binom(10, 3));
        assert_relative_eq!(post.mean(), 0.357_142_857_142_857_1, epsilon = 1e-15);
        assert!(post.mean() > 0.3 && post.mean() < 0.5);
    }

    #[test]
    fn quantile_closed_forms() {
        let q = BetaPosterior::new(1.0, 1.0).unwrap().quantile(0.05).unwrap();
        assert!((q - 0.05).abs() < 1e-10);
        let q = BetaPosterior::new(2.0, 1.0).unwrap().quantile(0.5).unwrap();
        assert!((q - 0.5f64.sqrt()).abs() < 1e-10);
        let q = GammaPosterior::new(1.0, 2.0).unwrap().quantile(0.05).unwrap();
        assert!((q + 0.95f64.ln() / 2.0).abs() < 1e-10);
        assert!((q - 0.025_646_647_0).abs() < 1e-9);
        let q = GammaPosterior::new(1.0, 1.0).unwrap().quantile(1.0 - (-1.0f64).exp()).unwrap();
        assert!((q - 1.0).abs() < 1e-10);
    }

    /// Inverts a CDF obtained by composite trapezoid integration of `pdf`
    /// on a fine grid over [0, upper].
    fn trapezoid_quantile(pdf: impl Fn(f64) -> f64, upper: f64, q: f64) -> f64 {
        let steps = 2_000_000;
        let h = upper / steps as f64;
        let mut acc = 0.0;
        let mut prev = pdf(0.0);
        for i in 1..=steps {
            let x = i as f64 * h;
            let cur = pdf(x);
            let next = acc + 0.5 * h * (prev + cur);
            if next >= q {
                // linear interpolation inside the last panel
                return x - h + h * (q - acc) / (next - acc);
            }
            acc = next;
            prev = cur;
        }
        upper
    }

    #[test]
    fn beta_quantile_matches_integration_oracle() {
        // Beta(5, 9) density: x^4 (1-x)^8 / B(5, 9), B(5, 9) = 4! 8! / 13!
        let b = 24.0 * 40320.0 / 6_227_020_800.0;
        let oracle = trapezoid_quantile(|x| x.powi(4) * (1.0 - x).powi(8) / b, 1.0, 0.05);
        let ours = BetaPosterior::new(5.0, 9.0).unwrap().quantile(0.05).unwrap();
        assert!((ours - oracle).abs() < 1e-7, "{ours} vs {oracle}");
        assert!((ours - 0.165_659_426_715_071_7).abs() < 1e-10, "{ours}");
    }

    #[test]
    fn gamma_quantile_matches_integration_oracle() {
        // Gamma(8, 6) density: 6^8 x^7 e^{-6x} / 7!
        let oracle = trapezoid_quantile(|x| 6f64.powi(8) * x.powi(7) * (-6.0 * x).exp() / 5040.0, 10.0, 0.05);
        let ours = GammaPosterior::new(8.0, 6.0).unwrap().quantile(0.05).unwrap();
        assert!((ours - oracle).abs() < 1e-7, "{ours} vs {oracle}");
        assert!((ours - 0.663_470_464_364_879_2).abs() < 1e-10, "{ours}");
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        let b = BetaPosterior::new(2.0, 3.0).unwrap();
        for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(b.quantile(q), Err(Error::Domain(_))));
        }
        let g = GammaPosterior::new(2.0, 3.0).unwrap();
        assert!(matches!(g.quantile(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            // beta draws keep β ≥ 1: with β < 1 and large α the quantile sits
            // within ~1e-10 of 1, where one ulp of x moves the CDF by > 1e-10
            let a = 10f64.powf(rng.random_range(-0.5..4.0));
            let b = 10f64.powf(rng.random_range(0.0..4.0));
            let beta = BetaPosterior::new(a, b).unwrap();
            let gamma = GammaPosterior::new(a, b).unwrap();
            for q in [0.01, 0.05, 0.5, 0.95, 0.99] {
                let x = beta.quantile(q).unwrap();
                assert!((beta.cdf(x) - q).abs() < 1e-10, "beta({a},{b}) q={q}");
                let x = gamma.quantile(q).unwrap();
                assert!((gamma.cdf(x) - q).abs() < 1e-10, "gamma({a},{b}) q={q}");
            }
        }
    }

    #[test]
    fn quantile_monotonicity() {
        let b = BetaPosterior::new(3.0, 7.0).unwrap();
        let qs = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];
        let xs: Vec<f64> = qs.iter().map(|&q| b.quantile(q).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        let at = |a: f64, bb: f64| BetaPosterior::new(a, bb).unwrap().quantile(0.05).unwrap();
        assert!(at(3.0, 7.0) < at(4.0, 7.0));
        assert!(at(3.0, 7.0) > at(3.0, 8.0));
        let g = GammaPosterior::new(4.0, 2.0).unwrap();
        let xs: Vec<f64> = qs.iter().map(|&q| g.quantile(q).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn evidence_dominance() {
        let prior = BetaPrior::new(2.0, 5.0).unwrap();
        let rate = 0.6;
        let gaps: Vec<f64> = [10u64, 1_000, 1_000_000]
            .iter()
            .map(|&n| {
                let k = (rate * n as f64) as u64;
                let score = prior.update(&binom(n, k)).quantile(0.05).unwrap();
                (score - rate).abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 2e-3);
    }

    #[test]
    fn degenerate_fits_fail() {
        assert!(matches!(fit_beta_prior(&[binom(10, 5), binom(10, 5)]), Err(Error::Fit { .. })));
        assert!(matches!(fit_beta_prior(&[binom(10, 5), binom(20, 10)]), Err(Error::Fit { .. })));
        assert!(matches!(fit_beta_prior(&[binom(10, 5)]), Err(Error::Fit { .. })));
        assert!(matches!(fit_gamma_prior(&[pois(0, 3), pois(0, 9)]), Err(Error::Fit { .. })));
        assert!(matches!(fit_gamma_prior(&[pois(4, 3)]), Err(Error::Fit { .. })));
        let err = fit_gamma_prior(&[pois(4, 3)]).unwrap_err();
        assert!(err.to_string().contains("fallback"));
    }

    #[test]
    fn moment_initializer_is_symmetric() {
        let prior = beta_moment_estimate(&[binom(1, 0), binom(1, 1)]).unwrap();
        assert_eq!(prior.alpha, prior.beta);
        // the fitted optimum stays symmetric too
        let fitted = fit_beta_prior(&[binom(1, 0), binom(1, 1)]).unwrap();
        assert_relative_eq!(fitted.alpha, fitted.beta, max_relative = 1e-9);
    }

    #[test]
    fn fallbacks() {
        let (p, src) = beta_prior_or_fallback(&[binom(10, 5), binom(10, 5)]);
        assert_eq!(src, PriorSource::Default);
        assert_eq!((p.alpha, p.beta), (1.0, 1.0));
        let (p, src) = gamma_prior_or_fallback(&[pois(0, 3), pois(0, 9)]);
        assert_eq!(src, PriorSource::Default);
        assert_eq!((p.shape, p.rate), (1.0, 6.0));
        let (_, src) = gamma_prior_or_fallback(&[pois(1, 3), pois(5, 9), pois(40, 10)]);
        assert_eq!(src, PriorSource::MaximumLikelihood);
    }

    #[test]
    fn fitted_prior_beats_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs: Vec<BinomialObs> = (0..300)
            .map(|i| {
                let n = rng.random_range(5..60);
                let p: f64 = rng.random_range(0.2..0.7);
                let k = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
                BinomialObs::new(track(i), n, k).unwrap()
            })
            .collect();
        let fit = fit_beta_prior(&obs).unwrap();
        let best = beta_binomial_log_likelihood(&obs, fit.alpha, fit.beta);
        for (da, db) in [(1.01, 1.0), (0.99, 1.0), (1.0, 1.01), (1.0, 0.99), (1.01, 1.01)] {
            assert!(beta_binomial_log_likelihood(&obs, fit.alpha * da, fit.beta * db) <= best);
        }
        let g = beta_binomial_gradient(&obs, fit.alpha, fit.beta);
        assert!(g[0].abs() < 1e-5 && g[1].abs() < 1e-5, "{g:?}");
    }

    #[test]
    fn prior_record_json_shape() {
        let station = EntityId::new(EntityKind::LiveStation, "WABC").unwrap();
        let rec = PriorRecord::new(station, Prior::Gamma(GammaPrior::new(3.0, 2.5).unwrap()), 12);
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            line,
            r#"{"station":"live_station:WABC","model":"gamma","alpha":3.0,"beta":2.5,"n_obs":12}"#
        );
        let back: PriorRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.prior().unwrap(), Prior::Gamma(GammaPrior::new(3.0, 2.5).unwrap()));
    }

    proptest! {
        #[test]
        fn beta_shrinkage(a in 0.05f64..50.0, b in 0.05f64..50.0, n in 1u64..5000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).round() as u64;
            let prior = BetaPrior::new(a, b).unwrap();
            let raw = k as f64 / n as f64;
            let post = prior.update(&binom(n, k)).mean();
            let lo = raw.min(prior.mean());
            let hi = raw.max(prior.mean());
            if raw != prior.mean() {
                prop_assert!(post > lo && post < hi, "{post} not in ({lo}, {hi})");
            }
        }

        #[test]
        fn gamma_shrinkage(a in 0.05f64..50.0, b in 0.05f64..50.0, n in 0u64..5000, d in 1u64..183) {
            let prior = GammaPrior::new(a, b).unwrap();
            let raw = n as f64 / d as f64;
            let post = prior.update(&pois(n, d)).mean();
            if raw != prior.mean() {
                prop_assert!(post > raw.min(prior.mean()) && post < raw.max(prior.mean()));
            }
        }
    }
}
