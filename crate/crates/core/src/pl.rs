//! Plackett-Luce likelihood, penalized maximum-likelihood fitting and the
//! diagonal Laplace posterior.
//!
//! A ranking `π` of a subset contributes, for every stage `j` but the last,
//! the log-probability that `π_j` is chosen first among `π_j..π_K`:
//! `u[π_j] - logsumexp(u[π_j..])`. All log-sum-exps are accumulated from the
//! tail of the ranking with a pairwise max shift, so utilities far outside
//! the `exp` range stay finite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RankingObservation, UtilityState};

/// Floor on the curvature used to scale ascent directions.
const CURVATURE_FLOOR: f64 = 1e-8;
/// Backtracking gives up once the step shrinks below this.
const MIN_STEP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 0.1,
            tolerance: 1e-6,
            max_steps: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub state: UtilityState,
    pub final_gradient_norm: f64,
    pub steps_taken: usize,
    pub converged: bool,
    pub neg_log_posterior: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `tail[j] = logsumexp(u[perm[j..]])`.
fn tail_log_sums(u: &[f64], perm: &[usize], tail: &mut Vec<f64>) {
    tail.clear();
    tail.resize(perm.len(), 0.0);
    let mut acc = f64::NEG_INFINITY;
    for j in (0..perm.len()).rev() {
        acc = log_add_exp(u[perm[j]], acc);
        tail[j] = acc;
    }
}

fn check_indices(n: usize, observations: &[RankingObservation]) -> Result<()> {
    observations.iter().try_for_each(|o| o.check_bounds(n))
}

/// Log-probability of a single strongest-first ranking under PL(u).
pub fn ranking_log_prob(u: &[f64], permutation: &[usize]) -> f64 {
    let mut tail = Vec::with_capacity(permutation.len());
    tail_log_sums(u, permutation, &mut tail);
    (0..permutation.len().saturating_sub(1))
        .map(|j| u[permutation[j]] - tail[j])
        .sum()
}

pub fn log_likelihood(u: &[f64], observations: &[RankingObservation]) -> Result<f64> {
    check_indices(u.len(), observations)?;
    Ok(log_likelihood_unchecked(u, observations))
}

fn log_likelihood_unchecked(u: &[f64], observations: &[RankingObservation]) -> f64 {
    let mut tail = Vec::new();
    let mut total = 0.0;
    for obs in observations {
        let perm = &obs.permutation;
        tail_log_sums(u, perm, &mut tail);
        for j in 0..perm.len() - 1 {
            total += u[perm[j]] - tail[j];
        }
    }
    total
}

/// Log-likelihood minus the L2 penalty `(lambda / 2) * |u|^2`.
pub fn log_posterior(u: &[f64], observations: &[RankingObservation], lambda: f64) -> Result<f64> {
    check_indices(u.len(), observations)?;
    Ok(log_posterior_unchecked(u, observations, lambda))
}

fn log_posterior_unchecked(u: &[f64], observations: &[RankingObservation], lambda: f64) -> f64 {
    let sq: f64 = u.iter().map(|x| x * x).sum();
    log_likelihood_unchecked(u, observations) - 0.5 * lambda * sq
}

/// Gradient of the log-likelihood and the diagonal of its negative Hessian,
/// both without the penalty.
fn stage_terms(u: &[f64], observations: &[RankingObservation]) -> (Vec<f64>, Vec<f64>) {
    let mut grad = vec![0.0; u.len()];
    let mut curv = vec![0.0; u.len()];
    let mut tail = Vec::new();
    for obs in observations {
        let perm = &obs.permutation;
        tail_log_sums(u, perm, &mut tail);
        for j in 0..perm.len() - 1 {
            grad[perm[j]] += 1.0;
            for &i in &perm[j..] {
                let w = (u[i] - tail[j]).exp();
                grad[i] -= w;
                curv[i] += w * (1.0 - w);
            }
        }
    }
    (grad, curv)
}

/// Gradient of the penalized log-likelihood.
pub fn gradient(u: &[f64], observations: &[RankingObservation], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::structural(format!("lambda must be non-negative, got {lambda}")));
    }
    check_indices(u.len(), observations)?;
    let (mut grad, _) = stage_terms(u, observations);
    for (g, x) in grad.iter_mut().zip(u) {
        *g -= lambda * x;
    }
    Ok(grad)
}

/// Diagonal Laplace variances `1 / H_ii` of the penalized posterior at `u`.
pub fn laplace_variances(u: &[f64], observations: &[RankingObservation], lambda: f64) -> Result<Vec<f64>> {
    check_indices(u.len(), observations)?;
    let (_, curv) = stage_terms(u, observations);
    curv.into_iter()
        .enumerate()
        .map(|(i, h)| {
            let h = h + lambda;
            if h > 0.0 {
                Ok(1.0 / h)
            } else {
                Err(Error::structural(format!(
                    "candidate {i} has zero curvature (never observed and lambda = 0)"
                )))
            }
        })
        .collect()
}

pub fn recenter(u: &mut [f64]) {
    if u.is_empty() {
        return;
    }
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|x| *x -= mean);
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Maximizes the penalized PL log-likelihood over `n` utilities.
///
/// Ascent runs along the gradient scaled by the inverse diagonal curvature,
/// starting each step at length 1.0 and halving while the objective would
/// decrease. Every iterate is re-centered to sum to zero, which leaves the
/// likelihood unchanged and never increases the penalty.
pub fn fit(
    observations: &[RankingObservation],
    n: usize,
    init: Option<&[f64]>,
    options: FitOptions,
) -> Result<FitReport> {
    let FitOptions {
        lambda,
        tolerance,
        max_steps,
    } = options;
    if !(lambda >= 0.0) {
        return Err(Error::structural(format!("lambda must be non-negative, got {lambda}")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::structural("fit tolerance must be positive"));
    }
    check_indices(n, observations)?;
    let mut u = match init {
        Some(init) if init.len() != n => {
            return Err(Error::structural(format!(
                "initial vector has length {}, expected {n}",
                init.len()
            )))
        }
        Some(init) => init.to_vec(),
        None => vec![0.0; n],
    };
    recenter(&mut u);

    let mut value = log_posterior_unchecked(&u, observations, lambda);
    if !value.is_finite() {
        return Err(Error::NumericalDivergence { step: 0 });
    }

    let mut steps = 0;
    let mut grad_norm;
    let mut candidate = vec![0.0; n];
    loop {
        let (mut grad, curv) = stage_terms(&u, observations);
        for (g, x) in grad.iter_mut().zip(&u) {
            *g -= lambda * x;
        }
        grad_norm = inf_norm(&grad);
        if grad_norm <= tolerance || steps >= max_steps {
            break;
        }
        steps += 1;

        let direction: Vec<f64> = grad
            .iter()
            .zip(&curv)
            .map(|(g, h)| g / (h + lambda).max(CURVATURE_FLOOR))
            .collect();
        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            for ((c, x), d) in candidate.iter_mut().zip(&u).zip(&direction) {
                *c = x + step * d;
            }
            recenter(&mut candidate);
            let next = log_posterior_unchecked(&candidate, observations, lambda);
            if next.is_nan() || next == f64::INFINITY {
                return Err(Error::NumericalDivergence { step: steps });
            }
            if next >= value {
                std::mem::swap(&mut u, &mut candidate);
                value = next;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable improvement left along the ascent direction.
            break;
        }
    }

    let sigma2 = laplace_variances(&u, observations, lambda)?;
    Ok(FitReport {
        state: UtilityState {
            iteration: observations.len() as u64,
            u,
            sigma2,
            n_observations: observations.len() as u64,
        },
        final_gradient_norm: grad_norm,
        steps_taken: steps,
        converged: grad_norm <= tolerance,
        neg_log_posterior: -value,
    })
}

/// Draws a strongest-first ranking of `subset` from PL(beta * u).
///
/// An infinite `beta` returns the descending argsort (ties by index);
/// `beta = 0` is uniform over permutations.
pub fn sample_ranking<R: Rng + ?Sized>(u: &[f64], subset: &[usize], beta: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(beta >= 0.0) {
        return Err(Error::structural(format!("beta must be non-negative, got {beta}")));
    }
    if subset.len() < 2 {
        return Err(Error::structural("subset needs at least 2 items"));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= u.len()) {
        return Err(Error::structural(format!("index {i} out of range for {} items", u.len())));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::structural("duplicate index in subset"));
    }

    if beta.is_infinite() {
        let mut order = subset.to_vec();
        order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
        return Ok(order);
    }

    let mut remaining = subset.to_vec();
    let mut out = Vec::with_capacity(subset.len());
    let mut weights = Vec::with_capacity(subset.len());
    while remaining.len() > 1 {
        let top = remaining.iter().map(|&i| beta * u[i]).fold(f64::NEG_INFINITY, f64::max);
        weights.clear();
        weights.extend(remaining.iter().map(|&i| (beta * u[i] - top).exp()));
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, w) in weights.iter().enumerate() {
            if r < *w {
                pick = pos;
                break;
            }
            r -= w;
        }
        out.push(remaining.remove(pick));
    }
    out.push(remaining[0]);
    Ok(out)
}
