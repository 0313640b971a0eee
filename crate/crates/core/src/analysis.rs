//! Probability machinery for one gradient coordinate under majority vote.
//!
//! `X_m = 1` when worker `m`'s delivered sign disagrees with the true
//! gradient sign; `Z = sum_m X_m` is Poisson-binomial and the vote is correct
//! when fewer than half the workers are wrong.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sign_codec::{majority_vote, GradientVector, SignVector};

/// Per-worker probabilities `P(X_m = 1)` for one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignAgreementModel {
    p_wrong: Vec<f64>,
}

impl SignAgreementModel {
    pub fn new(p_wrong: Vec<f64>) -> Result<Self> {
        if p_wrong.is_empty() {
            return Err(Error::invalid("at least one worker is required"));
        }
        if let Some(&p) = p_wrong.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange {
                what: "P(X_m = 1)",
                value: p,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self { p_wrong })
    }

    pub fn num_workers(&self) -> usize {
        self.p_wrong.len()
    }

    pub fn p_wrong(&self) -> &[f64] {
        &self.p_wrong
    }

    /// Full pmf of `Z` by sequential convolution, `O(M^2)`.
    pub fn wrong_count_pmf(&self) -> Vec<f64> {
        let mut pmf = Vec::with_capacity(self.p_wrong.len() + 1);
        pmf.push(1.0);
        for &p in &self.p_wrong {
            pmf.push(0.0);
            for k in (1..pmf.len()).rev() {
                pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
            }
            pmf[0] *= 1.0 - p;
        }
        pmf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentBoundParams {
    /// Smoothness constant `L`.
    pub smoothness: f64,
    pub eta: f64,
    pub dim: usize,
}

impl DescentBoundParams {
    pub fn new(smoothness: f64, eta: f64, dim: usize) -> Result<Self> {
        if !(smoothness.is_finite() && smoothness >= 0.0) {
            return Err(Error::invalid(format!("L must be >= 0, got {smoothness}")));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {eta}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Ok(Self {
            smoothness,
            eta,
            dim,
        })
    }
}

/// `P(X_m = 1)` when the local sign agrees with the truth with probability
/// `p_agree` and the packet is flipped with probability `p_out`.
pub fn wrong_sign_probability(p_agree: f64, p_out: f64) -> f64 {
    p_agree * p_out + (1.0 - p_agree) * (1.0 - p_out)
}

/// `E[Z] = sum_m P(X_m = 1)`.
pub fn expected_wrong_count(model: &SignAgreementModel) -> f64 {
    model.p_wrong.iter().sum()
}

/// Exact `P(Z < M/2)`.
pub fn poisson_binomial_correct_prob(model: &SignAgreementModel) -> f64 {
    let m = model.num_workers();
    model
        .wrong_count_pmf()
        .iter()
        .enumerate()
        .take_while(|(k, _)| 2 * k < m)
        .map(|(_, p)| p)
        .sum()
}

/// Exact probability that the vote returns the true sign, counting an even
/// split as correct when the true sign is `+1` (the tie rule).
pub fn vote_correct_probability(model: &SignAgreementModel, truth_positive: bool) -> f64 {
    let m = model.num_workers();
    let strict = poisson_binomial_correct_prob(model);
    if truth_positive && m.is_multiple_of(2) {
        strict + model.wrong_count_pmf()[m / 2]
    } else {
        strict
    }
}

/// Markov lower bound on `P(Z < M/2)`: `(M - 2 E[Z]) / M`.
pub fn markov_lower_bound(model: &SignAgreementModel) -> f64 {
    let m = model.num_workers() as f64;
    (m - 2.0 * expected_wrong_count(model)) / m
}

/// One-step upper bound on `E[F(w')]` after a sign-descent step:
/// `F + eta ||g||_1 + L eta^2 d / 2 - 2 eta sum_i |g_i| P(correct_i)`.
pub fn one_step_descent_bound(
    f_now: f64,
    grad: &GradientVector,
    correct_probs: &[f64],
    params: &DescentBoundParams,
) -> Result<f64> {
    if grad.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            actual: grad.dim(),
        });
    }
    if correct_probs.len() != grad.dim() {
        return Err(Error::DimensionMismatch {
            expected: grad.dim(),
            actual: correct_probs.len(),
        });
    }
    let eta = params.eta;
    let weighted: f64 = grad
        .as_slice()
        .iter()
        .zip(correct_probs)
        .map(|(g, p)| g.abs() * p)
        .sum();
    Ok(
        f_now + eta * grad.l1_norm() + 0.5 * params.smoothness * eta * eta * params.dim as f64
            - 2.0 * eta * weighted,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrongVoteEstimate {
    /// `P(X_m = 1)` per worker.
    pub p_wrong: Vec<f64>,
    /// `M/2 - b M |mean gradient|`.
    pub expected_wrong: f64,
}

/// Expected number of wrong workers for one coordinate under stochastic sign
/// pre-processing, where `grads[m]` is worker `m`'s gradient entry.
///
/// Requires `b |grads[m]| <= 1/2 - p_out[m]` for every worker, so that no
/// flip probability is clamped.
pub fn expected_wrong_votes(grads: &[f64], b: f64, p_out: &[f64]) -> Result<WrongVoteEstimate> {
    if grads.is_empty() {
        return Err(Error::invalid("at least one worker is required"));
    }
    if grads.len() != p_out.len() {
        return Err(Error::DimensionMismatch {
            expected: grads.len(),
            actual: p_out.len(),
        });
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::invalid(format!("b must be >= 0, got {b}")));
    }
    for (m, (&g, &q)) in grads.iter().zip(p_out).enumerate() {
        if !(0.0..0.5).contains(&q) {
            return Err(Error::OutOfRange {
                what: "p_out",
                value: q,
                lo: 0.0,
                hi: 0.5,
            });
        }
        if b * g.abs() > 0.5 - q {
            return Err(Error::ClampedRegime(format!(
                "worker {m}: b|g| = {} exceeds 1/2 - p_out = {}",
                b * g.abs(),
                0.5 - q
            )));
        }
    }
    let m = grads.len() as f64;
    let mean = grads.iter().sum::<f64>() / m;
    // Tie rule: a zero mean counts as a positive true sign.
    let truth = if mean < 0.0 { -1.0 } else { 1.0 };
    let p_wrong = grads.iter().map(|&g| 0.5 - truth * b * g).collect();
    Ok(WrongVoteEstimate {
        p_wrong,
        expected_wrong: 0.5 * m - b * m * mean.abs(),
    })
}

/// `P(Z < 3/2)` for three workers with `P(X_m = 1) = [1/2 + b, 1/2 + b, 1/2 - 3b]`:
/// `1/2 + b/2 - 6 b^3`, valid for `0 <= b <= 1/sqrt(12)`.
pub fn three_worker_vote_correct(b: f64) -> Result<f64> {
    let hi = 1.0 / 12f64.sqrt();
    if !(0.0..=hi).contains(&b) {
        return Err(Error::OutOfRange {
            what: "b",
            value: b,
            lo: 0.0,
            hi,
        });
    }
    Ok(0.5 + 0.5 * b - 6.0 * b * b * b)
}

/// Majority vote of local signs against the sign of the mean gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrongAggregation {
    pub gradients: Vec<f64>,
    pub local_signs: Vec<i8>,
    pub vote: i8,
    pub true_sign: i8,
    pub mismatch: bool,
}

/// Workers `1..M-1` hold gradient `-1` and worker `M` holds `M`: the mean is
/// positive but the vote is negative for every `M >= 3`.
pub fn skewed_mean_aggregation(num_workers: usize) -> Result<WrongAggregation> {
    if num_workers < 2 {
        return Err(Error::invalid(
            "the construction needs at least two workers",
        ));
    }
    let m = num_workers;
    let gradients: Vec<f64> = (0..m)
        .map(|i| if i + 1 < m { -1.0 } else { m as f64 })
        .collect();
    let packets = gradients
        .iter()
        .map(|&g| SignVector::new(vec![if g < 0.0 { -1 } else { 1 }]))
        .collect::<Result<Vec<_>>>()?;
    let vote = majority_vote(&packets)?.as_slice()[0];
    let mean = gradients.iter().sum::<f64>() / m as f64;
    let true_sign = if mean < 0.0 { -1 } else { 1 };
    Ok(WrongAggregation {
        local_signs: packets.iter().map(|p| p.as_slice()[0]).collect(),
        gradients,
        vote,
        true_sign,
        mismatch: vote != true_sign,
    })
}
