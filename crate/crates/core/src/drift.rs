//! Lyapunov functions for the dominant system and their drifts.
//!
//! The `j`-th Lyapunov function weighs the queues that can block queue `j`:
//!
//! ```text
//! V_j(Q) = Q_j / (v_j p_j) + sum_{k < j} Q_k / v_k
//! ```
//!
//! Its one-step drift has a closed form that factors through the busy
//! signature: with `c_j` the identity-ordering condition value
//! `lambda_j/(v_j p_j) + sum_{k<j} lambda_k/v_k`,
//!
//! ```text
//! E[V_j(Q') - V_j(Q)] = c_j - 1            if Q_j >= 1
//!                     = c_j - (1 - u_j(Q)) if Q_j = 0
//! ```
//!
//! The busy-state form is constant because the weighted expected departures
//! from queues `1..=j` sum to exactly 1 whenever queue `j` is loaded
//! ([`weighted_departure_expectation`]). Everything here is cross-checked
//! against [`exact_one_step_drift`], which enumerates the finite joint
//! support of one slot's inputs and knows nothing about the closed forms.
//!
//! For instability arguments the bounded function `Z_j = 1 - theta^{V_j}`
//! is used instead: [`transience_drift`] evaluates its exact drift, which
//! vanishes at `theta = 1` with slope `-E[dV_j]`, so a positive Lyapunov
//! drift everywhere yields some `theta* < 1` with positive `Z`-drift.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    downstream_silence_probs, success_probs, upstream_silence_probs, Permutation, QueueState,
    SystemParams,
};
use crate::numeric::Accumulator;
use crate::simulate::{
    apply_slot_parts, fill_departures_dominant, for_each_slot_outcome, outcome_count, SystemKind,
};

/// Outcome enumerations larger than this are refused.
pub const ENUMERATION_BUDGET: u128 = 1 << 24;

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("queue index {index} out of range for {queues} queues")]
    QueueIndex { index: usize, queues: usize },
    #[error("rate vector has {actual} entries, system has {expected} queues")]
    Dimension { expected: usize, actual: usize },
    #[error("arrival rate lambda[{index}] = {value} must be nonnegative and finite")]
    InvalidRate { index: usize, value: f64 },
    #[error("state has {actual} queues, system has {expected}")]
    StateDimension { expected: usize, actual: usize },
    #[error(
        "outcome enumeration needs {required} cases, budget is {budget}; \
         reduce the arrival support or the number of queues"
    )]
    EnumerationBudget { required: u128, budget: u128 },
    #[error("theta = {value} must lie strictly inside (0,1)")]
    ThetaOutOfRange { value: f64 },
    #[error("state sample must be non-empty")]
    EmptySample,
    #[error("queue {queue} overflowed the u64 range during outcome enumeration")]
    Overflow { queue: usize },
}

/// Coefficients of one Lyapunov function: `1/v_k` for `k < j`,
/// `1/(v_j p_j)` at `j`, zero after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub j: usize,
    pub coeffs: Vec<f64>,
}

impl LyapunovSpec {
    pub fn new(params: &SystemParams, j: usize) -> Result<Self, DriftError> {
        let queues = params.queue_count();
        if j >= queues {
            return Err(DriftError::QueueIndex { index: j, queues });
        }
        let p = params.attempt_probs();
        let v = downstream_silence_probs(params, &Permutation::identity(queues));
        let mut coeffs = vec![0.0; queues];
        for (k, coeff) in coeffs.iter_mut().enumerate().take(j) {
            *coeff = 1.0 / v[k];
        }
        coeffs[j] = 1.0 / (v[j] * p[j]);
        Ok(Self { j, coeffs })
    }

    pub fn value(&self, state: &QueueState) -> f64 {
        self.coeffs
            .iter()
            .zip(&state.0)
            .map(|(c, &q)| c * q as f64)
            .sum()
    }
}

/// `V_j(Q)`.
pub fn lyapunov_value(params: &SystemParams, j: usize, state: &QueueState) -> f64 {
    LyapunovSpec::new(params, j)
        .map(|spec| spec.value(state))
        .unwrap_or(f64::NAN)
}

fn validate_lambda(params: &SystemParams, lambda: &[f64]) -> Result<(), DriftError> {
    if lambda.len() != params.queue_count() {
        return Err(DriftError::Dimension {
            expected: params.queue_count(),
            actual: lambda.len(),
        });
    }
    for (index, &value) in lambda.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(DriftError::InvalidRate { index, value });
        }
    }
    Ok(())
}

/// Identity-ordering condition value `c_j` for each queue.
pub fn condition_values(params: &SystemParams, lambda: &[f64]) -> Result<Vec<f64>, DriftError> {
    validate_lambda(params, lambda)?;
    let p = params.attempt_probs();
    let v = downstream_silence_probs(params, &Permutation::identity(p.len()));
    let mut values = Vec::with_capacity(p.len());
    let mut prefix = 0.0;
    for j in 0..p.len() {
        values.push(lambda[j] / (p[j] * v[j]) + prefix);
        prefix += lambda[j] / v[j];
    }
    Ok(values)
}

/// Closed-form one-step drift of `V_j` at `state` under rates `lambda`.
pub fn analytic_drift(
    params: &SystemParams,
    lambda: &[f64],
    j: usize,
    state: &QueueState,
) -> Result<f64, DriftError> {
    let queues = params.queue_count();
    if j >= queues {
        return Err(DriftError::QueueIndex { index: j, queues });
    }
    if state.len() != queues {
        return Err(DriftError::StateDimension { expected: queues, actual: state.len() });
    }
    let c = condition_values(params, lambda)?[j];
    if state.0[j] >= 1 {
        Ok(c - 1.0)
    } else {
        let u = upstream_silence_probs(params, state);
        Ok(c - (1.0 - u[j]))
    }
}

/// Expected value of the departure mix `D_j/(p_j v_j) + sum_{k<j} D_k/v_k`.
/// Equals 1 when queue `j` is loaded and `1 - u_j(Q)` when it is empty.
pub fn weighted_departure_expectation(
    params: &SystemParams,
    state: &QueueState,
    j: usize,
) -> Result<f64, DriftError> {
    let queues = params.queue_count();
    if j >= queues {
        return Err(DriftError::QueueIndex { index: j, queues });
    }
    if state.len() != queues {
        return Err(DriftError::StateDimension { expected: queues, actual: state.len() });
    }
    let p = params.attempt_probs();
    let v = downstream_silence_probs(params, &Permutation::identity(queues));
    let r = success_probs(params, state);
    let mut total = r[j] / (p[j] * v[j]);
    for k in 0..j {
        total += r[k] / v[k];
    }
    Ok(total)
}

/// Exact one-step drift of an arbitrary state function under the dominant
/// dynamics, by enumerating the joint support of one slot's inputs.
pub fn exact_one_step_drift<F>(
    params: &SystemParams,
    v: F,
    state: &QueueState,
) -> Result<f64, DriftError>
where
    F: Fn(&QueueState) -> f64,
{
    let queues = params.queue_count();
    if state.len() != queues {
        return Err(DriftError::StateDimension { expected: queues, actual: state.len() });
    }
    let required = outcome_count(params);
    if required > ENUMERATION_BUDGET {
        return Err(DriftError::EnumerationBudget { required, budget: ENUMERATION_BUDGET });
    }
    let v0 = v(state);
    let mut next = state.clone();
    let mut departures = vec![false; queues];
    let mut acc = Accumulator::new();
    let mut overflow = None;
    for_each_slot_outcome(params, |attempts, arrivals, prob| {
        if overflow.is_some() {
            return;
        }
        next.0.copy_from_slice(&state.0);
        match apply_slot_parts(SystemKind::Dominant, &mut next.0, attempts, arrivals, &mut departures)
        {
            Ok(()) => acc.add(prob * (v(&next) - v0)),
            Err(queue) => overflow = Some(queue),
        }
    });
    if let Some(queue) = overflow {
        return Err(DriftError::Overflow { queue });
    }
    Ok(acc.value())
}

/// Per-queue verification of the drift assumptions behind the positive
/// recurrence argument, evaluated over all busy signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Negative-drift margin on `{Q_j >= 1}`: `1 - c_j`. Positive for every
    /// queue exactly when the identity-ordering conditions hold.
    pub epsilon: Vec<f64>,
    /// Largest drift of `V_j` over all signatures (the global upper bound).
    pub eta_bound: Vec<f64>,
    /// Drift of each `V_j` is non-increasing under the componentwise
    /// signature order.
    pub monotone: bool,
    /// Queue lengths drop by at most one per slot, so a queue at level `k`
    /// cannot empty in fewer than `k` slots and the level sets below any
    /// finite cap form a finite core.
    pub assumption22_ok: bool,
    pub constraint_values: Vec<f64>,
    pub assumptions_satisfied: bool,
}

/// Evaluate the drift assumptions for given `(params, lambda)`.
pub fn verify_drift_assumptions(
    params: &SystemParams,
    lambda: &[f64],
) -> Result<DriftReport, DriftError> {
    let queues = params.queue_count();
    let constraint_values = condition_values(params, lambda)?;
    let epsilon: Vec<f64> = constraint_values.iter().map(|c| 1.0 - c).collect();

    // Drift of V_j per signature, via the closed forms.
    let signatures = 1u64 << queues;
    let mut drifts = vec![vec![0.0f64; signatures as usize]; queues];
    for mask in 0..signatures {
        let state = QueueState((0..queues).map(|k| (mask >> k) & 1).collect());
        for (j, row) in drifts.iter_mut().enumerate() {
            row[mask as usize] = analytic_drift(params, lambda, j, &state)?;
        }
    }

    let eta_bound: Vec<f64> = drifts
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();

    // Subset pairs are exactly the componentwise-ordered signature pairs.
    let mut monotone = true;
    'outer: for mask in 0..signatures {
        let mut sub = mask;
        loop {
            for row in &drifts {
                if row[sub as usize] < row[mask as usize] - 1e-12 {
                    monotone = false;
                    break 'outer;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & mask;
        }
    }

    // Structural part: with zero arrivals no queue drops by more than one
    // per slot, over every (signature, attempt) pair.
    let mut assumption22_ok = true;
    let zero_arrivals = vec![0u64; queues];
    let mut departures = vec![false; queues];
    let mut q = vec![0u64; queues];
    for mask in 0..signatures {
        for y_mask in 0..signatures {
            for k in 0..queues {
                q[k] = (mask >> k) & 1;
            }
            let attempts: Vec<bool> = (0..queues).map(|k| (y_mask >> k) & 1 == 1).collect();
            let before = q.clone();
            apply_slot_parts(SystemKind::Dominant, &mut q, &attempts, &zero_arrivals, &mut departures)
                .expect("no arrivals, no overflow");
            for k in 0..queues {
                if before[k] - q[k] > 1 {
                    assumption22_ok = false;
                }
            }
        }
    }

    let assumptions_satisfied =
        epsilon.iter().all(|&e| e > 0.0) && monotone && assumption22_ok;
    Ok(DriftReport {
        epsilon,
        eta_bound,
        monotone,
        assumption22_ok,
        constraint_values,
        assumptions_satisfied,
    })
}

/// Exact drift of the bounded function `Z_j = 1 - theta^{V_j}` at `state`.
///
/// Each outcome contributes `theta^{V(Q)} - theta^{V(Q')}`, evaluated as
/// `-theta^{V(Q)} * expm1(dV * ln theta)` so values survive `theta` within
/// an ulp of 1 without cancellation.
pub fn transience_drift(
    params: &SystemParams,
    j: usize,
    theta: f64,
    state: &QueueState,
) -> Result<f64, DriftError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(DriftError::ThetaOutOfRange { value: theta });
    }
    let queues = params.queue_count();
    if state.len() != queues {
        return Err(DriftError::StateDimension { expected: queues, actual: state.len() });
    }
    let required = outcome_count(params);
    if required > ENUMERATION_BUDGET {
        return Err(DriftError::EnumerationBudget { required, budget: ENUMERATION_BUDGET });
    }
    let spec = LyapunovSpec::new(params, j)?;
    let ln_theta = theta.ln();
    let theta_pow_v = (spec.value(state) * ln_theta).exp();
    let mut departures = vec![false; queues];
    let mut acc = Accumulator::new();
    for_each_slot_outcome(params, |attempts, arrivals, prob| {
        fill_departures_dominant(&state.0, attempts, &mut departures);
        let mut dv = 0.0;
        for k in 0..queues {
            dv += spec.coeffs[k] * (arrivals[k] as f64 - f64::from(departures[k]));
        }
        acc.add(prob * f64::exp_m1(dv * ln_theta));
    });
    Ok(-theta_pow_v * acc.value())
}

/// A `theta` certified to give positive `Z_j`-drift over a finite sample of
/// states. The certificate speaks only for the sampled states, never for
/// the full space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaStar {
    pub theta: f64,
    /// Minimum of the `Z_j` drift over the sample at `theta`.
    pub min_drift: f64,
    pub sample_size: usize,
    /// Always true: positivity was checked on the sample only.
    pub sample_only: bool,
}

const THETA_MIN: f64 = 1e-6;
const THETA_MAX: f64 = 1.0 - 1e-9;

/// Search `theta` in `[1e-6, 1 - 1e-9]` maximizing the minimum `Z_j`-drift
/// over the sample; reports a certificate when that minimum exceeds `tol`.
pub fn find_transience_theta(
    params: &SystemParams,
    j: usize,
    sample: &[QueueState],
    tol: f64,
) -> Result<Option<ThetaStar>, DriftError> {
    if sample.is_empty() {
        return Err(DriftError::EmptySample);
    }
    let min_drift = |theta: f64| -> Result<f64, DriftError> {
        let mut min = f64::INFINITY;
        for state in sample {
            min = min.min(transience_drift(params, j, theta, state)?);
        }
        Ok(min)
    };

    // Coarse scan in log(1 - theta), then golden-section refinement around
    // the best bracket. The objective is smooth but not provably unimodal.
    let u_lo = (1.0 - THETA_MAX).ln();
    let u_hi = (1.0 - THETA_MIN).ln();
    let scan = 128;
    let theta_at = |u: f64| (1.0 - u.exp()).clamp(THETA_MIN, THETA_MAX);
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut us = Vec::with_capacity(scan + 1);
    for i in 0..=scan {
        let u = u_lo + (u_hi - u_lo) * i as f64 / scan as f64;
        us.push(u);
        let val = min_drift(theta_at(u))?;
        if val > best_val {
            best_val = val;
            best_idx = i;
        }
    }
    let mut a = us[best_idx.saturating_sub(1)];
    let mut b = us[(best_idx + 1).min(scan)];
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = min_drift(theta_at(x1))?;
    let mut f2 = min_drift(theta_at(x2))?;
    for _ in 0..80 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = min_drift(theta_at(x1))?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = min_drift(theta_at(x2))?;
        }
    }
    let u_best = if f1 >= f2 { x1 } else { x2 };
    let theta = theta_at(u_best);
    let value = min_drift(theta)?;
    let (theta, value) = if value >= best_val {
        (theta, value)
    } else {
        (theta_at(us[best_idx]), best_val)
    };
    if value > tol {
        Ok(Some(ThetaStar {
            theta,
            min_drift: value,
            sample_size: sample.len(),
            sample_only: true,
        }))
    } else {
        Ok(None)
    }
}
