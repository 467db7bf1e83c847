//! Domain parameters and the per-slot success-probability calculus of the
//! dominant system.
//!
//! Queues are indexed `0..J`. In the dominant system a transmission from
//! queue `j` succeeds exactly when three independent things happen at once:
//! queue `j` attempts while non-empty, no *earlier* queue makes a real
//! (non-empty) attempt, and no *later* queue attempts at all (later queues
//! transmit dummy packets even when empty). That factorization gives the
//! closed-form success probability
//!
//! ```text
//! r_j(Q) = u_j(Q) * p_j * v_j * 1{Q_j > 0}
//! u_j(Q) = prod_{k < j} (1 - p_k * 1{Q_k > 0})     (upstream silence)
//! v_j    = prod_{k > j} (1 - p_k)                   (downstream silence)
//! ```
//!
//! `v` is queue-length independent; `u` and `r` depend on the queue vector
//! only through which queues are busy (the busy signature).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation errors for model construction.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("attempt probability p[{index}] = {value} must lie strictly inside (0,1)")]
    AttemptProbOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("arrival pmf is empty")]
    EmptyPmf,
    #[error("arrival pmf probability {value} for batch {batch} is outside [0,1]")]
    PmfProbOutOfRange { batch: u64, value: f64 },
    #[error("arrival pmf probabilities sum to {sum}, not 1 (tolerance 1e-12)")]
    PmfNotNormalized { sum: f64 },
    #[error("arrival pmf lists batch size {batch} more than once")]
    DuplicateBatch { batch: u64 },
    #[error("arrival rate {value} must lie in [0,1] for a Bernoulli arrival process")]
    BernoulliRateOutOfRange { value: f64 },
    #[error("permutation {order:?} is not a bijection of 0..{len}")]
    InvalidPermutation { order: Vec<usize>, len: usize },
    #[error("system must have at least one queue")]
    NoQueues,
}

/// Finite-support distribution of per-slot arrival batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalDist {
    pmf: Vec<(u64, f64)>,
    mean: f64,
}

impl ArrivalDist {
    /// Build from `(batch size, probability)` pairs. Zero-probability entries
    /// are dropped; the remaining probabilities must sum to 1 within 1e-12
    /// and batch sizes must be distinct.
    pub fn from_pmf(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self, ModelError> {
        let mut pmf: Vec<(u64, f64)> = Vec::new();
        for (batch, prob) in pairs {
            if !(0.0..=1.0).contains(&prob) || !prob.is_finite() {
                return Err(ModelError::PmfProbOutOfRange { batch, value: prob });
            }
            if prob == 0.0 {
                continue;
            }
            pmf.push((batch, prob));
        }
        if pmf.is_empty() {
            return Err(ModelError::EmptyPmf);
        }
        pmf.sort_by_key(|&(batch, _)| batch);
        for w in pmf.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ModelError::DuplicateBatch { batch: w[0].0 });
            }
        }
        let sum: f64 = crate::numeric::neumaier_sum(pmf.iter().map(|&(_, p)| p));
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::PmfNotNormalized { sum });
        }
        let mean = crate::numeric::neumaier_sum(pmf.iter().map(|&(b, p)| b as f64 * p));
        Ok(Self { pmf, mean })
    }

    /// Bernoulli arrivals: one packet with probability `rate`, else none.
    pub fn bernoulli(rate: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
            return Err(ModelError::BernoulliRateOutOfRange { value: rate });
        }
        Self::from_pmf([(0, 1.0 - rate), (1, rate)])
    }

    /// Point mass at a fixed batch size.
    pub fn constant(batch: u64) -> Self {
        Self { pmf: vec![(batch, 1.0)], mean: batch as f64 }
    }

    pub fn pmf(&self) -> &[(u64, f64)] {
        &self.pmf
    }

    /// Mean batch size per slot (the arrival rate lambda).
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn max_batch(&self) -> u64 {
        self.pmf.iter().map(|&(b, _)| b).max().unwrap_or(0)
    }

    /// Inverse-CDF sample from a uniform draw in [0,1).
    pub fn sample(&self, uniform: f64) -> u64 {
        let mut acc = 0.0;
        for &(batch, prob) in &self.pmf {
            acc += prob;
            if uniform < acc {
                return batch;
            }
        }
        // Rounding in the cumulative sum can leave a sliver below 1.
        self.pmf.last().map(|&(b, _)| b).unwrap_or(0)
    }
}

/// Immutable system parameters: attempt probabilities and arrival laws for
/// each of the `J` queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    p: Vec<f64>,
    arrivals: Vec<ArrivalDist>,
}

impl SystemParams {
    /// `p[j]` must be strictly inside (0,1): a queue that never attempts or
    /// always attempts degenerates the silence products.
    pub fn new(p: Vec<f64>, arrivals: Vec<ArrivalDist>) -> Result<Self, ModelError> {
        if p.is_empty() {
            return Err(ModelError::NoQueues);
        }
        if p.len() != arrivals.len() {
            return Err(ModelError::LengthMismatch { expected: p.len(), actual: arrivals.len() });
        }
        for (index, &value) in p.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(ModelError::AttemptProbOutOfRange { index, value });
            }
        }
        Ok(Self { p, arrivals })
    }

    /// Convenience constructor with Bernoulli(lambda[j]) arrivals.
    pub fn bernoulli(p: Vec<f64>, lambda: &[f64]) -> Result<Self, ModelError> {
        if p.len() != lambda.len() {
            return Err(ModelError::LengthMismatch { expected: p.len(), actual: lambda.len() });
        }
        let arrivals = lambda
            .iter()
            .map(|&l| ArrivalDist::bernoulli(l))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(p, arrivals)
    }

    pub fn queue_count(&self) -> usize {
        self.p.len()
    }

    pub fn attempt_probs(&self) -> &[f64] {
        &self.p
    }

    pub fn arrivals(&self) -> &[ArrivalDist] {
        &self.arrivals
    }

    /// Mean arrival rate vector lambda.
    pub fn arrival_rates(&self) -> Vec<f64> {
        self.arrivals.iter().map(ArrivalDist::mean).collect()
    }

    pub fn max_batch(&self) -> u64 {
        self.arrivals.iter().map(ArrivalDist::max_batch).max().unwrap_or(0)
    }

    /// A copy of the system with queues relabeled so that position `m` holds
    /// what was queue `eta[m]`. Identity-order formulas applied to the
    /// relabeled system realize the permuted system.
    pub fn relabeled(&self, eta: &Permutation) -> Result<SystemParams, ModelError> {
        if eta.len() != self.queue_count() {
            return Err(ModelError::LengthMismatch {
                expected: self.queue_count(),
                actual: eta.len(),
            });
        }
        Ok(SystemParams {
            p: eta.permute(&self.p),
            arrivals: eta.permute(&self.arrivals),
        })
    }
}

/// Vector of queue lengths at the start of a slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueueState(pub Vec<u64>);

impl QueueState {
    pub fn zeros(queues: usize) -> Self {
        Self(vec![0; queues])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// Componentwise partial order.
    pub fn le(&self, other: &QueueState) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn all_within(&self, bound: u64) -> bool {
        self.0.iter().all(|&q| q <= bound)
    }
}

impl From<Vec<u64>> for QueueState {
    fn from(q: Vec<u64>) -> Self {
        Self(q)
    }
}

/// Which queues are busy. The success-probability vector depends on the
/// queue lengths only through this.
pub fn busy_signature(state: &QueueState) -> Vec<bool> {
    state.0.iter().map(|&q| q > 0).collect()
}

/// An ordering of the queues, stored 0-based. Serialized as 1-based queue
/// numbers, the convention used in all CLI output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Serialize for Permutation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.one_based().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let one_based = Vec::<usize>::deserialize(deserializer)?;
        Permutation::from_one_based(&one_based).map_err(serde::de::Error::custom)
    }
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self, ModelError> {
        let len = order.len();
        let mut seen = vec![false; len];
        for &i in &order {
            if i >= len || seen[i] {
                return Err(ModelError::InvalidPermutation { order, len });
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(len: usize) -> Self {
        Self { order: (0..len).collect() }
    }

    /// Parse 1-based queue numbers, the convention used in CLI output.
    pub fn from_one_based(order: &[usize]) -> Result<Self, ModelError> {
        let shifted: Vec<usize> = order.iter().map(|&i| i.wrapping_sub(1)).collect();
        Self::new(shifted)
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.order.iter().map(|&i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    /// Queue index placed at position `pos`.
    pub fn at(&self, pos: usize) -> usize {
        self.order[pos]
    }

    /// Reorder a per-queue vector into position order.
    pub fn permute<T: Clone>(&self, xs: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| xs[i].clone()).collect()
    }

    /// All permutations of `0..len` in lexicographic order.
    pub fn enumerate(len: usize) -> impl Iterator<Item = Permutation> {
        use itertools::Itertools;
        (0..len).permutations(len).map(|order| Permutation { order })
    }
}

/// Probability that no queue placed after position `pos` transmits anything,
/// real or dummy: entry `pos` is `prod_{m > pos} (1 - p[eta[m]])`, and the
/// last entry is 1.
pub fn downstream_silence_probs(params: &SystemParams, eta: &Permutation) -> Vec<f64> {
    let p = params.attempt_probs();
    let j = eta.len();
    let mut v = vec![1.0; j];
    for pos in (0..j.saturating_sub(1)).rev() {
        v[pos] = v[pos + 1] * (1.0 - p[eta.at(pos + 1)]);
    }
    v
}

/// Probability that no queue before `j` (identity order) makes a real
/// transmission: entry 0 is 1, entry `j` is
/// `prod_{k < j} (1 - p_k * 1{Q_k > 0})`.
pub fn upstream_silence_probs(params: &SystemParams, state: &QueueState) -> Vec<f64> {
    let p = params.attempt_probs();
    let j = p.len();
    let mut u = vec![1.0; j];
    for k in 1..j {
        let active = if state.0[k - 1] > 0 { p[k - 1] } else { 0.0 };
        u[k] = u[k - 1] * (1.0 - active);
    }
    u
}

/// Per-queue success probabilities `r_j(Q)` in identity order.
///
/// At most one queue can succeed per slot, so the entries sum to at most 1.
pub fn success_probs(params: &SystemParams, state: &QueueState) -> Vec<f64> {
    let p = params.attempt_probs();
    let u = upstream_silence_probs(params, state);
    let v = downstream_silence_probs(params, &Permutation::identity(p.len()));
    (0..p.len())
        .map(|j| if state.0[j] > 0 { u[j] * p[j] * v[j] } else { 0.0 })
        .collect()
}
