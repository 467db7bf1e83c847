//! Slot-by-slot simulation of the original and dominant systems.
//!
//! Both systems are driven by the same two input processes per slot: a
//! Bernoulli attempt vector `Y` and an arrival batch vector `Lam`. They
//! differ only in the departure rule:
//!
//! * original — queue `j` departs iff it attempts while non-empty and no
//!   other *non-empty* queue attempts (empty queues cannot interfere);
//! * dominant — queue `j` departs iff it attempts while non-empty, no
//!   earlier queue makes a real attempt, and no later queue attempts at
//!   all. Later queues interfere even when empty (dummy packets).
//!
//! Randomness comes from a counter-based generator keyed by
//! `(seed, slot, stream, lane)` with separate streams for attempts and
//! arrivals, so coupled experiments feed both systems exactly the same
//! draws and changing one marginal never perturbs the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{QueueState, SystemParams};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("steps must be >= 1")]
    ZeroSteps,
    #[error("trace stride must be >= 1")]
    ZeroStride,
    #[error("replicates must be >= 1")]
    ZeroReplicates,
    #[error("horizon must be at least {min}, got {got}")]
    HorizonTooShort { min: u64, got: u64 },
    #[error("queue {queue} overflowed the u64 queue-length range at slot {slot}")]
    Overflow { slot: u64, queue: usize },
    #[error("initial states are not componentwise comparable: {lo:?} vs {hi:?}")]
    Incomparable { lo: Vec<u64>, hi: Vec<u64> },
    #[error("state has {actual} queues, system has {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("queue index {index} out of range for {queues} queues")]
    QueueIndex { index: usize, queues: usize },
}

/// Which departure rule drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Original,
    Dominant,
}

/// Exogenous inputs for one slot: attempt draws and arrival batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotInputs {
    pub attempts: Vec<bool>,
    pub arrivals: Vec<u64>,
}

impl SlotInputs {
    pub fn zeros(queues: usize) -> Self {
        Self { attempts: vec![false; queues], arrivals: vec![0; queues] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: u64,
    pub seed: u64,
    pub system: SystemKind,
    pub record_trace: bool,
    pub trace_stride: u64,
}

impl SimConfig {
    pub fn new(steps: u64, seed: u64, system: SystemKind) -> Self {
        Self { steps, seed, system, record_trace: false, trace_stride: 1 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps == 0 {
            return Err(SimError::ZeroSteps);
        }
        if self.trace_stride == 0 {
            return Err(SimError::ZeroStride);
        }
        Ok(())
    }
}

/// Summary of one run. `time_avg_queue` and `max_queue` are taken over the
/// post-slot states `Q^1 .. Q^steps`; `departures[j]` counts slots in which
/// queue `j` sent a packet out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub final_state: QueueState,
    pub time_avg_queue: Vec<f64>,
    pub max_queue: Vec<u64>,
    pub departures: Vec<u64>,
    pub slots: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<(u64, QueueState)>>,
}

/// Zero-violation reports from the coupled experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub violations: u64,
    pub slots: u64,
}

// ---------------------------------------------------------------------------
// Counter-based random numbers
// ---------------------------------------------------------------------------

const STREAM_ATTEMPTS: u64 = 0x41;
const STREAM_ARRIVALS: u64 = 0x4c;
const STREAM_REPLICATE: u64 = 0x52;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn counter_u64(seed: u64, slot: u64, stream: u64, lane: u64) -> u64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ slot.wrapping_mul(0xff51_afd7_ed55_8ccd));
    h = mix64(h ^ stream.wrapping_mul(0xc4ce_b9fe_1a85_ec53));
    mix64(h ^ lane.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

fn counter_uniform(seed: u64, slot: u64, stream: u64, lane: u64) -> f64 {
    // 53 high bits -> [0, 1)
    (counter_u64(seed, slot, stream, lane) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derive an independent seed for replicate `index` of a sweep.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    counter_u64(seed, index, STREAM_REPLICATE, 0)
}

/// Draw one slot of inputs into an existing buffer.
pub fn sample_inputs_into(params: &SystemParams, seed: u64, slot: u64, out: &mut SlotInputs) {
    let p = params.attempt_probs();
    for (lane, &pj) in p.iter().enumerate() {
        out.attempts[lane] = counter_uniform(seed, slot, STREAM_ATTEMPTS, lane as u64) < pj;
    }
    for (lane, dist) in params.arrivals().iter().enumerate() {
        out.arrivals[lane] = dist.sample(counter_uniform(seed, slot, STREAM_ARRIVALS, lane as u64));
    }
}

/// Draw one slot of inputs. Bit-reproducible given `(seed, slot)`.
pub fn sample_inputs(params: &SystemParams, seed: u64, slot: u64) -> SlotInputs {
    let mut out = SlotInputs::zeros(params.queue_count());
    sample_inputs_into(params, seed, slot, &mut out);
    out
}

// ---------------------------------------------------------------------------
// One-slot dynamics
// ---------------------------------------------------------------------------

pub(crate) fn fill_departures_original(q: &[u64], attempts: &[bool], departures: &mut [bool]) {
    departures.fill(false);
    let mut active = None;
    for (k, (&qk, &yk)) in q.iter().zip(attempts).enumerate() {
        if yk && qk > 0 {
            if active.is_some() {
                return; // collision between real transmissions
            }
            active = Some(k);
        }
    }
    if let Some(k) = active {
        departures[k] = true;
    }
}

pub(crate) fn fill_departures_dominant(q: &[u64], attempts: &[bool], departures: &mut [bool]) {
    departures.fill(false);
    // Only the last attempting queue can succeed: any attempt after j,
    // dummy or real, blocks j.
    let Some(last) = attempts.iter().rposition(|&y| y) else {
        return;
    };
    if q[last] == 0 {
        return;
    }
    let blocked = q[..last]
        .iter()
        .zip(&attempts[..last])
        .any(|(&qk, &yk)| yk && qk > 0);
    if !blocked {
        departures[last] = true;
    }
}

/// In-place one-slot transition. On overflow returns the offending queue.
pub(crate) fn apply_slot_parts(
    kind: SystemKind,
    q: &mut [u64],
    attempts: &[bool],
    arrivals: &[u64],
    departures: &mut [bool],
) -> Result<(), usize> {
    match kind {
        SystemKind::Original => fill_departures_original(q, attempts, departures),
        SystemKind::Dominant => fill_departures_dominant(q, attempts, departures),
    }
    for (k, qk) in q.iter_mut().enumerate() {
        let after_dep = *qk - u64::from(departures[k]); // departure requires qk > 0
        *qk = after_dep.checked_add(arrivals[k]).ok_or(k)?;
    }
    Ok(())
}

fn apply_slot(
    kind: SystemKind,
    q: &mut [u64],
    inputs: &SlotInputs,
    departures: &mut [bool],
) -> Result<(), usize> {
    apply_slot_parts(kind, q, &inputs.attempts, &inputs.arrivals, departures)
}

fn check_dimension(params: &SystemParams, state: &QueueState) -> Result<(), SimError> {
    if state.len() != params.queue_count() {
        return Err(SimError::Dimension { expected: params.queue_count(), actual: state.len() });
    }
    Ok(())
}

/// One slot of the original system. At most one queue departs, and only a
/// non-empty attempting queue that no other non-empty queue talks over.
pub fn step_original(
    params: &SystemParams,
    state: &QueueState,
    inputs: &SlotInputs,
) -> Result<(QueueState, Vec<bool>), SimError> {
    check_dimension(params, state)?;
    let mut q = state.0.clone();
    let mut departures = vec![false; q.len()];
    apply_slot(SystemKind::Original, &mut q, inputs, &mut departures)
        .map_err(|queue| SimError::Overflow { slot: 0, queue })?;
    Ok((QueueState(q), departures))
}

/// One slot of the dominant system. Queue `j` departs iff it attempts while
/// non-empty, no earlier queue makes a real attempt, and no later queue
/// attempts at all. Dummy successes leave queue lengths untouched.
pub fn step_dominant(
    params: &SystemParams,
    state: &QueueState,
    inputs: &SlotInputs,
) -> Result<(QueueState, Vec<bool>), SimError> {
    check_dimension(params, state)?;
    let mut q = state.0.clone();
    let mut departures = vec![false; q.len()];
    apply_slot(SystemKind::Dominant, &mut q, inputs, &mut departures)
        .map_err(|queue| SimError::Overflow { slot: 0, queue })?;
    Ok((QueueState(q), departures))
}

/// Run the configured system for `cfg.steps` slots from `q0`.
pub fn run(params: &SystemParams, q0: &QueueState, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    check_dimension(params, q0)?;
    let queues = params.queue_count();
    let mut q = q0.0.clone();
    let mut inputs = SlotInputs::zeros(queues);
    let mut departures = vec![false; queues];
    let mut sum_q = vec![0.0f64; queues];
    let mut max_q = vec![0u64; queues];
    let mut dep_counts = vec![0u64; queues];
    let mut trace = cfg.record_trace.then(|| vec![(0u64, q0.clone())]);

    for slot in 0..cfg.steps {
        sample_inputs_into(params, cfg.seed, slot, &mut inputs);
        apply_slot(cfg.system, &mut q, &inputs, &mut departures)
            .map_err(|queue| SimError::Overflow { slot, queue })?;
        for k in 0..queues {
            sum_q[k] += q[k] as f64;
            max_q[k] = max_q[k].max(q[k]);
            dep_counts[k] += u64::from(departures[k]);
        }
        if let Some(trace) = trace.as_mut() {
            if (slot + 1) % cfg.trace_stride == 0 {
                trace.push((slot + 1, QueueState(q.clone())));
            }
        }
    }

    let slots = cfg.steps;
    Ok(SimResult {
        final_state: QueueState(q),
        time_avg_queue: sum_q.iter().map(|s| s / slots as f64).collect(),
        max_queue: max_q,
        departures: dep_counts,
        slots,
        trace,
    })
}

/// Run the original and dominant systems side by side from the same start
/// under the same input stream, counting slots where some dominant queue
/// falls below its original counterpart.
pub fn run_coupled_dominance(
    params: &SystemParams,
    q0: &QueueState,
    cfg: &SimConfig,
) -> Result<CouplingReport, SimError> {
    cfg.validate()?;
    check_dimension(params, q0)?;
    let queues = params.queue_count();
    let mut original = q0.0.clone();
    let mut dominant = q0.0.clone();
    let mut inputs = SlotInputs::zeros(queues);
    let mut departures = vec![false; queues];
    let mut violations = 0u64;

    for slot in 0..cfg.steps {
        sample_inputs_into(params, cfg.seed, slot, &mut inputs);
        apply_slot(SystemKind::Original, &mut original, &inputs, &mut departures)
            .map_err(|queue| SimError::Overflow { slot, queue })?;
        apply_slot(SystemKind::Dominant, &mut dominant, &inputs, &mut departures)
            .map_err(|queue| SimError::Overflow { slot, queue })?;
        if original.iter().zip(&dominant).any(|(o, d)| o > d) {
            violations += 1;
        }
    }
    Ok(CouplingReport { violations, slots: cfg.steps })
}

/// Run two dominant systems from ordered starts `q0 <= q0_hi` under the same
/// input stream, counting slots where the order breaks.
pub fn run_coupled_order(
    params: &SystemParams,
    q0: &QueueState,
    q0_hi: &QueueState,
    cfg: &SimConfig,
) -> Result<CouplingReport, SimError> {
    cfg.validate()?;
    check_dimension(params, q0)?;
    check_dimension(params, q0_hi)?;
    if !q0.le(q0_hi) {
        return Err(SimError::Incomparable { lo: q0.0.clone(), hi: q0_hi.0.clone() });
    }
    let queues = params.queue_count();
    let mut lo = q0.0.clone();
    let mut hi = q0_hi.0.clone();
    let mut inputs = SlotInputs::zeros(queues);
    let mut departures = vec![false; queues];
    let mut violations = 0u64;

    for slot in 0..cfg.steps {
        sample_inputs_into(params, cfg.seed, slot, &mut inputs);
        apply_slot(SystemKind::Dominant, &mut lo, &inputs, &mut departures)
            .map_err(|queue| SimError::Overflow { slot, queue })?;
        apply_slot(SystemKind::Dominant, &mut hi, &inputs, &mut departures)
            .map_err(|queue| SimError::Overflow { slot, queue })?;
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            violations += 1;
        }
    }
    Ok(CouplingReport { violations, slots: cfg.steps })
}

/// Monte Carlo estimate of the per-slot growth of the `j`-th Lyapunov value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftLimitEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub horizon: u64,
    pub replicates: u32,
}

/// Estimate `(V_j(Q^horizon) - V_j(x0)) / horizon` for the dominant system
/// by averaging over independent replicates. For a stable chain the limit
/// is 0; for a chain growing at constant drift it is that drift. The
/// half-width is a 95% normal interval over the replicate estimates.
pub fn estimate_drift_limit(
    params: &SystemParams,
    j: usize,
    x0: &QueueState,
    horizon: u64,
    replicates: u32,
    seed: u64,
) -> Result<DriftLimitEstimate, SimError> {
    if j >= params.queue_count() {
        return Err(SimError::QueueIndex { index: j, queues: params.queue_count() });
    }
    if horizon < 1000 {
        return Err(SimError::HorizonTooShort { min: 1000, got: horizon });
    }
    if replicates == 0 {
        return Err(SimError::ZeroReplicates);
    }
    check_dimension(params, x0)?;
    let v0 = crate::drift::lyapunov_value(params, j, x0);
    let mut estimates = Vec::with_capacity(replicates as usize);
    for rep in 0..replicates {
        let cfg = SimConfig::new(horizon, replicate_seed(seed, rep as u64), SystemKind::Dominant);
        let result = run(params, x0, &cfg)?;
        let v_end = crate::drift::lyapunov_value(params, j, &result.final_state);
        estimates.push((v_end - v0) / horizon as f64);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let half_width = if estimates.len() > 1 {
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(DriftLimitEstimate { mean, half_width, horizon, replicates })
}

// ---------------------------------------------------------------------------
// Exact outcome enumeration
// ---------------------------------------------------------------------------

/// Number of joint `(attempts, arrivals)` outcomes for one slot.
pub fn outcome_count(params: &SystemParams) -> u128 {
    let mut count = 1u128 << params.queue_count();
    for dist in params.arrivals() {
        count = count.saturating_mul(dist.pmf().len() as u128);
    }
    count
}

/// Visit every joint `(attempts, arrivals)` outcome of one slot with its
/// probability. Probabilities sum to 1 over the whole walk.
pub fn for_each_slot_outcome<F>(params: &SystemParams, mut visit: F)
where
    F: FnMut(&[bool], &[u64], f64),
{
    let p = params.attempt_probs();
    let queues = p.len();
    let dists = params.arrivals();
    let mut attempts = vec![false; queues];
    let mut batches = vec![0u64; queues];
    let mut pmf_idx = vec![0usize; queues];

    for mask in 0u64..(1u64 << queues) {
        let mut prob_y = 1.0f64;
        for k in 0..queues {
            let y = (mask >> k) & 1 == 1;
            attempts[k] = y;
            prob_y *= if y { p[k] } else { 1.0 - p[k] };
        }
        // odometer over the arrival supports
        pmf_idx.fill(0);
        loop {
            let mut prob = prob_y;
            for k in 0..queues {
                let (batch, q) = dists[k].pmf()[pmf_idx[k]];
                batches[k] = batch;
                prob *= q;
            }
            visit(&attempts, &batches, prob);
            let mut k = 0;
            loop {
                if k == queues {
                    break;
                }
                pmf_idx[k] += 1;
                if pmf_idx[k] < dists[k].pmf().len() {
                    break;
                }
                pmf_idx[k] = 0;
                k += 1;
            }
            if k == queues {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{busy_signature, success_probs, ArrivalDist};

    fn bernoulli_params(p: &[f64], lambda: &[f64]) -> SystemParams {
        SystemParams::bernoulli(p.to_vec(), lambda).unwrap()
    }

    fn inputs(attempts: &[bool], arrivals: &[u64]) -> SlotInputs {
        SlotInputs { attempts: attempts.to_vec(), arrivals: arrivals.to_vec() }
    }

    #[test]
    fn original_collision_keeps_queues() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.0, 0.0]);
        let (q, d) = step_original(
            &sys,
            &QueueState(vec![1, 1]),
            &inputs(&[true, true], &[0, 0]),
        )
        .unwrap();
        assert_eq!(d, vec![false, false]);
        assert_eq!(q, QueueState(vec![1, 1]));
    }

    #[test]
    fn original_empty_queue_cannot_interfere() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.0, 0.0]);
        let (q, d) = step_original(
            &sys,
            &QueueState(vec![1, 0]),
            &inputs(&[true, true], &[0, 0]),
        )
        .unwrap();
        assert_eq!(d, vec![true, false]);
        assert_eq!(q, QueueState(vec![0, 0]));
    }

    #[test]
    fn original_all_empty_only_arrivals() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.0, 0.0]);
        let (q, d) = step_original(
            &sys,
            &QueueState(vec![0, 0]),
            &inputs(&[true, true], &[2, 1]),
        )
        .unwrap();
        assert_eq!(d, vec![false, false]);
        assert_eq!(q, QueueState(vec![2, 1]));
    }

    #[test]
    fn dominant_dummy_attempt_blocks() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.0, 0.0]);
        // Queue 2 is empty but attempting: in the dominant system its dummy
        // packet still collides with queue 1.
        let (q, d) = step_dominant(
            &sys,
            &QueueState(vec![1, 0]),
            &inputs(&[true, true], &[0, 0]),
        )
        .unwrap();
        assert_eq!(d, vec![false, false]);
        assert_eq!(q, QueueState(vec![1, 0]));
    }

    #[test]
    fn dominant_lone_attempt_departs() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.0, 0.0]);
        let (q, d) = step_dominant(
            &sys,
            &QueueState(vec![1, 1]),
            &inputs(&[true, false], &[0, 0]),
        )
        .unwrap();
        assert_eq!(d, vec![true, false]);
        assert_eq!(q, QueueState(vec![0, 1]));
    }

    #[test]
    fn dominant_dummy_success_changes_nothing() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.0, 0.0]);
        let (q, d) = step_dominant(
            &sys,
            &QueueState(vec![0, 0]),
            &inputs(&[false, true], &[1, 0]),
        )
        .unwrap();
        assert_eq!(d, vec![false, false]);
        assert_eq!(q, QueueState(vec![1, 0]));
    }

    #[test]
    fn conservation_per_slot() {
        let sys = bernoulli_params(&[0.3, 0.5, 0.7], &[0.0; 3]);
        let states = [
            QueueState(vec![0, 0, 0]),
            QueueState(vec![1, 0, 2]),
            QueueState(vec![3, 3, 3]),
        ];
        for state in &states {
            for mask in 0u32..8 {
                let attempts: Vec<bool> = (0..3).map(|k| (mask >> k) & 1 == 1).collect();
                for arr in [[0u64, 0, 0], [1, 0, 2], [2, 2, 2]] {
                    let slot = inputs(&attempts, &arr);
                    for step in [step_original, step_dominant] {
                        let (q, d) = step(&sys, state, &slot).unwrap();
                        for k in 0..3 {
                            let expected =
                                state.0[k] as i64 + arr[k] as i64 - i64::from(d[k]);
                            assert_eq!(q.0[k] as i64, expected);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn at_most_one_departure_exhaustive() {
        for j in 1..=5usize {
            let p: Vec<f64> = (0..j).map(|k| 0.2 + 0.1 * k as f64).collect();
            let sys = bernoulli_params(&p, &vec![0.0; j]);
            for sig_mask in 0u32..(1 << j) {
                let state = QueueState(
                    (0..j).map(|k| u64::from((sig_mask >> k) & 1 == 1)).collect(),
                );
                for y_mask in 0u32..(1 << j) {
                    let attempts: Vec<bool> = (0..j).map(|k| (y_mask >> k) & 1 == 1).collect();
                    let slot = inputs(&attempts, &vec![0; j]);
                    for step in [step_original, step_dominant] {
                        let (_, d) = step(&sys, &state, &slot).unwrap();
                        let total: u32 = d.iter().map(|&x| u32::from(x)).sum();
                        assert!(total <= 1);
                        for (k, &dep) in d.iter().enumerate() {
                            assert!(!dep || state.0[k] > 0, "departure from empty queue");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dominant_departure_law_matches_success_probs() {
        // P(D_j = 1 | Q) computed by enumerating attempt patterns must equal
        // the closed-form r_j(Q).
        let sys = bernoulli_params(&[0.3, 0.5, 0.7], &[0.0; 3]);
        for sig_mask in 0u32..8 {
            let state =
                QueueState((0..3).map(|k| u64::from((sig_mask >> k) & 1 == 1) * 2).collect());
            let r = success_probs(&sys, &state);
            let mut empirical = vec![0.0f64; 3];
            for y_mask in 0u32..8 {
                let attempts: Vec<bool> = (0..3).map(|k| (y_mask >> k) & 1 == 1).collect();
                let mut prob = 1.0;
                for k in 0..3 {
                    let pk = sys.attempt_probs()[k];
                    prob *= if attempts[k] { pk } else { 1.0 - pk };
                }
                let (_, d) = step_dominant(&sys, &state, &inputs(&attempts, &[0, 0, 0])).unwrap();
                for k in 0..3 {
                    if d[k] {
                        empirical[k] += prob;
                    }
                }
            }
            for k in 0..3 {
                assert!((empirical[k] - r[k]).abs() < 1e-14, "{empirical:?} vs {r:?}");
            }
        }
    }

    #[test]
    fn sampled_inputs_match_marginals() {
        let sys = bernoulli_params(&[0.5, 0.25], &[0.1, 0.4]);
        let slots = 1_000_000u64;
        let mut y_counts = [0u64; 2];
        let mut arrival_sums = [0u64; 2];
        let mut buf = SlotInputs::zeros(2);
        for slot in 0..slots {
            sample_inputs_into(&sys, 7, slot, &mut buf);
            for k in 0..2 {
                y_counts[k] += u64::from(buf.attempts[k]);
                arrival_sums[k] += buf.arrivals[k];
            }
        }
        let y0 = y_counts[0] as f64 / slots as f64;
        let y1 = y_counts[1] as f64 / slots as f64;
        assert!((y0 - 0.5).abs() < 0.002, "attempt mean {y0}");
        assert!((y1 - 0.25).abs() < 0.002, "attempt mean {y1}");
        let a0 = arrival_sums[0] as f64 / slots as f64;
        let a1 = arrival_sums[1] as f64 / slots as f64;
        assert!((a0 - 0.1).abs() < 0.001, "arrival mean {a0}");
        assert!((a1 - 0.4).abs() < 0.0015, "arrival mean {a1}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let sys = bernoulli_params(&[0.5, 0.25], &[0.1, 0.4]);
        for slot in [0u64, 1, 999_999] {
            assert_eq!(sample_inputs(&sys, 42, slot), sample_inputs(&sys, 42, slot));
        }
        assert_ne!(sample_inputs(&sys, 42, 0), sample_inputs(&sys, 43, 0));
    }

    #[test]
    fn run_rejects_zero_steps() {
        let sys = bernoulli_params(&[0.5], &[0.1]);
        let cfg = SimConfig { steps: 0, ..SimConfig::new(1, 0, SystemKind::Original) };
        assert_eq!(run(&sys, &QueueState::zeros(1), &cfg), Err(SimError::ZeroSteps));
    }

    #[test]
    fn run_is_deterministic() {
        let sys = bernoulli_params(&[0.4, 0.6], &[0.05, 0.1]);
        let cfg = SimConfig::new(5000, 11, SystemKind::Dominant);
        let a = run(&sys, &QueueState::zeros(2), &cfg).unwrap();
        let b = run(&sys, &QueueState::zeros(2), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_overflow_reports_slot() {
        let sys = SystemParams::new(
            vec![0.5],
            vec![ArrivalDist::constant(u64::MAX / 2)],
        )
        .unwrap();
        let cfg = SimConfig::new(10, 0, SystemKind::Original);
        let err = run(&sys, &QueueState::zeros(1), &cfg).unwrap_err();
        match err {
            SimError::Overflow { slot, queue } => {
                assert_eq!(queue, 0);
                assert!(slot >= 1, "overflow cannot happen before slot 1, got {slot}");
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn trace_respects_stride() {
        let sys = bernoulli_params(&[0.4], &[0.2]);
        let mut cfg = SimConfig::new(10, 3, SystemKind::Original);
        cfg.record_trace = true;
        cfg.trace_stride = 4;
        let result = run(&sys, &QueueState::zeros(1), &cfg).unwrap();
        let trace = result.trace.unwrap();
        let slots: Vec<u64> = trace.iter().map(|(s, _)| *s).collect();
        assert_eq!(slots, vec![0, 4, 8]);
    }

    #[test]
    fn dominance_never_violated() {
        let sys = bernoulli_params(&[0.3, 0.5, 0.7, 0.4], &[0.02, 0.03, 0.01, 0.02]);
        for seed in 0..20 {
            let cfg = SimConfig::new(20_000, seed, SystemKind::Dominant);
            let report = run_coupled_dominance(&sys, &QueueState::zeros(4), &cfg).unwrap();
            assert_eq!(report.violations, 0, "seed {seed}");
        }
    }

    #[test]
    fn single_queue_systems_coincide() {
        let sys = bernoulli_params(&[0.35], &[0.2]);
        let q0 = QueueState(vec![2]);
        let cfg_o = SimConfig::new(50_000, 5, SystemKind::Original);
        let cfg_d = SimConfig { system: SystemKind::Dominant, ..cfg_o.clone() };
        let a = run(&sys, &q0, &cfg_o).unwrap();
        let b = run(&sys, &q0, &cfg_d).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.departures, b.departures);
    }

    #[test]
    fn order_preservation_never_violated() {
        let sys = bernoulli_params(&[0.3, 0.5, 0.7], &[0.05, 0.05, 0.05]);
        for seed in 0..20 {
            let cfg = SimConfig::new(20_000, seed, SystemKind::Dominant);
            let report = run_coupled_order(
                &sys,
                &QueueState::zeros(3),
                &QueueState(vec![3, 1, 4]),
                &cfg,
            )
            .unwrap();
            assert_eq!(report.violations, 0, "seed {seed}");
        }
    }

    #[test]
    fn order_rejects_incomparable_starts() {
        let sys = bernoulli_params(&[0.3, 0.5], &[0.05, 0.05]);
        let cfg = SimConfig::new(10, 0, SystemKind::Dominant);
        let err = run_coupled_order(
            &sys,
            &QueueState(vec![1, 0]),
            &QueueState(vec![0, 1]),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Incomparable { .. }));
    }

    #[test]
    fn equal_starts_stay_equal() {
        let sys = bernoulli_params(&[0.3, 0.5], &[0.1, 0.1]);
        let cfg = SimConfig::new(10_000, 3, SystemKind::Dominant);
        let q0 = QueueState(vec![2, 2]);
        let report = run_coupled_order(&sys, &q0, &q0, &cfg).unwrap();
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn drift_limit_stable_chain_near_zero() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.05, 0.05]);
        let est =
            estimate_drift_limit(&sys, 1, &QueueState::zeros(2), 20_000, 8, 17).unwrap();
        // V >= 0 and V(x0) = 0, so the estimate is nonnegative and decays
        // like (stationary V) / horizon for a stable chain.
        assert!(est.mean >= 0.0);
        assert!(est.mean <= est.half_width + 1e-3, "{est:?}");
    }

    #[test]
    fn drift_limit_busy_chain_matches_constant_drift() {
        // Symmetric two-queue system with constraint value 1.5: the busy
        // drift of V_2 is 0.5 per slot while both queues stay loaded.
        let sys = bernoulli_params(&[0.5, 0.5], &[0.375, 0.375]);
        let x0 = QueueState(vec![500_000, 500_000]);
        let est = estimate_drift_limit(&sys, 1, &x0, 20_000, 8, 23).unwrap();
        assert!(
            (est.mean - 0.5).abs() <= est.half_width.max(0.02),
            "expected ~0.5, got {est:?}"
        );
    }

    #[test]
    fn drift_limit_is_deterministic() {
        let sys = bernoulli_params(&[0.5, 0.5], &[0.05, 0.05]);
        let a = estimate_drift_limit(&sys, 0, &QueueState::zeros(2), 2000, 2, 9).unwrap();
        let b = estimate_drift_limit(&sys, 0, &QueueState::zeros(2), 2000, 2, 9).unwrap();
        assert_eq!(a, b);
        assert!(estimate_drift_limit(&sys, 0, &QueueState::zeros(2), 10, 2, 9).is_err());
    }

    #[test]
    fn outcome_walk_probabilities_sum_to_one() {
        let sys = SystemParams::new(
            vec![0.3, 0.6],
            vec![
                ArrivalDist::from_pmf([(0, 0.5), (1, 0.25), (2, 0.25)]).unwrap(),
                ArrivalDist::bernoulli(0.4).unwrap(),
            ],
        )
        .unwrap();
        let mut total = 0.0;
        let mut seen = 0u64;
        for_each_slot_outcome(&sys, |_, _, prob| {
            total += prob;
            seen += 1;
        });
        assert_eq!(seen as u128, outcome_count(&sys));
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_departures_match_conditional_law() {
        // Frequency of departures conditioned on the busy signature must
        // track r_j within 3-sigma binomial bounds.
        let sys = bernoulli_params(&[0.5, 0.4, 0.3], &[0.15, 0.15, 0.15]);
        let slots = 400_000u64;
        let mut q = vec![1u64, 1, 1];
        let mut inputs_buf = SlotInputs::zeros(3);
        let mut departures = vec![false; 3];
        let mut sig_slots = std::collections::HashMap::new();
        let mut sig_departures = std::collections::HashMap::new();
        for slot in 0..slots {
            sample_inputs_into(&sys, 99, slot, &mut inputs_buf);
            let sig: Vec<bool> = q.iter().map(|&x| x > 0).collect();
            apply_slot(SystemKind::Dominant, &mut q, &inputs_buf, &mut departures).unwrap();
            *sig_slots.entry(sig.clone()).or_insert(0u64) += 1;
            let entry = sig_departures.entry(sig).or_insert(vec![0u64; 3]);
            for k in 0..3 {
                entry[k] += u64::from(departures[k]);
            }
        }
        let mut conditioned_total = 0u64;
        for (sig, &n) in &sig_slots {
            if n < 5000 {
                continue;
            }
            conditioned_total += n;
            let state = QueueState(sig.iter().map(|&b| u64::from(b)).collect());
            let r = success_probs(&sys, &state);
            assert_eq!(busy_signature(&state), *sig);
            for k in 0..3 {
                let observed = sig_departures[sig][k] as f64 / n as f64;
                let sigma = (r[k] * (1.0 - r[k]) / n as f64).sqrt();
                assert!(
                    (observed - r[k]).abs() <= 3.0 * sigma + 1.0 / n as f64,
                    "sig {sig:?} queue {k}: observed {observed}, expected {}",
                    r[k]
                );
            }
        }
        assert!(conditioned_total >= 100_000);
    }
}
