//! Stability and instability regions over arrival-rate vectors.
//!
//! For every ordering `eta` of the queues there is an open polytope of rate
//! vectors under which the dominant system is stable: position `j` of the
//! ordering must satisfy
//!
//! ```text
//! lambda[eta_j] / (p[eta_j] * v_j)  +  sum_{k < j} lambda[eta_k] / v_k  <  1
//! ```
//!
//! where `v_j` is the downstream-silence probability of position `j`. The
//! stability region `C` is the union of those polytopes over all orderings.
//! The instability region `D` unions, over orderings, the set where the
//! first position is still subcritical but every later position is
//! supercritical; on `D` the dominant system is unstable and, because it is
//! indistinguishable from the original system while all queues stay busy,
//! so is the original one. A weaker single-violated-position mode certifies
//! instability of the dominant system only.
//!
//! Membership is decided by strict inequality (the regions are open); the
//! boundary geometry is exported by bisection along rays rather than by any
//! float equality test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{downstream_silence_probs, Permutation, SystemParams};

/// Permutation scans are capped here by default; beyond this the caller
/// must supply candidate orderings explicitly.
pub const PERMUTATION_CAP: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("arrival rate lambda[{index}] = {value} must be nonnegative and finite")]
    InvalidRate { index: usize, value: f64 },
    #[error("rate vector has {actual} entries, system has {expected} queues")]
    Dimension { expected: usize, actual: usize },
    #[error(
        "{queues} queues means {queues}! orderings, above the cap of {cap}!; \
         supply an explicit ordering list"
    )]
    PermutationCap { queues: usize, cap: usize },
    #[error("no candidate orderings supplied")]
    NoOrderings,
    #[error("operation requires {expected} queues, system has {actual}")]
    WrongDimension { expected: usize, actual: usize },
    #[error("boundary geometry is exported for 2 or 3 queues only, got {queues}")]
    GeometryDimension { queues: usize },
    #[error("slice coordinate {index} out of range for {queues} queues")]
    SliceIndex { index: usize, queues: usize },
    #[error("resolution must be >= 1")]
    ZeroResolution,
    #[error("ray {direction:?} never left the region; region should be bounded")]
    UnboundedRay { direction: Vec<f64> },
}

/// Left-hand sides of the per-position stability conditions for one ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintProfile {
    pub eta: Permutation,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipStatus {
    StableSufficient,
    UnstableSufficient,
    Inconclusive,
}

/// Which instability test produced an unstable verdict. The default test
/// certifies instability of the original system; the dominant-only test is
/// weaker and speaks only for the dominant system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    Default,
    DominantOnly,
}

/// Outcome of a region query, with the witnessing ordering when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipVerdict {
    pub status: MembershipStatus,
    pub witness: Option<Permutation>,
    pub profile: Option<ConstraintProfile>,
    /// Set on unstable verdicts: which mode certified them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<RegionMode>,
}

impl MembershipVerdict {
    fn inconclusive() -> Self {
        Self { status: MembershipStatus::Inconclusive, witness: None, profile: None, mode: None }
    }
}

fn validate_rates(params: &SystemParams, lambda: &[f64]) -> Result<(), RegionError> {
    if lambda.len() != params.queue_count() {
        return Err(RegionError::Dimension {
            expected: params.queue_count(),
            actual: lambda.len(),
        });
    }
    for (index, &value) in lambda.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(RegionError::InvalidRate { index, value });
        }
    }
    Ok(())
}

/// Evaluate the per-position condition values for one ordering.
pub fn constraint_profile(
    params: &SystemParams,
    eta: &Permutation,
    lambda: &[f64],
) -> Result<ConstraintProfile, RegionError> {
    validate_rates(params, lambda)?;
    let p = params.attempt_probs();
    let v = downstream_silence_probs(params, eta);
    let mut values = Vec::with_capacity(eta.len());
    let mut prefix = 0.0; // sum over earlier positions of lambda / v
    for pos in 0..eta.len() {
        let queue = eta.at(pos);
        values.push(lambda[queue] / (p[queue] * v[pos]) + prefix);
        prefix += lambda[queue] / v[pos];
    }
    Ok(ConstraintProfile { eta: eta.clone(), values })
}

fn default_orderings(params: &SystemParams) -> Result<Vec<Permutation>, RegionError> {
    let queues = params.queue_count();
    if queues > PERMUTATION_CAP {
        return Err(RegionError::PermutationCap { queues, cap: PERMUTATION_CAP });
    }
    Ok(Permutation::enumerate(queues).collect())
}

/// Stability membership over an explicit list of orderings, first witness
/// in list order.
pub fn in_stability_region_with(
    params: &SystemParams,
    lambda: &[f64],
    tol: f64,
    orderings: &[Permutation],
) -> Result<MembershipVerdict, RegionError> {
    validate_rates(params, lambda)?;
    if orderings.is_empty() {
        return Err(RegionError::NoOrderings);
    }
    for eta in orderings {
        let profile = constraint_profile(params, eta, lambda)?;
        if profile.values.iter().all(|&value| value < 1.0 - tol) {
            return Ok(MembershipVerdict {
                status: MembershipStatus::StableSufficient,
                witness: Some(eta.clone()),
                profile: Some(profile),
                mode: None,
            });
        }
    }
    Ok(MembershipVerdict::inconclusive())
}

/// Is `lambda` in the stability region `C`? Scans all orderings in
/// lexicographic order and reports the first witness.
pub fn in_stability_region(
    params: &SystemParams,
    lambda: &[f64],
    tol: f64,
) -> Result<MembershipVerdict, RegionError> {
    let orderings = default_orderings(params)?;
    in_stability_region_with(params, lambda, tol, &orderings)
}

/// Instability membership over an explicit ordering list.
pub fn in_instability_region_with(
    params: &SystemParams,
    lambda: &[f64],
    tol: f64,
    mode: RegionMode,
    orderings: &[Permutation],
) -> Result<MembershipVerdict, RegionError> {
    validate_rates(params, lambda)?;
    if orderings.is_empty() {
        return Err(RegionError::NoOrderings);
    }
    for eta in orderings {
        let profile = constraint_profile(params, eta, lambda)?;
        let hit = match mode {
            RegionMode::Default => {
                profile.values[0] < 1.0 - tol
                    && profile.values.len() > 1
                    && profile.values[1..].iter().all(|&value| value > 1.0 + tol)
            }
            RegionMode::DominantOnly => {
                profile.values.iter().any(|&value| value > 1.0 + tol)
            }
        };
        if hit {
            return Ok(MembershipVerdict {
                status: MembershipStatus::UnstableSufficient,
                witness: Some(eta.clone()),
                profile: Some(profile),
                mode: Some(mode),
            });
        }
    }
    Ok(MembershipVerdict::inconclusive())
}

/// Is `lambda` in the instability region `D`?
pub fn in_instability_region(
    params: &SystemParams,
    lambda: &[f64],
    tol: f64,
    mode: RegionMode,
) -> Result<MembershipVerdict, RegionError> {
    let orderings = default_orderings(params)?;
    in_instability_region_with(params, lambda, tol, mode, &orderings)
}

/// Stable if in `C`, unstable if in `D` (default mode), else inconclusive.
/// No rate vector can satisfy both sufficient conditions.
pub fn classify(
    params: &SystemParams,
    lambda: &[f64],
    tol: f64,
) -> Result<MembershipVerdict, RegionError> {
    let stable = in_stability_region(params, lambda, tol)?;
    if stable.status == MembershipStatus::StableSufficient {
        return Ok(stable);
    }
    let unstable = in_instability_region(params, lambda, tol, RegionMode::Default)?;
    if unstable.status == MembershipStatus::UnstableSufficient {
        return Ok(unstable);
    }
    Ok(MembershipVerdict::inconclusive())
}

/// The thirteen named boundary landmarks of the three-queue region, keyed
/// by their conventional labels.
pub fn boundary_vertices(
    params: &SystemParams,
) -> Result<BTreeMap<&'static str, [f64; 3]>, RegionError> {
    if params.queue_count() != 3 {
        return Err(RegionError::WrongDimension { expected: 3, actual: params.queue_count() });
    }
    let p = params.attempt_probs();
    let (p1, p2, p3) = (p[0], p[1], p[2]);
    let (q1, q2, q3) = (1.0 - p1, 1.0 - p2, 1.0 - p3);
    let mut map = BTreeMap::new();
    map.insert("A", [p1, 0.0, 0.0]);
    map.insert("B", [0.0, p2, 0.0]);
    map.insert("C", [0.0, 0.0, p3]);
    map.insert("O", [p1 * q2 * q3, q1 * p2 * q3, q1 * q2 * p3]);
    map.insert("alpha", [p1 * q2, q1 * p2, 0.0]);
    map.insert("beta", [0.0, p2 * q3, q2 * p3]);
    map.insert("gamma", [p1 * q3, 0.0, q1 * p3]);
    map.insert("P", [p1 * q2, 0.0, 0.0]);
    map.insert("Q", [0.0, q1 * p2, 0.0]);
    map.insert("X", [p1 * q3, 0.0, q1 * q2 * p3]);
    map.insert("Y", [0.0, p2 * q3, q1 * q2 * p3]);
    map.insert("E", [0.0, q1 * p2 * q3, q1 * q2 * p3]);
    map.insert("F", [p1 * q2 * q3, 0.0, q1 * q2 * p3]);
    Ok(map)
}

/// One sampled point of the stability boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub lambda: Vec<f64>,
    pub witness: Permutation,
    /// 0-based position of the binding condition of the witnessing ordering.
    pub active_constraint: usize,
}

/// Sample the boundary of `C` along rays from the origin, to relative
/// tolerance 1e-9 in the ray parameter. `slice` pins one coordinate to a
/// fixed value while the remaining coordinates sweep a simplex grid of the
/// given resolution.
pub fn boundary_samples(
    params: &SystemParams,
    resolution: usize,
    slice: Option<(usize, f64)>,
) -> Result<Vec<BoundaryPoint>, RegionError> {
    let queues = params.queue_count();
    if !(queues == 2 || queues == 3) {
        return Err(RegionError::GeometryDimension { queues });
    }
    if resolution == 0 {
        return Err(RegionError::ZeroResolution);
    }
    if let Some((index, value)) = slice {
        if index >= queues {
            return Err(RegionError::SliceIndex { index, queues });
        }
        if !(value >= 0.0 && value.is_finite()) {
            return Err(RegionError::InvalidRate { index, value });
        }
    }

    let free: Vec<usize> = (0..queues).filter(|&k| Some(k) != slice.map(|(i, _)| i)).collect();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    match free.len() {
        1 => directions.push(vec![1.0]),
        2 => {
            for i in 0..=resolution {
                let a = i as f64 / resolution as f64;
                directions.push(vec![a, 1.0 - a]);
            }
        }
        3 => {
            for i in 0..=resolution {
                for j in 0..=(resolution - i) {
                    let a = i as f64 / resolution as f64;
                    let b = j as f64 / resolution as f64;
                    directions.push(vec![a, b, 1.0 - a - b]);
                }
            }
        }
        _ => unreachable!(),
    }

    let point_at = |direction: &[f64], t: f64| -> Vec<f64> {
        let mut lambda = vec![0.0; queues];
        if let Some((index, value)) = slice {
            lambda[index] = value;
        }
        for (slot, &k) in free.iter().enumerate() {
            lambda[k] = t * direction[slot];
        }
        lambda
    };

    let orderings = default_orderings(params)?;
    let inside = |lambda: &[f64]| -> Result<bool, RegionError> {
        Ok(in_stability_region_with(params, lambda, 0.0, &orderings)?.status
            == MembershipStatus::StableSufficient)
    };

    let mut points = Vec::new();
    for direction in &directions {
        if !inside(&point_at(direction, 0.0))? {
            continue; // slice offset already outside the region
        }
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        let mut expansions = 0;
        while inside(&point_at(direction, hi))? {
            lo = hi;
            hi *= 2.0;
            expansions += 1;
            if expansions > 64 {
                return Err(RegionError::UnboundedRay { direction: direction.clone() });
            }
        }
        while hi - lo > 1e-9 * hi {
            let mid = 0.5 * (lo + hi);
            if inside(&point_at(direction, mid))? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = point_at(direction, lo);
        let verdict = in_stability_region_with(params, &lambda, 0.0, &orderings)?;
        let profile = verdict.profile.expect("lo is inside by construction");
        let active_constraint = profile
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(pos, _)| pos)
            .unwrap_or(0);
        points.push(BoundaryPoint {
            lambda,
            witness: profile.eta.clone(),
            active_constraint,
        });
    }
    Ok(points)
}

/// CSV export of boundary samples: floats carry 17 significant digits,
/// orderings print as dash-joined 1-based queue numbers.
pub fn boundary_csv(points: &[BoundaryPoint], queues: usize) -> String {
    let mut out = String::new();
    for j in 1..=queues {
        out.push_str(&format!("lambda_{j},"));
    }
    out.push_str("witness_eta,active_constraint_j\n");
    for point in points {
        for value in &point.lambda {
            out.push_str(&format!("{value:.16e},"));
        }
        let eta: Vec<String> =
            point.witness.one_based().iter().map(|i| i.to_string()).collect();
        out.push_str(&format!("{},{}\n", eta.join("-"), point.active_constraint + 1));
    }
    out
}

/// Largest symmetric rate `lambda` such that `(lambda, ..., lambda)` lies in
/// `C` for `queues` identical queues with attempt probability `p`. All
/// identity-ordering conditions coincide in the symmetric case, giving the
/// closed form `p * (1-p)^(queues-1)`; this computes the condition
/// coefficients directly and takes the tightest.
pub fn symmetric_sup_lambda(p: f64, queues: usize) -> Result<f64, RegionError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RegionError::InvalidRate { index: 0, value: p });
    }
    if queues == 0 {
        return Err(RegionError::WrongDimension { expected: 1, actual: 0 });
    }
    let pbar = 1.0 - p;
    let mut prefix = 0.0; // sum over earlier positions of 1 / v
    let mut best = f64::INFINITY;
    for pos in 0..queues {
        let v = pbar.powi((queues - 1 - pos) as i32);
        let coefficient = 1.0 / (p * v) + prefix;
        prefix += 1.0 / v;
        best = best.min(1.0 / coefficient);
    }
    Ok(best)
}
