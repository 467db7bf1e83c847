//! Stability analysis toolkit for the finite-user slotted Aloha collision
//! channel.
//!
//! The crate is organized around one queueing model and four ways of
//! interrogating it:
//!
//! * [`model`] — system parameters and the exact per-slot success-probability
//!   calculus of the dominant (dummy-packet) system.
//! * [`simulate`] — seeded slot-by-slot simulation of the original and
//!   dominant systems, including coupled runs under common random numbers
//!   that check pathwise dominance and order preservation.
//! * [`regions`] — the permutation-union stability region `C` and
//!   instability region `D` over arrival-rate vectors, with boundary
//!   geometry export.
//! * [`drift`] — Lyapunov functions, their closed-form one-step drifts,
//!   exact drifts by outcome enumeration, and the transience drift of the
//!   bounded Lyapunov function `1 - theta^V`.
//! * [`kernel`] — exact finite-chain calculus on a truncated copy of the
//!   chain: k-step drifts, drift-decomposition identities, stationary
//!   distributions, and a brute-force stochastic-order checker.
//!
//! All operations are deterministic functions of their inputs; simulation
//! randomness comes from a counter-based generator keyed by
//! `(seed, slot, stream)` so coupled experiments share exactly the same
//! draws.

pub mod drift;
pub mod kernel;
pub mod model;
mod numeric;
pub mod regions;
pub mod simulate;

pub use drift::{DriftReport, LyapunovSpec};
pub use kernel::{DriftVector, FiniteKernel, LevelDecomposition};
pub use model::{ArrivalDist, ModelError, Permutation, QueueState, SystemParams};
pub use regions::{ConstraintProfile, MembershipStatus, MembershipVerdict, RegionMode};
pub use simulate::{SimConfig, SimResult, SlotInputs, SystemKind};
