//! Simulation and ergodicity diagnostics for ODE systems whose right-hand
//! side switches along a semi-Markov jump process with state-dependent rates
//! and transition matrices.
//!
//! The crate is organized in layers:
//! - [`dynamics`]: vector fields, flows, Lie brackets, submersion probes;
//! - [`law`] / [`switching`]: holding-time laws and the conditional kernel;
//! - [`process`]: the (X, τ, I) process, its state space K and simulation;
//! - [`ergodicity`]: Lyapunov drift checks and the semigroup iteration;
//! - [`accessibility`]: admissible control sequences and constructive
//!   accessibility planning;
//! - [`estimators`]: occupation measures, total-variation diagnostics and
//!   invasion rates;
//! - [`scenarios`]: ready-made example systems.

pub mod accessibility;
pub mod dynamics;
pub mod ergodicity;
pub mod error;
pub mod estimators;
pub mod integrate;
pub mod law;
pub mod process;
pub mod quad;
pub mod rng;
pub mod scenarios;
pub mod semigroup;
pub mod stats;
pub mod switching;

pub use dynamics::{BracketMode, BracketOptions, ControlSequence, FlowRange, VectorFieldSpec};
pub use error::{Result, SimError};
pub use integrate::{FlowConfig, IntegratorKind, Point};
pub use law::{HoldingLaw, LawKind, SupportSet};
pub use process::{
    expected_jump_bound, in_k, in_k_m, simulate, simulate_replicas, CompactSet, HybridState,
    SimOptions, TrajectoryRecord,
};
pub use switching::{JumpMatrix, RateFunction, SwitchedSystem};
