//! Simulation and gate synthesis for qudits encoded in the Fock states of a
//! superconducting resonator, controlled through a multilevel artificial atom.
//!
//! - [`linalg`]: dense complex vectors/operators, tensor products, eigensolver.
//! - [`model`]: atom–resonator Hamiltonians and perturbative Stark shifts.
//! - [`spectrum`]: parameter sweeps, dressed-state labels, avoided crossings.
//! - [`plant`]: the simulated hardware (one pair or two coupled pairs), its
//!   idle dressed basis, drive and coupler operators.
//! - [`pulse`]: pulse segments, π-pulse calibration, and schedules.
//! - [`sequence`]: gate sequences compiled into schedules (single-qudit
//!   rotations, controlled phase) with swap and coupler calibration.
//! - [`propagator`]: time-domain simulation of schedules, tomography, readout.
//! - [`synth`]: two-level rotations, QR decomposition, nearest-neighbor routing.
//! - [`open_system`]: Lindblad dynamics by dense integration and trajectories.
//! - [`units`]: conversions between angular SI units and GHz/MHz/ns/μs.
//!
//! Frequencies are angular (rad/s) and times are in seconds throughout.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod open_system;
pub mod plant;
pub mod propagator;
pub mod pulse;
pub mod sequence;
pub mod spectrum;
pub mod synth;
pub mod units;

pub use error::{Error, Result};
pub use linalg::{Operator, QuantumState, C64};
pub use model::{SystemParams, TwoSystemParams};
