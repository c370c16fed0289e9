//! Deterministic solver and verification suite for a collisional kinetic gas
//! on the periodic torus under a static external potential.
//!
//! The crate is organized around the pipeline of a run:
//!
//! * [`potential`] — the trigonometric external potential, its derivatives and
//!   its degenerate directions.
//! * [`phase_space`] — grids, distribution fields, Maxwellians, weights,
//!   interpolation and norms.
//! * [`characteristics`] — backward bi-characteristics, the Hamiltonian, the
//!   flow Jacobian det(∂X/∂v) and scans of its near-singular set.
//! * [`collision`] — the cutoff hard-potential collision machinery: gain/loss
//!   quadratures, the collision frequency, the linearized kernel and its
//!   verified bounds.
//! * [`solver`] — the local fixed-point iteration and the semi-Lagrangian
//!   time marcher for the mild formulation, plus scenario configuration.
//! * [`diagnostics`] — conservation, entropy, decay-rate fitting and the
//!   per-step diagnostics ledger.

pub mod characteristics;
pub mod collision;
pub mod diagnostics;
pub mod error;
pub mod geom;
pub mod phase_space;
pub mod potential;
pub mod solver;

pub use error::CoreError;
pub use phase_space::{DistributionField, FieldKind, PhaseGrid, WeightParams};
pub use potential::{DegenerateSubspace, PotentialField};
