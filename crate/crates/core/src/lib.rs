//! Inverse design of a periodic dielectric environment around a qubit chain.
//!
//! The crate is organised bottom-up:
//!
//! * [`em`] evaluates dyadic Green's functions: the analytic free-space tensor,
//!   a coupled-dipole solver for voxelised dielectrics (full 3D and an
//!   axisymmetric ring-reduced variant) and first-order Born sensitivities.
//! * [`chain`] places the qubits, tiles the unit-cell design along the chain and
//!   turns Green's tensors into the coherent (`J`) and dissipative (`Γ`)
//!   coupling matrices of the master equation.
//! * [`optimizer`] runs the two-stage greedy topology optimisation.
//! * [`quantum`] diagonalises the single-excitation Hamiltonian and propagates
//!   the open-system dynamics.
//! * [`topo`] provides winding numbers, edge metrics and the disorder Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chain;
pub mod em;
mod error;
pub mod optimizer;
pub mod quantum;
pub mod topo;
pub mod units;

pub use error::{Error, Result};
