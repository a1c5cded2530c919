//! Forward simulation and inverse fitting for hybrid spin–magnon systems.
//!
//! The crate is organised along the physical pipeline:
//!
//! * [`spin_levels`] diagonalizes the single-ion spin Hamiltonian and yields the
//!   qubit transition frequency as a function of field.
//! * [`afm_modes`] finds the static equilibrium of a two-sublattice (or layered)
//!   antiferromagnet and its linearized Landau–Lifshitz modes.
//! * [`hybrid_response`] couples both through input–output theory into a
//!   transmission map `S21(B0, f)`.
//! * [`saturation`] models the drive-power dependence of the spin ensemble.
//! * [`specfit`] goes the other way: background processing, Lorentzian dip fits
//!   and coupling/cooperativity extraction.
//! * [`io`] holds the experiment configuration and the on-disk formats used by
//!   the `magnonqed` command-line tool.

pub mod afm_modes;
pub mod error;
pub mod hybrid_response;
pub mod io;
pub mod linalg;
pub mod saturation;
pub mod specfit;
pub mod spin_levels;
pub mod units;

pub use error::{Error, Result};
