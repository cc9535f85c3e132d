//! Simulation and reconstruction of biphoton polarization qutrits.
//!
//! A qutrit here is the polarization state of a collinear, frequency-degenerate
//! two-photon field, written on the Fock basis `|2,0>, |1,1>, |0,2>`. The crate
//! covers the whole measurement chain:
//!
//! * [`state`], [`coherence`], [`poincare`]: state vectors, density matrices,
//!   fourth-order coherence moments, the two-point sphere picture and fidelities.
//! * [`optics`]: wave-plate coefficients, the 3x3 qutrit unitary and Brown-Twiss
//!   projection rows.
//! * [`protocol`]: instrumental matrices for the nine-setting protocol and the
//!   rotating control-plate protocol.
//! * [`simulate`]: seeded Poissonian coincidence counts, thinning and
//!   instrument-error injection.
//! * [`estimate`], [`mixture`]: least-squares and maximum-likelihood root
//!   estimation and quasi-Bayesian mixture separation.
//! * [`info`], [`stats`], [`study`]: Fisher information, the complete
//!   information matrix, informational fidelity and Monte Carlo studies.
//! * [`io`], [`cli`]: file formats and the `qutrit` command line.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coherence;
pub mod error;
pub mod estimate;
pub mod info;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod optics;
pub mod poincare;
pub mod protocol;
pub mod simulate;
pub mod state;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Hilbert-space dimension of a qutrit.
pub const DIM: usize = 3;

/// Number of physical real parameters fixed by an un-normalized pure state
/// (`2s - 1`: four shape parameters plus the total intensity).
pub const PHYSICAL_DOF: usize = 2 * DIM - 1;
