//! Phase-space simulation engine for an attractive one-dimensional Bose field
//! on a ring.
//!
//! The crate integrates ensembles of classical field trajectories whose
//! initial conditions carry half a quantum of Gaussian noise per lattice mode,
//! so that ensemble averages of symmetrically ordered products converge to the
//! corresponding quantum expectation values.  Submodules, bottom to top:
//!
//! * [`grid`] — spectral lattice: positions, momenta, unitary transforms,
//!   exact derivatives and kinetic phase factors.
//! * [`init`] — bright-soliton coherent amplitude, per-trajectory noise
//!   sampling, and reproducible per-trajectory random streams.
//! * [`dynamics`] — interaction-picture fourth-order Runge–Kutta stepper for
//!   the cubic-nonlinearity field equation.
//! * [`observables`] — ordering corrections mapping ensemble moments to
//!   normally ordered densities and correlations, classical invariants,
//!   one-body eigenmodes, and batch statistics.
//! * [`ensemble`] — run plans, parallel trajectory orchestration with
//!   deterministic reduction, mean-field companion runs, and step-halving
//!   convergence checks.
//!
//! Units are dimensionless throughout: lengths are in units of the soliton
//! width, and time is scaled so a plane wave of momentum `k` accumulates
//! kinetic phase `-k^2 t`.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod init;
pub mod observables;

pub use error::SimError;
pub use grid::{Grid, GridMode};

/// Complex double — the element type of every field and spectrum.
pub type C64 = num_complex::Complex64;
