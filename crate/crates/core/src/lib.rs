//! Numerical laboratory for the response of a lattice-dressed particle to an
//! applied force.
//!
//! The crate is organized around four stages that mirror how such an
//! experiment is actually run and analyzed:
//!
//! - [`bandstructure`]: plane-wave diagonalization of the periodic potential,
//!   exposing band energies, Bloch coefficients, effective masses, momentum
//!   matrix elements, and Lax connections.
//! - [`analytic`]: closed-form and first-order-in-force predictions for the
//!   acceleration and velocity of a narrow wavepacket, including the
//!   decomposition into intraband, interband, and coherence contributions.
//! - [`propagator`]: non-perturbative split-step (Strang) time evolution of
//!   the 1D wavefunction under lattice + linear force, with synthetic
//!   time-of-flight expansion.
//! - [`analysis`]: the measurement pipeline — Gaussian-comb diffraction fits,
//!   weighted velocity reconstruction, two-sinusoid fits, and extraction of
//!   effective and dynamical masses.
//!
//! All internal computation uses recoil units (`E_r`, `ħk_r`, `1/k_r`,
//! `t_r = ħ/E_r`); conversion to SI happens only at I/O boundaries via
//! [`units::LatticeConfig`].

pub mod analysis;
pub mod analytic;
pub mod bandstructure;
pub mod error;
pub mod fit;
pub mod io;
pub mod pipeline;
pub mod propagator;
pub mod quad;
pub mod trace;
pub mod tridiag;
pub mod units;

pub use analysis::{DiffractionFit, MassEstimate, TwoSineFit};
pub use analytic::{AccelDecomposition, WavepacketSpec};
pub use bandstructure::{BandData, KGrid};
pub use error::{Error, Result};
pub use propagator::{ForceSchedule, GridSpec, Profile, Wavefunction};
pub use trace::VelocityTrace;
pub use units::LatticeConfig;
