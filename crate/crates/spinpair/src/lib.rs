//! Spin-dynamics toolkit for a magnetically coupled NV-N defect pair in diamond.
//!
//! The crate is organised around a small dense-matrix core for spin
//! Hamiltonians (dimension <= 36) and a set of analysis layers on top of it:
//!
//! * [`system`] builds the pair Hamiltonian from a declarative description
//!   (spins, zero-field tensors, dipolar couplings, magnetic field).
//! * [`levels`] sweeps eigenlevels against the field and locates the level
//!   anticrossing of the |0,+1/2> / |-1,-1/2> branch pair.
//! * [`spectrum`] synthesises optically detected ESR spectra with doublet and
//!   hyperfine structure.
//! * [`dynamics`] simulates pulse sequences (Rabi, Hahn echo), extracts echo
//!   modulation spectra and fits exponential decays.
//! * [`poltransfer`] solves the rate model for cross-polarization of the N
//!   electron spin near the anticrossing.
//! * [`implant`] is the molecular-implantation straggling Monte Carlo.
//! * [`coherence`] collects closed-form bath/coherence estimators.
//!
//! Units are MHz, Gauss, nm and microseconds throughout.

pub mod constants;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod fft;
pub mod levels;
pub mod matrix;
pub mod numutil;
pub mod rng;
pub mod spectrum;
pub mod spin;
pub mod system;
pub mod tensor;

pub use error::{Result, SpinError};
pub use matrix::ComplexMatrix;
