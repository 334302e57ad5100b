//! Simulation toolkit for SNAIL-based Josephson traveling-wave parametric
//! amplifiers.
//!
//! Two engines share one device description:
//!
//! * [`cme`] evaluates closed-form coupled-mode predictions for four-wave
//!   mixing gain and third-harmonic generation, with an ODE integrator as
//!   an independent cross-check.
//! * [`transient`] runs full time-domain simulations of the N-cell
//!   nonlinear ladder with per-junction critical-current disorder, and
//!   [`spectral`] turns the steady-state waveforms into calibrated tone
//!   powers (pump-on/pump-off gain, SHG, THG).
//!
//! [`sweep`] drives both engines over flux/power/disorder grids, in
//! parallel when the `parallel` feature (default) is enabled.

pub mod cme;
pub mod constants;
pub mod exec;
pub mod io;
pub mod snail;
pub mod spectral;
pub mod sweep;
pub mod transient;

pub use snail::{DeviceSpec, OperatingPoint, SnailGeometry};
