//! Core numerics for a two-player misdirection game with linear-quadratic
//! dynamics.
//!
//! The blue side steers a velocity/position pair `(V, Y)` toward a reference
//! while deliberately perturbing the observable position so that a
//! likelihood-ratio test run on `Y` drifts toward a chosen alternative
//! pattern. Its optimal feedback controls come from a six-component backward
//! Riccati system. The red side, leading a Stackelberg game, picks the
//! alternative pattern itself, trading the expected log-likelihood ratio
//! against a trust-region penalty.
//!
//! Modules map onto the pipeline:
//!
//! - [`model`]: parameters, time grids, sampled time patterns
//! - [`riccati`]: backward coefficient ODE system and its RK4 solver
//! - [`controls`]: feedback laws, value function, cost integrands
//! - [`simulate`]: Euler-Maruyama paths and Monte Carlo cost estimates
//! - [`sht`]: likelihood-ratio statistics and forward moment ODEs
//! - [`redopt`]: penalized pattern optimization (FPI, FBS, parametric GD)
//! - [`diagnostics`]: runtime property checks shared by tests and the CLI
//!
//! The crate is `no_std`-compatible (with `alloc`); disable the default
//! `std` feature to drop the standard library. All outputs are deterministic:
//! Monte Carlo noise comes from a counter-based generator keyed by
//! `(seed, path, step, channel)`, so ensembles are bit-identical across runs
//! and across any path scheduling.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controls;
pub mod diagnostics;
mod error;
pub mod math;
pub mod model;
pub mod redopt;
pub mod riccati;
pub mod rng;
pub mod sht;
pub mod simulate;

pub use error::{Error, Result};
