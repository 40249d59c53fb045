//! Equivalent-circuit electro-thermal modeling (ECTM) of battery surface
//! temperature.
//!
//! The battery is modeled as a first-order RC thermal circuit: generated heat
//! plays the role of a current source, surface temperature is the capacitor
//! voltage, and ambient temperature is the voltage sink behind the thermal
//! resistance. Heat generation is approximated by a data-driven polynomial of
//! state of charge together with measured current and terminal voltage, which
//! makes the discrete-time temperature recursion linear in a reparameterized
//! coefficient vector. Those coefficients can then be identified from a single
//! charging or discharging cycle by (optionally box-constrained) least squares
//! and used to predict temperature profiles of later, degraded cycles.
//!
//! Module layout:
//!
//! - [`model`] — domain types and pure simulation kernels (SOC coulomb
//!   counting, heat generation, thermal step in physical and linear form).
//! - [`identify`] — design-matrix construction and the least-squares solvers.
//! - [`datasets`] — CSV ingestion, the canonical cycle schema, uniform-grid
//!   resampling and capacity-fade bookkeeping.
//! - [`eval`] — prediction metrics, synthetic cycle generation and profile
//!   export.
//! - [`cli`] — the `ectm` command-line front end.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod identify;
pub mod model;

pub use error::{Error, Result};
