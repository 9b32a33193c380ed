//! Numerical laboratory for optimal control of delay SDEs under volatility
//! uncertainty (G-Brownian motion).
//!
//! * [`gcalc`]: the G operator, G-heat solver, G-normal tables and samplers.
//! * [`sdde`]: Euler–Maruyama for controlled delay equations.
//! * [`relaxed`]: relaxed controls, chattering, and cost functionals.
//! * [`fbsdde`]: least-squares Monte Carlo for the backward equation.
//! * [`econ`]: the capital-accumulation model wired end to end.

pub mod error;
pub mod gcalc;
pub mod output;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub mod relaxed;
pub mod sdde;

pub mod econ;
pub mod fbsdde;
mod par;
