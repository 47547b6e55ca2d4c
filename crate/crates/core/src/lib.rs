//! Numerical laboratory for the heat equation in exterior domains.
//!
//! The crate covers the half-line, the complement of a centred ball in
//! `R^d` (`d >= 2`) and the full space as a baseline. It evaluates the
//! harmonic profile `phi` and the closed-form kernels, tabulates the
//! normalisation of the transient equilibria, evolves radial solutions,
//! rescales them to self-similar variables and measures relative entropy,
//! Fisher information and log-Sobolev constants. [`verify`] turns these into
//! rate fits and [`cli`] into a batch tool.

pub mod cli;
pub mod config;
pub mod entropy;
pub mod error;
pub mod evolve;
pub mod geometry;
pub mod kernels;
pub mod lsi;
pub mod normalization;
pub mod quad;
pub mod snapshot;
pub mod verify;

pub use error::{Error, Result};
