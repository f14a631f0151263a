//! Wick-ordered diagram combinatorics, time-ordered oscillatory integrals, lattice
//! spectra and kinetic solvers for cubic Schrödinger turbulence on a torus.

pub mod acceptance;
pub mod cli;
pub mod combinatorics;
pub mod config;
pub mod decorations;
pub mod error;
pub mod kinetic;
pub mod montecarlo;
pub mod oscillatory;
pub mod quad;
pub mod spectra;
pub mod timeorder;

pub use error::{Error, Result};
