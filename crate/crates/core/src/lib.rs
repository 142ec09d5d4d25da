//! Ramsey spectroscopy of a single impurity in a thermal ultracold gas.
//!
//! The crate covers both directions of the problem:
//!
//! * forward: the microscopic dephasing model (density field of the bath,
//!   thermally distributed collision energies, energy-dependent scattering
//!   length near a Feshbach resonance) synthesizes Ramsey fringes;
//! * inverse: the fringe-analysis pipeline (normalization, per-time fringe
//!   fits, visibility decay, interaction phase slope), the calibration fits
//!   and the density/temperature inference built on top of them.
//!
//! All quantities are strict SI internally (J, s, m, T, rad/s). The [`config`]
//! and [`cli`] layers accept convenience units and convert at the boundary.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bath;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod fit;
pub mod inference;
pub mod io;
pub mod phys;
pub mod quadrature;
pub mod scattering;

pub use error::{Error, Result};
