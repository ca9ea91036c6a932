//! Radial numerics for minimal-mass blow-up of the mass-critical nonlinear
//! Schrödinger equation with an inverse-power potential `± |x|^{-2σ} u`.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod blowup_law;
pub mod error;
pub mod evolve;
pub mod ground_state;
pub mod harness;
pub mod linops;
pub mod modulation;
pub mod profile;
pub mod radial_core;

pub use error::{LabError, Result};
