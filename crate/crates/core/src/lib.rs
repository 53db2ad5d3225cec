//! Quantum free fall of antihydrogen released above a reflecting mirror.
//!
//! The modules follow the atom from the trap to the detector: [`physcore`]
//! holds constants and gravitational scales, [`airy`] the Airy functions and
//! their zeros, [`source`] the trap and the photo-detachment recoil, [`gqs`]
//! the quantum states between mirror and absorber, [`mirror`] the travel over
//! the mirror and [`freefall`] the fall to the detector plate. [`experiment`]
//! ties them into one configuration and [`inference`] samples events and
//! estimates `g` from them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod airy;
pub mod error;
pub mod experiment;
pub mod freefall;
pub mod gqs;
pub mod inference;
pub mod mirror;
pub mod physcore;
pub mod quadrature;
pub mod source;

pub use error::{Error, Result};

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
