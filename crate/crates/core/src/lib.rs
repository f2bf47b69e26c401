//! Bit-accurate, command-level model of a processing-using-DRAM substrate
//! with fine-grained (per-mat) activation: DRAM mats and compute rows,
//! majority-based microprograms, the inter/intra-mat interconnect, the
//! memory-controller control unit, and the PuD-aware allocator.
//!
//! Timing and energy are generic over [`Scalar`]; the aliases below fix the
//! two common choices.

pub mod alloc;
pub mod config;
pub mod control;
pub mod dram;
pub mod error;
pub mod geometry;
pub mod interconnect;
pub mod isa;
pub mod scalar;
pub mod uprog;

pub use error::{Error, Result};
pub use scalar::{Rational, Scalar};

pub type Timing = interconnect::TimingParams<f64>;
pub type ExactTiming = interconnect::TimingParams<Rational>;
pub type Energy = control::EnergyModel<f64>;
pub type ExactEnergy = control::EnergyModel<Rational>;
pub type Controller = control::ControlUnit<f64>;
pub type ExactController = control::ControlUnit<Rational>;
