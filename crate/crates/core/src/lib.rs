//! Machine-learned interatomic potential engine built around a single shared
//! atomic neural network, with analytic forces, per-atom virial stress and
//! charge-equilibration electrostatics, plus closed-form electrode
//! chemo-mechanics analyzers and a charge/discharge cycling driver.
//!
//! Units are fixed throughout: Å, eV, amu, fs and elementary charge e.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calculator;
pub mod chemomech;
pub mod config;
pub mod cyclesim;
pub mod descriptors;
pub mod electrostatics;
pub mod elements;
pub mod error;
pub mod math;
pub mod neighbors;
pub mod network;
pub mod oracle;
pub mod potential;
pub mod structure;
pub mod training;
pub mod units;
pub mod validation;
pub mod xyz;

pub use calculator::{Calculator, Evaluation};
pub use descriptors::{AcsfParams, DescriptorSet};
pub use error::{Error, ErrorKind, Result};
pub use neighbors::NeighborList;
pub use potential::{PotentialModel, Prediction};
pub use structure::{Region, Structure};

/// Crate version, reported by the CLI and recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
