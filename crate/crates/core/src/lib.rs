//! Safety filters for networked dynamical systems built from control barrier
//! functions (CBFs).
//!
//! The crate provides
//!
//! * the centralized, closed-form CBF-QP filter and an independent QP oracle
//!   ([`filter`], [`qp`]),
//! * the locally implementable two-time-scale dynamic filter driven by
//!   derivative estimates ([`estimation`], [`sim`]),
//! * evaluation of the trajectory-deviation bounds between the dynamically
//!   and statically filtered systems ([`analysis`]),
//! * the IEEE 14-bus frequency-safety case study ([`grid`]) and an experiment
//!   runner driven by TOML config files ([`config`], [`runner`]).

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod estimation;
pub mod filter;
pub mod grid;
pub mod manifest;
pub mod model;
pub mod norms;
pub mod qp;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use model::{DisturbanceSignal, DomainBox, Matrix, NetworkModel, SubsystemLayout, Vector};
pub use norms::Norm;
