//! Numerical diagnostics for the generalization of imitation-learned policies.
//!
//! The crate covers exact finite conditional distributions and entropy gaps
//! ([`dist`]), a small differentiable softmax policy ([`model`]), plug-in
//! information estimators ([`info`]), Fisher and Hessian curvature tools
//! ([`curvature`]), SGD escape-time simulation on engineered landscapes
//! ([`sgd`]) and exact generalization-gap measurement on enumerable toy
//! imitation tasks ([`gap`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod dist;
pub mod error;
pub mod gap;
pub mod info;
pub mod model;
pub mod provenance;
pub mod rng;
pub mod sgd;
pub mod stats;
pub mod tensor;
pub mod verify;

pub use dist::CondTable;
pub use error::{Error, Result};
pub use model::{Activation, Arch, ForwardTrace, ModelState};
pub use rng::RngStream;
pub use tensor::Matrix;
