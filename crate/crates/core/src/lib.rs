//! Generative transition-based dependency parsing and syntactic language
//! modelling with hierarchical Pitman-Yor priors.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod hpyp;
pub mod model;
pub mod persist;
pub mod slice;
pub mod synth;
pub mod trainer;
pub mod transition;

pub use error::{Error, Result};
