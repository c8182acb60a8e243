//! Concept learning for contextual MDPs: exact tabular solving, information
//! bounds on abstraction regret, concept classifiers, trust-region Monte
//! Carlo and transfer benchmarks.

pub mod cmdp;
pub mod control;
pub mod curve;
pub mod error;
pub mod info;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod solver;
pub mod suite;
pub mod transfer;
pub mod trmc;

pub use error::{Error, ErrorClass, Result};
