//! Trusted multi-view classification.
//!
//! Each view of a sample is scored by its own evidential network, whose
//! non-negative outputs parameterize a Dirichlet distribution and hence a
//! subjective-logic opinion. Opinions from all views are fused with
//! Dempster's rule into a joint opinion that carries both a prediction and
//! an explicit uncertainty mass.

pub mod data;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod network;
pub mod opinion;
pub mod seeding;
pub mod specfn;

pub use error::{Result, TmcError};
