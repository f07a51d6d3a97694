//! Contrastive knowledge amalgamation.
//!
//! Trains one student classifier over the union of several frozen teachers'
//! label sets, without ground-truth labels, by combining intra-model margin
//! contrast, inter-model transport-map contrast, multi-kernel MMD alignment in
//! a shared feature space, and soft-target distillation.

pub mod amalgamation;
pub mod autodiff;
pub mod checks;
pub mod data;
pub mod error;
pub mod losses;
pub mod models;
pub mod par;
pub mod slots;

pub use error::{Error, Result};
