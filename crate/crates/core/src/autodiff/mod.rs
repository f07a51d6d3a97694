//! Minimal reverse-mode differentiation over rank-2 `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, ScalarFn};
pub use graph::{Axis, Gradients, Graph, KernelTerm, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
