//! Differentiable primitives, layers, an adaptive-moment optimizer and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod nn;
pub mod optim;

pub use graph::{log_sum_exp, sigmoid, softmax, Gradients, Graph, ParamId, ParamStore, Parameter, Var};
pub use matrix::Matrix;
pub use nn::{glorot, Activation, Linear, Mlp};
pub use optim::{Adam, AdamConfig};
