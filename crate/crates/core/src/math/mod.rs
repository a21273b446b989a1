//! Dense matrices and the reverse-mode differentiation tape.

pub mod gradcheck;
pub mod graph;
pub mod matrix;

pub use gradcheck::{finite_difference_check, finite_difference_check_vec};
pub use graph::{bce, stable_sigmoid, Graph, Var};
pub use matrix::{dot, squared_distance, Matrix};
