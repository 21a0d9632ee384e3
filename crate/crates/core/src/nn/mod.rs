//! Minimal neural-net building blocks with explicit forward/backward passes.
//!
//! Everything is f64 and single-threaded per model instance; determinism is a
//! hard requirement for checkpoint-resume and the reproducibility contract.

pub mod act;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod param;

pub use act::{gelu, gelu_backward_mat, gelu_mat, glu_backward, glu_forward, sigmoid, softmax_rows};
pub use attention::MultiHeadAttention;
pub use conv::Conv1d;
pub use linear::Linear;
pub use norm::LayerNorm;
pub use param::{Param, Parameterized};
