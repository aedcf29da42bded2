//! Dense arrays, the gradient tape, and trainable parameters.

mod array;
pub mod check;
mod graph;
pub mod layers;
mod param;

pub use array::Tensor;
pub use check::{finite_diff_check, FiniteDiff};
pub use graph::{Graph, NodeId};
pub use param::{Init, ParamId, ParamStore, Parameter};

pub(crate) use param::{read_text, write_file};
