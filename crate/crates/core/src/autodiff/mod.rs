//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Operations execute eagerly; when an operand is registered on a [`Tape`],
//! the operation is also recorded so [`grad`] can replay the tape in reverse.
//! Backward rules are themselves expressed in recorded operations, so a
//! gradient computed with `create_graph` is an ordinary tape value and can be
//! differentiated again. That second-order path is what the teacher
//! meta-update runs on.
//!
//! A tape and the tensors registered on it are confined to one thread
//! (`Rc` handles); independent tapes may live on different threads.

mod grad;
mod ops;
mod tensor;

pub use grad::grad;
pub use tensor::{Tape, Tensor, TensorError};
