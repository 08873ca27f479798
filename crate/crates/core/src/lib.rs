//! Numeric core: dense tensors, neural-network kernels, a define-by-run
//! reverse-mode tape, Adam, and a finite-difference gradient checker.
//!
//! Everything is generic over [`Scalar`]; the `*64` / `*32` aliases below
//! are the concrete instantiations used by the rest of the workspace.

pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use optim::Adam;
pub use params::{Binding, Checkpoint, NamedTensor, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;
