//! Dense `f64` numeric kernel for small sequence models.
//!
//! Provides a row-major [`Tensor`], a reverse-mode autodiff [`Tape`] with the
//! handful of ops recurrent and attention models need, a named
//! [`ParamStore`] with Adam, finite-difference gradient checks, and a binary
//! checkpoint format.
//!
//! All kernels are single-threaded and deterministic: the same inputs always
//! produce bit-identical outputs.

mod checkpoint;
mod error;
mod gemm;
pub mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{decode_params, encode_params, load_params, save_params, CHECKPOINT_MAGIC};
pub use error::{NumError, Result};
pub use gradcheck::{grad_check, grad_check_params};
pub use ops::LAYER_NORM_EPS;
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
