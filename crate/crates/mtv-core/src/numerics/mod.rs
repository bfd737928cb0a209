//! Numerical foundation: dense f64 arrays, a per-pass autodiff tape, a
//! counter-based random generator, finite-difference gradient checking, and
//! the binary tensor file format.

pub mod array;
pub mod gradcheck;
pub mod rng;
pub mod tape;
pub mod tensor_file;

pub use array::{max_abs_diff, DenseArray};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS};
pub use rng::{mix64, Rng};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor_file::{read_tensor, write_tensor};
