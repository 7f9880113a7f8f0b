//! Fully convolutional network engine and experiment harness for studying how
//! image scale affects per-class attribution accuracy.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod network;
pub mod ops;
pub mod optim;
pub mod report;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod train;

pub use error::{FcnaError, Result};
pub use network::{desk_preset, table1_preset, Mode, ModelState, NetworkSpec};
pub use tensor::{Scalar, Tensor};
