//! Tensor autodiff, the deepLOB / deepOF / deepVOL model family, and
//! training under weighted cross-entropy with Adam and early stopping.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use model::{Dims, Family, Head, Level, ModelSpec, ParamSet};
pub use tensor::{Scalar, Tensor};
pub use train::{Dataset, TrainConfig, TrainOutcome};
