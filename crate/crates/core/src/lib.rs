pub mod augment;
pub mod bench;
pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Shape4, Tensor4};
