pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod init;
mod kv;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};
