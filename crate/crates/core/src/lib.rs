pub mod audio;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod io;
pub mod layers;
pub mod moe;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
