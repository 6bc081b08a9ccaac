pub mod augmentation;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod tensor_core;
pub mod training;

pub use error::{Error, Result};
