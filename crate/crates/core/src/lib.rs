pub mod cli;
pub mod data;
pub mod error;
pub mod latent;
pub mod nets;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
