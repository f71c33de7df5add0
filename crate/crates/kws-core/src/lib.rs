pub mod audio;
pub mod error;
pub mod footprint;
pub mod nn;
pub mod powerbench;
pub mod reference;
pub mod stats;
pub mod tensor;
pub mod zoo;

pub use error::{KwsError, Result};
pub use tensor::Tensor;
