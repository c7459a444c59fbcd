pub mod augment;
pub mod byol;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use frontend::{AudioClip, Spectrogram};
pub use tensor::{Real, Tensor};
