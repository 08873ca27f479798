pub mod augment;
pub mod classifier;
pub mod continual;
pub mod data;
pub mod error;
pub mod ssl;
pub mod sslnet;

pub use error::{Error, Result};
