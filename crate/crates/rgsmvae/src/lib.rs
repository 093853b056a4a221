pub mod error;
pub mod layers;
pub mod params;
pub mod rgsm;
pub mod tensor;

pub use error::{Error, Result};
