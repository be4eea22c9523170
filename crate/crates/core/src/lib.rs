pub mod chaos;
pub mod diffusion;
pub mod distcat;
pub mod error;
pub mod hermite;
pub mod localtime;
pub mod mcverify;
pub mod numerics;

pub use error::{Error, Result};
