pub mod diagnostics;
pub mod dykstra;
pub mod error;
pub mod kl;
pub mod model;
pub mod multipop;
pub mod prox;
pub mod schemes;

pub use error::{Error, Result};
