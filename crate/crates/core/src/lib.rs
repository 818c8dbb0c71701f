pub mod autodiff;
pub mod error;
pub mod estimators;
pub mod fidelity;
pub mod rng;
pub mod simharness;
pub mod penalty;
pub mod tabular;
pub mod wgan;

pub use error::{Error, Result};
