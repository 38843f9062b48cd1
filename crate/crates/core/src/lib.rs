pub mod autodiff;
pub mod baselines;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod text;

pub use error::{Error, Result};
