pub mod autodiff;
pub mod cli;
pub mod error;
pub mod extraction;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod renderer;
pub mod rng;
pub mod spatial;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
