pub mod cli;
pub mod diffcore;
pub mod error;
pub mod model;
pub mod optim;
pub mod probes;
pub mod scalinglab;
pub mod tasks;

pub use diffcore::Tensor;
pub use error::{Error, Result};
