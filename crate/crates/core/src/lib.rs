pub mod config;
pub mod error;
pub mod genotype;
pub mod io;
pub mod linalg;
pub mod mixed;
pub mod pipeline;
pub mod rules;
pub mod sim;

pub use error::{LerError, Result};
