pub mod error;
pub mod oracle;
pub mod pipeline;
pub mod dataset;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{CoreError, Result};
