pub mod corrector;
pub mod error;
pub mod gait;
pub mod io;
pub mod metrics;
pub mod ndf;
pub mod optim;
pub mod pipeline;
pub mod pose;
pub mod synthesis;
pub mod trainer;

pub use error::{Error, Result};
