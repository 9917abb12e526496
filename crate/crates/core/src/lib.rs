pub mod channel;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod precision;
pub mod rng;
pub mod sca;
pub mod waveform;

pub use error::{Error, Result};
