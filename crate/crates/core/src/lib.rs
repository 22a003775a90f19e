//! Learned traffic-scenario generation on vectorized HD maps.
//!
//! The crate covers the scenario interchange format, lane vectorization, a small
//! autodiff engine, the context encoder, the placement and trajectory decoders,
//! evaluation metrics, IDM-based playback and the training loop.

pub mod actuation;
pub mod encoder;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod placement;
pub mod render;
pub mod scenario;
pub mod tensor;
pub mod training;
pub mod trajectory;
pub mod vectorize;

pub use error::{Error, Result};
