//! Event detection on operating-room digital twins: a procedural simulator,
//! a two-stream cross-attention model trained with a small autodiff engine,
//! segment extraction, and temporal localization metrics.

pub mod cli;
pub mod error;
pub mod events;
pub mod io;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
