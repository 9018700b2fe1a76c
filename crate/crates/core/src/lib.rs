//! Baseband-equivalent simulator of a wideband, self-adaptive multi-tap RF
//! self-interference canceller for inband full-duplex radios.
//!
//! The transmit chain (waveform → nonlinear PA), the multipath coupling
//! channel, the fixed-delay/complex-weight canceller and its analog-style
//! LMS control loop are modelled in complex baseband at a common sample
//! rate. [`scenario`] ties them together into reproducible experiments.

pub mod canceller;
pub mod channel;
pub mod error;
pub mod lms;
pub mod metrics;
pub mod pa;
pub mod scenario;
mod serde_ext;
pub mod signal;
pub mod waveform;

pub use error::{Error, Result};
pub use signal::{Band, ComplexSignal};
