//! Secure cell-free massive MIMO downlink toolkit under pilot-spoofing attacks.
//!
//! The crate covers scenario generation, spoofed channel estimation,
//! protective partial zero-forcing precoding, closed-form and Monte Carlo
//! secrecy analysis, greedy AP selection, successive convex power allocation,
//! attack detection and pilot re-transmission.

pub mod channel;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod mitigation;
pub mod pipeline;
pub mod poweropt;
pub mod precoding;
pub mod rng;
pub mod scenario;
pub mod secrecy;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};

/// Complex baseband sample type.
pub type C64 = nalgebra::Complex<f64>;
