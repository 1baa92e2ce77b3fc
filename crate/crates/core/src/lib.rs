//! Temporal Kolmogorov–Arnold networks for gait identification.
//!
//! The crate covers the full pipeline: a frame-wise CNN encoder, three
//! interchangeable temporal heads (TKAN, stacked LSTM, transformer encoder),
//! a seeded training loop and the gallery/probe evaluation protocol. All
//! gradients are hand-written backward passes checked against finite
//! differences (see [`gradcheck`]).

pub mod error;
pub mod numerics;
pub mod spline;

pub use error::{Error, Result};
pub mod baselines;
pub mod tkan;
pub mod cnn;
pub mod data;
pub mod gradcheck;
pub mod train;
