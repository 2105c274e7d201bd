//! Desk-scale diffusion-bridge toolkit: interpolants, a small MLP regressor
//! with hand-written backprop, bridge training, the two-stage sampler,
//! endpoint diagnostics and synthetic paired tasks.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod interpolant;
pub mod net;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use interpolant::{BetaShape, BridgeKind, ScheduleSpec};
pub use net::{AdamState, RegressorParams};
pub use par::Execution;
pub use training::{TrainConfig, Variant};
