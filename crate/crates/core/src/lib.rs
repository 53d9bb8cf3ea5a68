//! Payload power minimization for multibeam GEO satellites.
//!
//! The crate jointly plans linear precoders, beam-hopping illumination
//! patterns and DVB-S2X MODCOD selections over a window of time slots.
//! Three planners are provided:
//!
//! - [`window_opt::run_window`]: the window-wide reweighted-ℓ1 / dual
//!   subgradient / WMMSE algorithm,
//! - [`policies::run_heuristic_pipeline`]: equal-rate MODCOD assignment
//!   followed by per-slot sparse precoding,
//! - [`policies::run_dnn_pipeline`]: a learned per-slot MODCOD policy
//!   followed by per-slot sparse precoding.
//!
//! Physical accounting lives in [`model`], channel generation in
//! [`channel`], and the experiment driver used by the CLI in
//! [`experiment`].

pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
mod linalg;
pub mod modcod;
pub mod model;
pub mod per_slot;
pub mod policies;
pub mod rng;
pub mod sparsity;
pub mod window_opt;
pub mod wmmse;

pub use error::{Binding, Error, Result};
pub use modcod::{ModcodTable, ShannonFit};
pub use model::{CMat, PrecodingPlan, RateAssignment, Scenario};

pub use num_complex::Complex64;
