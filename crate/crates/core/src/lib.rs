//! Geodesic track laboratory.
//!
//! Trains small plain and residual ReLU networks with weight decay, records the
//! layerwise track of every sample, and scores how closely the learned
//! transformation follows the constant-speed geodesic between the input and
//! output distributions in Wasserstein-2 space.
//!
//! * [`numerics`]: dense matrices, activations and the seeded generator.
//! * [`assignment`]: exact linear assignment, discrete W2 and the optimal
//!   transport score.
//! * [`geometry`]: tracks, line-shape metrics and geodesic interpolation.
//! * [`network`]: networks, backpropagation, weight-decayed SGD and the
//!   linear-algebraic diagnostics.
//! * [`experiments`]: datasets, gamma sweeps, noise robustness and unit
//!   elimination.
//! * [`io`]: run configs, checkpoints, track files and report writers.

pub mod assignment;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod network;
pub mod numerics;
pub mod parallel;

pub use error::{Error, Result};

/// Absolute slack used when checking analytic inequalities numerically.
pub const INEQUALITY_SLACK: f64 = 1e-9;

/// Segment norms at or below this are treated as zero length.
pub const DEGENERATE_NORM: f64 = 1e-12;
