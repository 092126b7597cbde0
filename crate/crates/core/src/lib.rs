//! Link-level simulator and optimization library for the uplink of a
//! massive-MIMO cloud radio access network (C-RAN) with capacity-limited
//! fronthaul.
//!
//! Each remote radio head (RRH) compresses its received signal with a
//! two-timescale hybrid filter — a slowly adapted analog phase-shifter bank
//! followed by a per-slot digital filter — and quantizes each output stream
//! with a dynamically chosen number of bits before forwarding it to the
//! baseband unit (BBU). The BBU jointly decodes all users with linear
//! receive beamforming.
//!
//! The crate provides:
//!
//! - [`scenario`]: network geometry, geometry-based channel statistics and a
//!   temporally correlated (Jakes/AR(1)) channel process with delayed-CSI
//!   views,
//! - [`model`]: the closed-form physics of the compress-and-forward chain
//!   (analog/digital filtering, quantization-noise variances, SINR/rate,
//!   per-user MSE, utility functions, integer bit rounding),
//! - [`jacobian`]: the analytic gradient of the instantaneous rates with
//!   respect to the analog phases,
//! - [`wmmse`]: the per-slot block-coordinate WMMSE solver for the weighted
//!   sum-rate subproblem,
//! - [`ssca`]: the online two-timescale outer loop (recursive rate/gradient
//!   estimates, concave surrogate maximization, averaging updates),
//! - [`schemes`]: interchangeable end-to-end schemes (THCF and the SCF,
//!   A-SCF and S-SCF baselines) behind a common trait with a by-name
//!   registry,
//! - [`harness`]: experiment configuration, Monte Carlo sweeps and
//!   machine-readable result emission.

pub mod harness;
pub mod jacobian;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod schemes;
pub mod ssca;
pub mod wmmse;

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;

/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;

/// Errors produced by the simulator and solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient channel history: requested delay {requested} slots, have {available}")]
    InsufficientHistory { requested: usize, available: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible fronthaul budget: {0}")]
    InfeasibleBudget(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
