//! Bayesian transmit beamforming for integrated sensing and communication.
//!
//! A base station with `N_t` transmit and `N_r` receive antennas serves `K`
//! single-antenna users while probing for a target whose reflectivity
//! magnitude and azimuth are random. The library maximizes the expected
//! detection probability over that prior, subject to per-user SINR floors and
//! a total power budget, by iterating linearized semidefinite programs.
//!
//! Module map:
//! - [`scene`]: arrays, steering vectors, channels, unit conversion, config.
//! - [`specfun`]: `erfc`, its inverse, and prior discretization.
//! - [`metrics`]: detection probability, its expectation and gradient, SINR,
//!   beampatterns.
//! - [`conic`]: subproblem assembly and an interior-point SDP solver.
//! - [`optimizer`]: the successive-convex-approximation loop and baselines.
//! - [`detector`]: signal-level Monte-Carlo of the echo and detectors.
//! - [`verify`]: constraint checks written independently of assembly.
//! - [`io`]: CSV and matrix file formats.

pub mod conic;
pub mod detector;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod scene;
pub mod specfun;
pub mod verify;

pub use error::{IsacError, Result};
pub use linalg::{CMatrix, CVector};
pub use metrics::{Beamformer, Covariance, TargetPriors};
pub use scene::{SceneConfig, TargetPriorConfig, UserChannel};
