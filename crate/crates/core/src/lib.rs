//! Direct data-driven adaptive LQR for balance control of an autonomous bicycle.
//!
//! The crate is organised around the outer-loop learning pipeline:
//!
//! * [`numerics`] — dense linear-algebra kernel (Lyapunov solves, spectral
//!   radius, pseudoinverse, PSD checks) shared by everything else.
//! * [`lqr`] — model-based LQR reference route (Riccati solve, closed-loop
//!   cost) used for validation against the data-driven route.
//! * [`data`] — trajectory logs and the exponentially weighted input/state
//!   covariance with rank-one recursive updates.
//! * [`deepo`] — covariance-parameterized policy optimization: cost,
//!   gradient, projected gradient step, gain-update scheduling.
//! * [`init_policy`] — regularized offline synthesis of the initial
//!   stabilizing policy via a small semidefinite program.
//! * [`plant`] — nonlinear point-mass bicycle simulator with steering
//!   actuator, saturation and sensor noise.
//! * [`fl`] — inner-loop output feedback-linearization controller.
//! * [`experiment`] — closed-loop harness: offline collection, adaptive
//!   episodes, parameter sweeps, CSV/SVG reporting.

pub mod data;
pub mod deepo;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod init_policy;
pub mod lqr;
pub mod numerics;
pub mod plant;
mod sdp;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Dense dynamically-sized matrix of `f64`, the working type of every module.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector of `f64`.
pub type Vec64 = nalgebra::DVector<f64>;
