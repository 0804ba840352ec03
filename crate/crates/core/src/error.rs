use std::fmt;

/// Error type shared by every module of the crate.
#[derive(Debug)]
pub enum Error {
    /// A closed-loop matrix has spectral radius at or above one.
    NotStable { rho: f64 },
    /// A matrix expected to be symmetric is not, within tolerance.
    NonSymmetric { deviation: f64 },
    /// A linear solve or rank-one update hit a numerically unreliable state.
    IllConditioned { detail: String },
    /// Stacked input/state data lost full row rank (persistency of excitation).
    RankDeficient { min_singular_value: f64 },
    /// The offline synthesis program has no feasible solution.
    Infeasible { detail: String },
    /// A recovered policy failed its spectral-radius certificate.
    NotStabilizing { rho: f64 },
    /// A state reached the tangent/cosine singularity guard of the plant model.
    Singularity { angle: f64 },
    /// The simulated bicycle exceeded the fallen threshold on the lean angle.
    Fallen { time: f64, phi: f64 },
    /// Excitation check failed on collected data.
    PeLost { min_singular_value: f64 },
    /// File or serialization error.
    Io(String),
    /// Bad configuration value.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotStable { rho } => {
                write!(f, "closed-loop matrix is not Schur stable (rho = {rho:.6})")
            }
            Error::NonSymmetric { deviation } => {
                write!(f, "matrix is not symmetric (|M - M'| = {deviation:.3e})")
            }
            Error::IllConditioned { detail } => write!(f, "ill-conditioned: {detail}"),
            Error::RankDeficient { min_singular_value } => write!(
                f,
                "input/state data matrix is rank deficient (sigma_min = {min_singular_value:.3e})"
            ),
            Error::Infeasible { detail } => write!(f, "infeasible program: {detail}"),
            Error::NotStabilizing { rho } => {
                write!(f, "recovered policy is not stabilizing (rho = {rho:.6})")
            }
            Error::Singularity { angle } => {
                write!(f, "state within singularity guard (angle = {angle:.4} rad)")
            }
            Error::Fallen { time, phi } => {
                write!(f, "bicycle fell at t = {time:.2} s (phi = {phi:.3} rad)")
            }
            Error::PeLost { min_singular_value } => write!(
                f,
                "persistency of excitation lost (sigma_min = {min_singular_value:.3e})"
            ),
            Error::Io(msg) => write!(f, "io error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
