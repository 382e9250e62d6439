use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("iterative solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("no sign change of the bracketed function on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("singular target: {0}")]
    SingularTarget(String),

    #[error("gap closing: |q(k)| = {magnitude:.3e} at k = {k:.6}")]
    GapClosing { k: f64, magnitude: f64 },

    #[error("integrator failed at t = {time}: {reason}")]
    Integrator { time: f64, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
