use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Euler representation singularity: pitch {pitch} is within the guard band of ±π/2")]
    RepresentationSingularity { pitch: f64 },

    #[error("{what}: expected length {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("deformation {chi} below the gradient floor χ* = {chi_star}")]
    BelowGradientFloor { chi: f64, chi_star: f64 },

    #[error("orientation interaction matrix is near-singular (condition number {condition:.3e})")]
    SingularInteraction { condition: f64 },

    #[error("degenerate barrier gradient in channel {channel} while its constraint is violated")]
    DegenerateFilter { channel: usize },

    #[error("safety QP is infeasible")]
    Infeasible,

    #[error("simulation diverged at t = {time}: state norm {norm:.3e}")]
    Divergence { time: f64, norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
