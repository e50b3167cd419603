use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("step h = {h} is not admissible: {reason}")]
    InadmissibleStep { h: f64, reason: String },
    #[error("Jacobian of the perturbation is not positive at cell {cell} (det = {det})")]
    SingularJacobian { cell: usize, det: f64 },
    #[error("no cone geodesic of complex-plane form: {0}")]
    Geodesic(String),
    #[error("theta'(0) is undefined when the first endpoint is the vertex and x1 != x2")]
    UndefinedDerivative,
    #[error("F'(s) requires s > 0, got {0}")]
    DerivativeAtZero(f64),
    #[error("scaling iterations did not converge at eps = {eps}: residual {residual:.3e} after {iterations} iterations")]
    NotConverged {
        eps: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("cell prox did not converge (g = {g}, kappa = {kappa}, v = {v})")]
    ProxFailed { g: f64, kappa: f64, v: f64 },
    #[error("explicit reference solver went negative at t = {time}: min u = {min_value:.3e}")]
    Cfl { time: f64, min_value: f64 },
    #[error("scheme aborted at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical failures, false for rejected input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NotConverged { .. } | Error::ProxFailed { .. } | Error::Cfl { .. } => true,
            Error::StepFailed { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
