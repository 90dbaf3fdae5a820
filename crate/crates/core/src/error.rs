use thiserror::Error;

use crate::sdp::SolveStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (last relative change {residual:e})")]
    NonConvergentRiccati { iterations: usize, residual: f64 },

    #[error("index {index} out of range 1..={max} for {what}")]
    IndexOutOfRange { what: &'static str, index: usize, max: usize },

    #[error("fault channel is rank deficient: rank(H_tau^f) = {rank} < n_f = {n_f}")]
    RankDeficientFaultChannel { rank: usize, n_f: usize },

    #[error("all fault Markov parameters up to index {0} are numerically zero")]
    NoNonzeroMarkov(usize),

    #[error("zero classification is ambiguous at lambda = {re} + {im}i (sigma_min / tol = {ratio:.3e})")]
    NumericalRankAmbiguity { re: f64, im: f64, ratio: f64 },

    #[error("fault subsystem pencil is rank deficient for every lambda")]
    DegeneratePencil,

    #[error("state diverged at sample {0} (closed loop unstable?)")]
    DivergedState(usize),

    #[error("identification data must be fault free")]
    FaultyIdentificationData,

    #[error("regressor matrix is rank deficient (cond(Z Z^T) = {0:e}); data is not persistently exciting")]
    RankDeficientRegressor(f64),

    #[error("block misalignment: {0}")]
    BlockMisalignment(String),

    #[error("window not full: need samples up to k = {needed}, have {available}")]
    WindowNotFull { needed: usize, available: usize },

    #[error("covariance matrix is not positive definite: {0}")]
    SingularCovariance(String),

    #[error("fault constraint infeasible: lambda_min(G0 Pi_f G0^T) = {0:e} <= 0")]
    InfeasibleFaultConstraint(f64),

    #[error("tuning parameter out of range: {0}")]
    TuningOutOfRange(String),

    #[error("conic solver failed with status {status:?}: {detail}")]
    SolverFailure { status: SolveStatus, detail: String },

    #[error("middle matrix is indefinite (lambda_min = {0:e})")]
    IndefiniteMiddleMatrix(f64),

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI: 3 for solver failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SolverFailure { .. } => 3,
            _ => 2,
        }
    }
}
