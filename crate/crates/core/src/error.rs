use thiserror::Error;

#[derive(Debug, Error)]
pub enum IsacError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("argument {value} outside the domain of {func}")]
    Domain { func: &'static str, value: f64 },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("subproblem infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("user {user} receives no power (tr(Q W) = {value:e})")]
    DegenerateUser { user: usize, value: f64 },

    #[error("order constraint violated: residual min eigenvalue {min_eig:e} (trace {trace:e})")]
    OrderViolation { min_eig: f64, trace: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IsacError>;
