use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("D1 is not the negative transpose of D0 (max deviation {0:e})")]
    NotSkew(f64),

    #[error("matrix is not Hurwitz: spectral abscissa {0:e} >= 0")]
    NotHurwitz(f64),

    #[error("covariance is not symmetric positive semi-definite: {0}")]
    NotPsd(String),

    #[error("path aborted at t = {time}: {reason}")]
    PathAborted { time: f64, reason: String },

    /// The certificate does not give `ε > 0`; contraction experiments refuse
    /// to run.
    #[error("stability hypothesis not satisfied: {0}")]
    NotStable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn arg_err(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
