use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite evaluation of {what} at x = {at:?}")]
    NonFiniteEvaluation { what: &'static str, at: Vec<f64> },

    #[error("unknown catalog entry `{0}`")]
    UnknownCatalogEntry(String),

    #[error("catalog entry `{entry}` requires parameter `{param}`")]
    MissingParam { entry: String, param: String },

    #[error("path {path} left the guard radius {radius} at t = {t}")]
    BlowUp { path: usize, t: f64, radius: f64 },

    #[error("time {0} is not on the ensemble time grid")]
    TimeNotOnGrid(f64),

    #[error("gate violated: {0}")]
    GateViolated(String),

    #[error("insufficient signal: only {kept} of {total} points survived the CI filter")]
    InsufficientSignal { kept: usize, total: usize },

    #[error("time step {dt} exceeds the stability bound {bound}")]
    CflViolated { dt: f64, bound: f64 },

    #[error("non-finite value in the solution layer at t = {t}")]
    NonFiniteLayer { t: f64 },

    #[error("pseudo-time budget {budget} exhausted with residual {residual:e} (target {target:e})")]
    MaxPseudoTimeExceeded { budget: f64, residual: f64, target: f64 },

    #[error("singular regression at time layer {layer}")]
    SingularRegression { layer: usize },

    #[error("vanishing-discount sequence not converging: gaps {0:?}")]
    NonConvergent(Vec<f64>),

    #[error("window ({t1}, {t2}) is outside the solved horizon {horizon}")]
    WindowOutOfRange { t1: f64, t2: f64, horizon: f64 },

    #[error("every |w - L| sample is below the floor {floor:e}: converged beyond measurement")]
    FitDegenerate { floor: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument { name, reason: reason.into() }
}
