use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is numerically singular (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    Singular { sigma_min: f64, sigma_max: f64 },

    #[error("rotation block is degenerate (sigma_min = {sigma_min:e})")]
    Degenerate { sigma_min: f64 },

    #[error("landmark construction is rank deficient (sigma_min = {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gain k_P = {k_p} does not exceed the sufficient floor {floor}")]
    GainViolation { k_p: f64, floor: f64 },

    #[error("quadratic form {form} is not positive definite for epsilon = {epsilon:e}")]
    InadmissibleEpsilon { form: &'static str, epsilon: f64 },

    #[error("numerical failure at t = {t}: {reason}")]
    Numerical { t: f64, reason: String },

    #[error("exponential fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
