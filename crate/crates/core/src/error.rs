use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e}): {what}")]
    NotPositiveDefinite { what: String, min_eig: f64 },

    #[error("direction {0:?} is not tangent to the normal")]
    NotTangent([f64; 3]),

    #[error("point {point:?} lies outside the collar of half-width {tau}")]
    OutsideCollar { point: [f64; 3], tau: f64 },

    #[error("closest-point projection did not converge for {0:?}")]
    ProjectionFailed([f64; 3]),

    #[error("singular Jacobian at {0:?}")]
    SingularJacobian([f64; 3]),

    #[error("surface is not strictly convex: {0}")]
    NonConvex(String),

    #[error("resonant mode n = {n}: |denominator| = {denominator:e}")]
    ResonantMode { n: usize, denominator: Complex64 },

    #[error("special function overflow: {0}")]
    Overflow(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
