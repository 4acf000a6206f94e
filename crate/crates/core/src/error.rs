use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prism: {0}")]
    InvalidPrism(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("t₀ off-grid: nt = {nt} must be odd so that T/2 is a time level")]
    MidpointOffGrid { nt: usize },

    #[error("time {t} is not a grid time level (nearest level {nearest} at t = {nearest_t})")]
    OffGridTime { t: f64, nearest: usize, nearest_t: f64 },

    #[error("epsilon {eps} outside (0, T/2) with T = {t_final}")]
    EpsilonOutOfRange { eps: f64, t_final: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("kernel {variant} does not support {operation}")]
    UnsupportedKernel { variant: &'static str, operation: &'static str },

    #[error("unknown built-in kernel function `{0}`")]
    UnknownYBar(String),

    #[error("{solver} blew up at time level {level}: |value| = {magnitude:e}")]
    Instability { solver: &'static str, level: usize, magnitude: f64 },

    #[error("explicit {solver} step violates stability restriction: tau = {tau:e} > {limit:e}")]
    StabilityRestriction { solver: &'static str, tau: f64, limit: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations (last change {last:e})")]
    NonConvergence { iterations: usize, last: f64, history: Vec<f64> },

    #[error("density floor violated: min m = {min:e} <= {floor:e} at node {node:?}")]
    DensityFloor { min: f64, floor: f64, node: Vec<usize> },

    #[error("initial density must be positive, found {min:e} at node {node:?}")]
    NonPositiveDensity { min: f64, node: Vec<usize> },

    #[error("non-degeneracy violated: |∇u₀|² = {value:e} < 2c = {bound:e} at node {node:?}")]
    Degenerate { value: f64, bound: f64, node: Vec<usize> },

    #[error("field does not vanish on face {face}: max |u| = {max:e}")]
    NonVanishingFace { face: String, max: f64 },

    #[error("incomplete data requires zero Dirichlet difference off Γ₁⁺; face {face} has max {max:e}")]
    IncompleteDirichlet { face: String, max: f64 },

    #[error("datasets have different completeness modes")]
    ModeMismatch,

    #[error("epsilon {eps} outside the admissible window ({lower}, {upper}) for rho = {rho}")]
    EpsilonWindow { eps: f64, rho: f64, lower: f64, upper: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric range exceeded: {0}")]
    NumericRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
