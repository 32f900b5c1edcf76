use thiserror::Error;

/// Errors raised by the observer library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal evaluation failure at t = {t} (derivative order {order})")]
    SignalEvaluation { t: f64, order: usize },

    #[error("signal returned a {got_rows}x{got_cols} matrix, expected {rows}x{cols}")]
    SignalShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },

    #[error("empty grid")]
    EmptyGrid,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("observability degeneracy at t = {t}: |det O| = {det:e}")]
    ObservabilityDegeneracy { t: f64, det: f64 },

    #[error("companion form check failed at t = {t}: {what} residual {residual:e}")]
    OcfInvariant {
        t: f64,
        what: &'static str,
        residual: f64,
    },

    #[error("kernel conditioning: Hermite system condition estimate {condition:e}")]
    KernelConditioning { condition: f64 },

    #[error("sampling misalignment: expected t = {expected}, got t = {got}")]
    SamplingMisalignment { expected: f64, got: f64 },

    #[error("horizon not initialized")]
    HorizonNotInitialized,

    #[error("horizon misalignment: buffer at t = {buffer}, query at t = {query}")]
    HorizonMisalignment { buffer: f64, query: f64 },

    #[error("predictor divergence at t = {t}")]
    PredictorDivergence { t: f64 },

    #[error("plant divergence at t = {t}")]
    PlantDivergence { t: f64 },

    #[error(
        "sampling assumption violated: interval {interval} outside [{t_under}, {t_bar}] at t = {t}"
    )]
    SamplingIntervalViolated {
        t: f64,
        interval: f64,
        t_under: f64,
        t_bar: f64,
    },

    #[error("criterion violated; no envelope (T_bar * lambda = {product})")]
    CriterionViolated { product: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
