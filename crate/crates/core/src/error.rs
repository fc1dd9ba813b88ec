use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("line {line} ({from}->{to}): series impedance block is singular")]
    SingularImpedance { line: usize, from: usize, to: usize },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("nonlinear solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<Complex64>,
    },

    #[error("voltage collapse in iterate {iteration}: |v| = {magnitude:.3e} at index {index}")]
    VoltageCollapse {
        iteration: usize,
        index: usize,
        magnitude: f64,
    },

    #[error("singular linearized system: {0}")]
    SingularLinearSystem(String),

    #[error("svr output {output} did not converge within {iterations} iterations (duality gap {gap:.3e})")]
    SvrNonConvergence {
        output: usize,
        iterations: usize,
        gap: f64,
        weights: Vec<f64>,
        bias: f64,
    },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("model was trained for a different network (fingerprint {model}, network {network})")]
    FingerprintMismatch { model: String, network: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario generation aborted: {failures} failed draws out of {attempts}")]
    TooManyFailures { failures: usize, attempts: usize },

    #[error("dataset format: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
