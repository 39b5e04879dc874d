use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input was too short or shapes disagree.
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular tridiagonal system: zero pivot at row {index}")]
    Singular { index: usize },

    #[error("explicit Euler diverged at step {step}")]
    Divergence { step: usize },

    #[error("conservation-law state blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("covariance factorization failed: {0}")]
    Conditioning(String),

    #[error("dense covariance limited to {cap} points, got {n}")]
    CovarianceCap { n: usize, cap: usize },

    #[error("unknown family `{name}`; registered families: {}", known.join(", "))]
    UnknownFamily { name: String, known: Vec<String> },

    #[error("family {family}: {source}")]
    Family {
        family: String,
        #[source]
        source: Box<Error>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("prompt holds at most {max} demos, got {got}")]
    Capacity { max: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite Adam update in parameter block `{block}`")]
    NonFiniteUpdate { block: String },

    #[error("training diverged at step {step} (loss {loss})")]
    TrainDiverged { step: usize, loss: f64 },

    #[error("reference has zero norm")]
    ZeroNorm,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_family(self, family: &str) -> Error {
        Error::Family {
            family: family.to_string(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", values[i]))),
        None => Ok(()),
    }
}
