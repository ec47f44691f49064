use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("{op} requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { op: &'static str, shape: Vec<usize> },

    #[error("out-of-vocabulary id {id} for field `{field}` (vocab size {vocab})")]
    OutOfVocab {
        field: String,
        id: u32,
        vocab: usize,
    },

    #[error("unknown domain {domain} (model has {domains} domains)")]
    UnknownDomain { domain: usize, domains: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged at epoch {epoch} iteration {iteration} domain {domain}: {detail}")]
    Diverged {
        epoch: usize,
        iteration: usize,
        domain: usize,
        detail: String,
    },

    #[error("census mismatch: {0}")]
    Census(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Short machine-readable tag used by the CLI on failure.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Tensor(_) => "tensor",
            Error::NonFinite(_) => "non-finite",
            Error::NonScalarRoot { .. } => "non-scalar-root",
            Error::OutOfVocab { .. } => "out-of-vocab",
            Error::UnknownDomain { .. } => "unknown-domain",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Diverged { .. } => "diverged",
            Error::Census(_) => "census",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
