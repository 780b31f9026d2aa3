use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A primitive received tensors whose dimensions do not conform.
    #[error("{op}: dimension mismatch on axis {axis}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },

    /// An axis argument is out of range for the tensor's rank.
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    /// A caller violated an API precondition.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// A gradient became NaN or infinite during an optimizer step.
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGrad { param: String },

    /// The training loss became NaN or infinite.
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (alpha_enc={alpha_enc:?}, alpha_dec={alpha_dec:?})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        alpha_enc: Option<f64>,
        alpha_dec: Option<f64>,
    },

    /// Parallel corpus files disagree on line counts.
    #[error("parallel files disagree: {gloss_lines} gloss lines vs {text_lines} text lines")]
    LineCountMismatch {
        gloss_lines: usize,
        text_lines: usize,
    },

    /// A corpus file contains an empty line.
    #[error("empty line {line} in {path}")]
    EmptyLine { path: String, line: usize },

    /// A corpus is empty where content is required.
    #[error("corpus is empty: {path}")]
    EmptyCorpus { path: String },

    /// Weight container header does not match the supported format version.
    #[error("weight container version mismatch: found {found}, expected {expected}")]
    ContainerVersion { found: u32, expected: u32 },

    /// Weight container file ended before the declared contents.
    #[error("weight container truncated: {detail}")]
    ContainerTruncated { detail: String },

    /// Weight container declares the same tensor name twice.
    #[error("duplicate tensor name in weight container: `{name}`")]
    DuplicateTensorName { name: String },

    /// Weight container payload dtype does not match the requested scalar type.
    #[error("dtype mismatch for tensor `{name}`: container has {found}, requested {expected}")]
    DtypeMismatch {
        name: String,
        found: &'static str,
        expected: &'static str,
    },

    /// A named tensor is missing when loading a model.
    #[error("missing tensor `{name}` in weight container")]
    MissingTensor { name: String },

    /// Invalid configuration value.
    #[error("invalid config: {detail}")]
    Config { detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
