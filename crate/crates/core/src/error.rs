use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape mismatch at node `{node}`: {detail}")]
    NodeShape { node: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("crop grid does not fit along {dim}: side {side}, crop {crop}, step {step}")]
    CropGrid {
        dim: &'static str,
        side: usize,
        crop: usize,
        step: usize,
    },

    #[error("attribute statistics mismatch: {0}")]
    StatsMismatch(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
