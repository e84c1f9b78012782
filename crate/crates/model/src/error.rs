use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rfn_core::Error),

    #[error("torch: {0}")]
    Torch(#[from] tch::TchError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("checkpoint and config disagree on `{key}`: checkpoint has {checkpoint}, config has {config}")]
    ConfigMismatch {
        key: String,
        checkpoint: String,
        config: String,
    },

    #[error("dataset: {0}")]
    Data(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        detail: String,
    },

    #[error("degenerate batch: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for errors the user fixes by editing the configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigMismatch { .. } | Error::Core(rfn_core::Error::InvalidConfig(_)) | Error::Core(rfn_core::Error::Parse { .. })
        )
    }
}
