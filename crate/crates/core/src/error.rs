use std::path::PathBuf;

/// Errors produced anywhere in the planning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced at layer {layer}: {what}")]
    NumericFailure { layer: usize, what: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(
        "synthesis diverged at step {step} (loss {loss:.4e} vs initial {initial:.4e}); try a smaller learning rate"
    )]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("blob length mismatch: manifest expects {expected} values, blob holds {actual}")]
    BlobLength { expected: usize, actual: usize },

    #[error("unsupported layer kind `{0}`")]
    UnsupportedLayer(String),

    #[error("missing artifact {path}: run the `{stage}` stage first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with the index of the layer being processed.
    pub fn at_layer(self, layer: usize) -> Self {
        match self {
            e @ (Error::AtLayer { .. } | Error::NumericFailure { .. }) => e,
            other => Error::AtLayer {
                layer,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping layer annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLayer { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 infeasible plan, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config { .. } | Error::InvalidArgument(_) => 2,
            Error::Infeasible(_) => 3,
            Error::NumericFailure { .. } | Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
