use firecast_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CoreError>,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl CoreError {
    /// True for NaN/Inf aborts, wherever they were raised.
    pub fn is_numeric(&self) -> bool {
        match self {
            CoreError::Numeric(_) | CoreError::Tensor(TensorError::NonFinite(_)) => true,
            CoreError::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        CoreError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
