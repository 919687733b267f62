use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
    #[error("degradation: {0}")]
    Degradation(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("model: {0}")]
    Model(String),
    #[error("training: {0}")]
    Training(String),
    #[error("stage order: {0}")]
    StageOrder(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] vsp_tensor::TensorError),
}
