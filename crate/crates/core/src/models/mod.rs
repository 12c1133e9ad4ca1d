//! The three architectures and their training loops.

mod detector;
mod encdec;
mod gan;
mod model;
mod network;
mod train;

use thiserror::Error;

use crate::datakit::DataError;
use crate::tensorcore::TensorError;

pub use detector::{
    decode_predictions, encode_targets, logit, loss_weights, nms, CellTargets, DetectorSpec, BOX_WEIGHT, NOOBJ_WEIGHT,
};
pub use encdec::EncDecSpec;
pub use gan::GanSpec;
pub use model::{
    apply_attenuation, image_batch, mask_batch, run, shadow_free_batch, Model, ModelSpec, EVAL_BATCH, MODEL_FORMAT,
    MODEL_VERSION,
};
pub use network::{table_memory, Init, Layer, NetBuilder, Network, ParamSet, ParamSlot};
pub use train::{
    attenuation_score, batch_loss, detector_loss, detector_map50, detector_targets, train_detector, train_gan,
    train_segmentation, EpochRecord, TrainConfig, TrainHistory, TrainOutcome, DEFAULT_MEMORY_BUDGET,
    VAL_CONF_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("sample {0} has no ground-truth mask")]
    MissingMask(String),
    #[error("sample {0} has no paired shadow-free image")]
    MissingPair(String),
    #[error("box out of bounds: {0}")]
    BoxOutOfBounds(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("model family mismatch: expected {expected}, got {actual}")]
    Family { expected: &'static str, actual: &'static str },
    #[error("malformed model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
