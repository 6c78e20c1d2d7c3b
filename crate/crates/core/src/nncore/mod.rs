//! Tensor layers, training loop and model files.

pub mod conv;
mod layer;
mod model;
mod serialize;
mod train;

pub use conv::{im2col_into, Padding, WindowGeometry};
pub use layer::{layer_forward, Layer, LayerKind};
pub use model::{Model, ModelBuilder};
pub use serialize::{blob_path, load_model, save_model, MODEL_FORMAT, SCHEMA_VERSION};
pub use train::{
    evaluate, loss_and_metric, predicted_classes, train, EpochRecord, Loss, Metric, OptimizerKind,
    TrainConfig, TrainHistory, TrainHook, TrainOptions,
};

pub(crate) use layer::{horner, sigmoid};
pub(crate) use model::init_params;
