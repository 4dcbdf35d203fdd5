//! Two-stage training, the model container and checkpoints.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{Checkpoint, Stage, FORMAT_VERSION, MAGIC};
pub use config::{Alignment, TrainConfig, CONFIG_KEYS};
pub use model::{DrugLibrary, Embeddings, Model, PairIndex, DOMAIN_CLASSIFIER_PREFIX};
pub use train::{train_stage1, train_stage2, LossLog, STAGE1_COLUMNS, STAGE2_COLUMNS};
