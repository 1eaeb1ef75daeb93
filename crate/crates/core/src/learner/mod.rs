//! The base learner: a ReLU feedforward classifier trained with softmax
//! cross-entropy, Adam and a per-batch cosine learning-rate schedule.

mod encode;
mod network;
mod optim;
mod train;

pub use encode::{FeatureEncoder, MetadataPolicy};
pub use network::{Architecture, Dense, Gradients, Network};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use train::{
    fit, init_params, predict_logits, train, train_with_encoder, FitOutcome, ModelSpec, Provenance,
    Schedule, TrainConfig, TrainedModel, ValidationSet,
};
