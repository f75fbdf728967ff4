//! Synthetic scenes, augmentation, optimizer, metrics and the training and
//! evaluation loops.

mod data;
mod metrics;
mod optim;
mod run;

pub use data::{augment, generate_dataset, generate_scene, toy_splits, AugmentConfig, Primitive, PrimitiveSpec, SyntheticSceneSpec};
pub use metrics::{Confusion, Metrics};
pub use optim::{MultiStepLr, Sgd};
pub use run::{
    argmax_rows, cross_entropy, evaluate, predict, scene_gradients, train_loop, EpochRecord, TrainConfig, TrainLog,
    TrainOutputs,
};
