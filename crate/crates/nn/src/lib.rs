//! Classifier zoo, training protocol, Grad-CAM and cost profiling on a small CPU
//! tensor engine.

pub mod checkpoint;
pub mod explain;
pub mod layers;
pub mod optim;
pub mod param;
pub mod profile;
pub mod train;
pub mod zoo;

pub use checkpoint::{load_model, load_model_for, read_checkpoint_header, save_model, CheckpointHeader};
pub use param::{Param, Tensor};
pub use zoo::{
    build_classifier, count_trainable_parameters, predict_proba, BackboneId, FreezePolicy, HeadConfig, ModelHandle,
    ModelSpec, ZooError,
};
