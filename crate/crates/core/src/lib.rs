//! Neural cellular automata laboratory.
//!
//! Trains NCA update rules over a grid of (channels, hidden width)
//! configurations, measures how much the resulting patterns move with
//! Horn-Schunck optical flow, and correlates motion strength with the
//! architecture.

pub mod analysis;
pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod image;
pub mod model;
pub mod motion;
pub mod real;
pub mod rng;
pub mod training;

pub use analysis::{
    classify_dynamic, pearson, permutation_pvalue, report, run_sweep, CorrelationReport,
    SweepConfig, SweepRecord,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelCheckpoint};
pub use error::{NcaError, Result};
pub use grid::{bernoulli_mask, conv3x3_circular, CellMask, Kernel3x3, StateTensor};
pub use image::RgbImage;
pub use model::{
    adapt, perceive, rollout, step, step_masked, step_with_rate, to_rgb, NcaParams,
    PerceptionTensor, Rollout,
};
pub use motion::{
    horn_schunck, measure_frames, measure_model, motion_strength, to_gray, FlowField, GrayImage,
    MeasureConfig, MotionReport,
};
pub use real::Real;
pub use rng::{derive_seed, RngStream};
pub use training::{
    adam_update, backward_rollout, grad_normalize, loss_gram_texture, loss_mse, train,
    train_on_image, AdamState, Gradients, LossKind, Precision, SamplePool, TargetLoss, TrainConfig,
    TrainOutcome, TrainSettings,
};
