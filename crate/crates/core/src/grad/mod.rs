//! Desk-scale training machinery: surrogate-gradient BPTT through the LIF
//! recurrence, finite-difference verification, heatmap targets and a toy
//! tracking task.

mod adam;
mod check;
mod net;
mod target;
mod toy;

pub use adam::Adam;
pub use check::{finite_diff_check, random_case, CaseSize, GradCheck};
pub use net::{
    smooth_heaviside, surrogate_grad, Episode, Gradients, SpikeFn, ToyConv, ToyNet, ToyNetSpec,
};
pub use target::{
    gaussian_weight, make_heatmap_target, HeatmapTarget, TARGET_KERNEL, TARGET_SIGMA,
};
pub use toy::{
    eval_sequences, mean_loss, sample_blob_sequence, toy_ann, toy_error_over_time, toy_model,
    train_toy, BlobSequence, BlobTaskConfig, ToyAnnOutput, ToyHybrid, ToyTrainConfig,
    ToyTrainResult, TOY_FEATURES,
};
