//! Permutation prediction with a differentiable doubly-stochastic layer.
//!
//! The pipeline: elements of an ordered sequence are shuffled; a small
//! Siamese network scores every (element, position) pair; iterative row/column
//! normalization turns the scores into a doubly-stochastic matrix; an exact
//! assignment solver rounds that matrix to the nearest permutation.
//!
//! Modules build bottom-up: [`mat`] and [`perm`] are the data types,
//! [`sinkhorn`] the differentiable normalization, [`assign`] the rounding
//! step, [`model`] the trainable network, [`data`] the synthetic and
//! image-patch pipelines, [`metrics`] the evaluation measures.

pub mod assign;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mat;
pub mod metrics;
pub mod model;
pub mod perm;
pub mod sinkhorn;

pub use assign::{brute_force_round, round_to_permutation, AssignmentResult};
pub use error::{Error, Result};
pub use mat::Mat;
pub use metrics::{hamming_similarity, kendall_tau, normalization_error, DoublyStochasticMatrix};
pub use model::{
    checkpoint::{load_checkpoint, save_checkpoint},
    forward, gradcheck_model, loss_naive, loss_sinkhorn_ce, predict, predict_with, saliency,
    sgd_step, train, LossKind, MetricsRecord, ModelDims, ModelParams, Prediction, TrainConfig,
};
pub use perm::{sample_permutation, Permutation, SequenceSample};
pub use sinkhorn::{sinkhorn_backward, sinkhorn_converge, sinkhorn_forward, SinkhornConfig, TapeCache};
