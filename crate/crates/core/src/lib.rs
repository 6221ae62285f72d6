#![no_std]

//! Core of the incremental CTR training framework.
//!
//! Everything here is pure computation over owned values and needs only
//! `alloc`: the embeddings + MLP click model and its Adagrad optimizer, the
//! distillation objective, warm starting a student from a teacher, the
//! synthetic impression world, the training loops for teachers and students,
//! and the offline metrics used to compare training regimes.
//!
//! File formats, wall-clock measurement and the deployment pipeline live in
//! the `ctr-incr` crate.

extern crate alloc;

pub mod distill;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod train;
pub mod warmstart;
pub mod world;

pub use crate::distill::{binary_ce, kd_loss, kd_loss_grad, precompute_soft_targets, soften, KdConfig};
pub use crate::error::{Error, Result};
pub use crate::metrics::{compare_regimes, ComparisonTable, Metric, MetricsReport};
pub use crate::nn::{CtrModel, FieldSpec, Gradients, ModelSpec, OptimizerState, Vocabulary};
pub use crate::train::{train_student, train_teacher, Regime, TrainConfig, Trained};
pub use crate::warmstart::{expand_vocabulary, scratch_start, warm_start};
pub use crate::world::{generate_stream, slice_window, Impression, WorldConfig, WorldTruth};
