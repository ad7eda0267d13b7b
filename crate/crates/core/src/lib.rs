//! Weak-supervision training library built around a self-refining teacher.
//!
//! The crate provides a tape-based reverse-mode autodiff engine with
//! second-order gradients, small feed-forward probabilistic classifiers,
//! differentiable SGD and AdamW optimizers, a multi-source weak-label data
//! model with majority-vote aggregation, synthetic feature-dependent-noise
//! benchmarks, the bilevel teacher-refinement training loop with its
//! self-training baselines, and error-decomposition analytics.

#![forbid(unsafe_code)]

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod train;

pub use autodiff::{grad, Tape, Tensor, TensorError};
pub use classifier::{Architecture, ParamSet, PredictedDistribution};
pub use data::{CorpusStats, Split, WeakDataset};
pub use train::{TrainConfig, TrainReport};
