//! Training procedures: supervised fitting on weak labels, classic
//! self-training with a fixed teacher, and the bilevel loop in which the
//! teacher refines itself through a virtual student update.

mod msr;
mod selftrain;
mod supervised;

pub use msr::msr_train;
pub use selftrain::ft_wlst;
pub use supervised::{ft_wl, teacher_init};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};
use crate::checkpoint::{params_to_repr, TensorRepr};
use crate::classifier::{forward, Architecture, ClassifierError, ParamSet};
use crate::data::{DataError, Split, WeakDataset};
use crate::metrics::accuracy;
use crate::optim::OptimError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("weak-labeled training set is empty")]
    EmptyWeak,
    #[error("training split is empty")]
    EmptyTrain,
    #[error("validation split is empty")]
    EmptyValidation,
    #[error("confidence filter kept zero samples")]
    FilterKeptNothing,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("training aborted at step {step}: {source}")]
    Aborted {
        step: u64,
        source: Box<TrainError>,
    },
}

pub(crate) type Result<T> = std::result::Result<T, TrainError>;

/// Attach the step index to any failure inside one training step, so
/// non-finite losses abort with their location.
pub(crate) fn at_step<T>(step: u64, r: Result<T>) -> Result<T> {
    r.map_err(|source| TrainError::Aborted {
        step,
        source: Box::new(source),
    })
}

/// Hyperparameters shared by every training procedure.
///
/// Rates default to the fine-tuning values the methods were tuned around;
/// experiment configs override them for the small feature-vector models
/// used here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Student learning rate (also the virtual step size).
    pub student_rate: f64,
    /// Teacher target learning rate; 0 freezes the teacher entirely.
    pub teacher_rate: f64,
    /// Total student steps T.
    pub steps: u64,
    /// Confidence threshold tau for the student update filter.
    pub tau: f64,
    /// Training batch size B.
    pub batch_size: usize,
    /// Validation batch size for the meta-update.
    pub val_batch_size: usize,
    /// Student steps before the teacher starts updating.
    pub warmup: u64,
    pub seed: u64,
    /// Off: the teacher uses the constant rate instead of the linear ramp.
    pub use_scheduler: bool,
    /// Off: every sample passes the student-update filter.
    pub use_filter: bool,
    /// Early stop after this many evals without a validation improvement;
    /// 0 disables.
    pub patience: u64,
    /// Steps between evaluations; the final step always evaluates.
    pub eval_interval: u64,
    /// MLP hidden layer widths.
    pub hidden_dims: Vec<usize>,
    pub weight_decay: f64,
    /// Steps of supervised training for the initial teacher.
    pub init_steps: u64,
    /// Self-training targets soft teacher distributions instead of hard
    /// pseudo-labels.
    pub st_soft_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            student_rate: 2e-5,
            teacher_rate: 2e-5,
            steps: 1000,
            tau: 0.5,
            batch_size: 32,
            val_batch_size: 32,
            warmup: 0,
            seed: 1,
            use_scheduler: true,
            use_filter: true,
            patience: 0,
            eval_interval: 50,
            hidden_dims: vec![32],
            weight_decay: 0.01,
            init_steps: 500,
            st_soft_labels: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(TrainError::BadConfig(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if self.steps == 0 || self.init_steps == 0 {
            return Err(TrainError::BadConfig("steps must be >= 1".to_string()));
        }
        if self.batch_size == 0 || self.val_batch_size == 0 {
            return Err(TrainError::BadConfig("batch sizes must be >= 1".to_string()));
        }
        if self.eval_interval == 0 {
            return Err(TrainError::BadConfig("eval_interval must be >= 1".to_string()));
        }
        if self.teacher_rate > 0.0 && self.warmup >= self.steps {
            return Err(TrainError::BadConfig(format!(
                "warmup {} leaves no steps for the teacher (T = {})",
                self.warmup, self.steps
            )));
        }
        if self.student_rate < 0.0 || self.teacher_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(TrainError::BadConfig("rates must be nonnegative".to_string()));
        }
        Ok(())
    }

    pub fn arch_for(&self, ds: &WeakDataset) -> Result<Architecture> {
        Ok(Architecture::new(
            ds.feature_dim(),
            self.hidden_dims.clone(),
            ds.num_classes(),
        )?)
    }
}

/// Accuracy per split at one evaluation; train is measured only over train
/// rows that carry gold labels and is absent when none do.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAcc {
    pub train: Option<f64>,
    pub valid: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub step: u64,
    pub student: SplitAcc,
    pub teacher: Option<SplitAcc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeepPoint {
    pub step: u64,
    pub rate: f64,
}

/// Outcome of one training run. The checkpoint fields hold the
/// best-validation snapshot used for all reported metrics; the final fields
/// are the last-step parameters.
#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    pub eval_trace: Vec<EvalPoint>,
    pub keep_rate_trace: Vec<KeepPoint>,
    pub best_step: u64,
    pub best_valid_accuracy: f64,
    /// Test accuracy of the best-validation student checkpoint.
    pub test_accuracy: f64,
    /// Teacher test accuracy at the same checkpoint, when a teacher exists.
    pub teacher_test_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
    pub final_student: BTreeMap<String, TensorRepr>,
    pub final_teacher: Option<BTreeMap<String, TensorRepr>>,
    #[serde(skip)]
    pub best_student_params: ParamSet,
    #[serde(skip)]
    pub best_teacher_params: Option<ParamSet>,
}

/// Cached per-split features and gold labels for repeated evaluation.
pub(crate) struct EvalSets {
    train: Option<(Tensor, Vec<usize>)>,
    valid: (Tensor, Vec<usize>),
    test: (Tensor, Vec<usize>),
}

impl EvalSets {
    pub(crate) fn build(ds: &WeakDataset) -> Result<Self> {
        let split_set = |split: Split| -> Result<Option<(Tensor, Vec<usize>)>> {
            let with_gold: Vec<usize> = ds
                .indices(split)
                .into_iter()
                .filter(|&i| ds.gold(i).is_some())
                .collect();
            if with_gold.is_empty() {
                return Ok(None);
            }
            Ok(Some((ds.features_of(&with_gold)?, ds.gold_of(&with_gold)?)))
        };
        let valid = split_set(Split::Valid)?.ok_or(TrainError::EmptyValidation)?;
        let test = split_set(Split::Test)?.ok_or(TrainError::EmptyValidation)?;
        Ok(Self {
            train: split_set(Split::Train)?,
            valid,
            test,
        })
    }

    pub(crate) fn acc(&self, params: &ParamSet) -> Result<SplitAcc> {
        let measure = |set: &(Tensor, Vec<usize>)| -> Result<f64> {
            let pred = forward(params, &set.0)?.argmax();
            Ok(accuracy(&pred, &set.1))
        };
        Ok(SplitAcc {
            train: self.train.as_ref().map(measure).transpose()?,
            valid: measure(&self.valid)?,
            test: measure(&self.test)?,
        })
    }
}

/// Evaluation cadence, best-checkpoint selection on validation accuracy,
/// and early stopping shared by every loop.
pub(crate) struct ProgressTracker {
    interval: u64,
    patience: u64,
    total_steps: u64,
    pub trace: Vec<EvalPoint>,
    pub best_valid: f64,
    pub best_step: u64,
    pub best_test: f64,
    pub best_teacher_test: Option<f64>,
    pub best_student: Option<ParamSet>,
    pub best_teacher: Option<ParamSet>,
    since_best: u64,
}

impl ProgressTracker {
    pub(crate) fn new(cfg_interval: u64, patience: u64, total_steps: u64) -> Self {
        Self {
            interval: cfg_interval,
            patience,
            total_steps,
            trace: Vec::new(),
            best_valid: f64::NEG_INFINITY,
            best_step: 0,
            best_test: 0.0,
            best_teacher_test: None,
            best_student: None,
            best_teacher: None,
            since_best: 0,
        }
    }

    pub(crate) fn due(&self, step: u64) -> bool {
        step % self.interval == 0 || step == self.total_steps
    }

    /// Evaluate, update the best checkpoint (strict improvement, earliest
    /// wins ties), and return true when patience is exhausted.
    pub(crate) fn record(
        &mut self,
        step: u64,
        sets: &EvalSets,
        student: &ParamSet,
        teacher: Option<&ParamSet>,
    ) -> Result<bool> {
        let student_acc = sets.acc(student)?;
        let teacher_acc = teacher.map(|t| sets.acc(t)).transpose()?;
        if student_acc.valid > self.best_valid {
            self.best_valid = student_acc.valid;
            self.best_step = step;
            self.best_test = student_acc.test;
            self.best_teacher_test = teacher_acc.as_ref().map(|a| a.test);
            self.best_student = Some(student.detached());
            self.best_teacher = teacher.map(|t| t.detached());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.trace.push(EvalPoint {
            step,
            student: student_acc,
            teacher: teacher_acc,
        });
        Ok(self.patience > 0 && self.since_best >= self.patience)
    }

    pub(crate) fn into_report(
        self,
        method: &str,
        seed: u64,
        keep_rate_trace: Vec<KeepPoint>,
        final_student: &ParamSet,
        final_teacher: Option<&ParamSet>,
        wall_clock_secs: f64,
    ) -> TrainReport {
        TrainReport {
            method: method.to_string(),
            seed,
            eval_trace: self.trace,
            keep_rate_trace,
            best_step: self.best_step,
            best_valid_accuracy: self.best_valid,
            test_accuracy: self.best_test,
            teacher_test_accuracy: self.best_teacher_test,
            wall_clock_secs,
            final_student: params_to_repr(final_student),
            final_teacher: final_teacher.map(params_to_repr),
            best_student_params: self
                .best_student
                .expect("record() ran at least once"),
            best_teacher_params: self.best_teacher,
        }
    }
}

/// Indicator weights for the confidence filter and the kept count.
pub(crate) fn filter_weights(confidence: &[f64], tau: f64) -> (Vec<f64>, usize) {
    let mut kept = 0;
    let weights = confidence
        .iter()
        .map(|&c| {
            if c >= tau {
                kept += 1;
                1.0
            } else {
                0.0
            }
        })
        .collect();
    (weights, kept)
}
