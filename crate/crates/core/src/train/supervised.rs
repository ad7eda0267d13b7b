//! Plain AdamW training on fixed hard labels: used both to produce the
//! initial teacher and as the fine-tune-on-weak-labels baseline.

use std::time::Instant;

use crate::autodiff::{grad, Tape};
use crate::classifier::{cross_entropy, forward, one_hot, ParamSet};
use crate::data::WeakDataset;
use crate::optim::{adamw_step, AdamW, AdamWState};
use crate::rng::{stream_rng, BatchCycler, Stream};

use super::{at_step, EvalSets, ProgressTracker, Result, TrainConfig, TrainError, TrainReport};

pub(crate) struct SupervisedOutcome {
    pub tracker: ProgressTracker,
    pub final_params: ParamSet,
}

/// AdamW on cross-entropy against the given hard labels, with periodic
/// evaluation, best-validation checkpointing, and early stopping.
pub(crate) fn supervised_train(
    ds: &WeakDataset,
    cfg: &TrainConfig,
    indices: &[usize],
    labels: &[usize],
    init_stream: Stream,
    steps: u64,
) -> Result<SupervisedOutcome> {
    assert_eq!(indices.len(), labels.len());
    let sets = EvalSets::build(ds)?;
    let mut params = ParamSet::init(cfg.arch_for(ds)?, &mut stream_rng(cfg.seed, init_stream))?;
    let opt = AdamW::with_weight_decay(cfg.weight_decay);
    let mut opt_state = AdamWState::new(&params);
    // Cycle over positions so each batch keeps its label alignment.
    let mut cycler = BatchCycler::new(
        (0..indices.len()).collect(),
        stream_rng(cfg.seed, Stream::TrainBatches),
    );
    let k = ds.num_classes();

    let mut tracker = ProgressTracker::new(cfg.eval_interval, cfg.patience, steps);
    tracker.record(0, &sets, &params, None)?;
    for t in 1..=steps {
        params = at_step(t, one_step(ds, cfg, indices, labels, k, &params, &opt, &mut opt_state, &mut cycler))?;
        if tracker.due(t) && tracker.record(t, &sets, &params, None)? {
            break;
        }
    }
    Ok(SupervisedOutcome {
        tracker,
        final_params: params,
    })
}

#[allow(clippy::too_many_arguments)]
fn one_step(
    ds: &WeakDataset,
    cfg: &TrainConfig,
    indices: &[usize],
    labels: &[usize],
    k: usize,
    params: &ParamSet,
    opt: &AdamW,
    opt_state: &mut AdamWState,
    cycler: &mut BatchCycler,
) -> Result<ParamSet> {
    let positions = cycler.next_batch(cfg.batch_size);
    let batch_idx: Vec<usize> = positions.iter().map(|&p| indices[p]).collect();
    let batch_labels: Vec<usize> = positions.iter().map(|&p| labels[p]).collect();
    let x = ds.features_of(&batch_idx)?;
    let target = one_hot(&batch_labels, k)?;

    let tape = Tape::new();
    let watched = params.watched(&tape);
    let probs = forward(&watched, &x)?;
    let loss = cross_entropy(&target, probs.probs())?;
    let grads = grad(&loss, &watched.tensors(), false)?;
    Ok(adamw_step(opt, opt_state, params, &grads, cfg.student_rate)?)
}

/// Best-validation teacher fitted on the covered weak-labeled rows for
/// `init_steps` steps.
pub fn teacher_init(ds: &WeakDataset, cfg: &TrainConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let indices = ds.covered_train_indices()?;
    if indices.is_empty() {
        return Err(TrainError::EmptyWeak);
    }
    let labels: Vec<usize> = indices
        .iter()
        .map(|&i| ds.weak_label(i).map(|w| w as usize))
        .collect::<std::result::Result<_, _>>()?;
    let out = supervised_train(ds, cfg, &indices, &labels, Stream::TeacherInit, cfg.init_steps)?;
    Ok(out.tracker.best_student.expect("evaluated at step 0"))
}

/// Baseline: fine-tune a fresh model directly on the aggregated weak labels
/// for the full step budget.
pub fn ft_wl(ds: &WeakDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let indices = ds.covered_train_indices()?;
    if indices.is_empty() {
        return Err(TrainError::EmptyWeak);
    }
    let labels: Vec<usize> = indices
        .iter()
        .map(|&i| ds.weak_label(i).map(|w| w as usize))
        .collect::<std::result::Result<_, _>>()?;
    let out = supervised_train(ds, cfg, &indices, &labels, Stream::StudentInit, cfg.steps)?;
    Ok(out.tracker.into_report(
        "ft-wl",
        cfg.seed,
        Vec::new(),
        &out.final_params,
        None,
        start.elapsed().as_secs_f64(),
    ))
}
