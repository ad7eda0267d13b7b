//! Classic self-training: a fixed teacher pseudo-labels the training pool
//! once, low-confidence rows are dropped, and a fresh student fits the rest.

use std::time::Instant;

use crate::autodiff::{grad, Tape};
use crate::classifier::{forward, one_hot, weighted_cross_entropy, ParamSet};
use crate::data::WeakDataset;
use crate::optim::{adamw_step, AdamW, AdamWState};
use crate::rng::{stream_rng, BatchCycler, Stream};

use super::{
    at_step, filter_weights, EvalSets, KeepPoint, ProgressTracker, Result, TrainConfig, TrainError,
    TrainReport,
};

/// Train a student against pseudo-labels from the frozen `teacher` on every
/// training row whose teacher confidence clears `tau`. Targets are hard
/// argmax labels unless `st_soft_labels` asks for the full distributions.
pub fn ft_wlst(ds: &WeakDataset, teacher: &ParamSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let sets = EvalSets::build(ds)?;
    let pool = ds.train_indices();
    if pool.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let teacher = teacher.detached();

    // One filtering pass over the whole pool.
    let conf = forward(&teacher, &ds.features_of(&pool)?)?.confidence();
    let (_, kept_total) = filter_weights(&conf, cfg.tau);
    if kept_total == 0 {
        return Err(TrainError::FilterKeptNothing);
    }
    let kept: Vec<usize> = pool
        .iter()
        .zip(&conf)
        .filter(|(_, &c)| c >= cfg.tau)
        .map(|(&i, _)| i)
        .collect();
    let keep_rate = kept.len() as f64 / pool.len() as f64;

    let mut student = ParamSet::init(
        cfg.arch_for(ds)?,
        &mut stream_rng(cfg.seed, Stream::StudentInit),
    )?;
    let opt = AdamW::with_weight_decay(cfg.weight_decay);
    let mut opt_state = AdamWState::new(&student);
    let mut cycler = BatchCycler::new(kept, stream_rng(cfg.seed, Stream::TrainBatches));

    let mut tracker = ProgressTracker::new(cfg.eval_interval, cfg.patience, cfg.steps);
    tracker.record(0, &sets, &student, Some(&teacher))?;
    let mut keep_trace = Vec::new();
    for t in 1..=cfg.steps {
        student = at_step(
            t,
            one_step(ds, cfg, &teacher, &student, &opt, &mut opt_state, &mut cycler),
        )?;
        keep_trace.push(KeepPoint {
            step: t,
            rate: keep_rate,
        });
        if tracker.due(t) && tracker.record(t, &sets, &student, Some(&teacher))? {
            break;
        }
    }
    Ok(tracker.into_report(
        "ft-wlst",
        cfg.seed,
        keep_trace,
        &student,
        Some(&teacher),
        start.elapsed().as_secs_f64(),
    ))
}

fn one_step(
    ds: &WeakDataset,
    cfg: &TrainConfig,
    teacher: &ParamSet,
    student: &ParamSet,
    opt: &AdamW,
    opt_state: &mut AdamWState,
    cycler: &mut BatchCycler,
) -> Result<ParamSet> {
    let batch = cycler.next_batch(cfg.batch_size);
    let x = ds.features_of(&batch)?;
    let soft = forward(teacher, &x)?;
    let target = if cfg.st_soft_labels {
        soft.probs().clone()
    } else {
        one_hot(&soft.argmax(), ds.num_classes())?
    };

    let tape = Tape::new();
    let watched = student.watched(&tape);
    let probs = forward(&watched, &x)?;
    let ones = vec![1.0; batch.len()];
    let loss = weighted_cross_entropy(&target, probs.probs(), &ones)?;
    let grads = grad(&loss, &watched.tensors(), false)?;
    Ok(adamw_step(opt, opt_state, student, &grads, cfg.student_rate)?)
}
