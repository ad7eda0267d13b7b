//! Bilevel self-training loop. Each step the teacher pseudo-labels a batch,
//! a virtual copy of the student takes one differentiable SGD step on those
//! labels, and the teacher descends the virtual student's validation loss
//! through that step (a second-order gradient). The real student then learns
//! from the updated teacher on the confidence-filtered batch, and the
//! virtual copy is discarded.

use std::time::Instant;

use crate::autodiff::{grad, Tape, Tensor};
use crate::classifier::{cross_entropy, forward, one_hot, weighted_cross_entropy, ParamSet};
use crate::data::{Split, WeakDataset};
use crate::optim::{adamw_step, sgd_virtual_step, AdamW, AdamWState, TeacherSchedule};
use crate::rng::{stream_rng, BatchCycler, Stream};

use super::{
    at_step, filter_weights, EvalSets, KeepPoint, ProgressTracker, Result, TrainConfig, TrainError,
    TrainReport,
};

struct MsrState {
    teacher: ParamSet,
    student: ParamSet,
    teacher_opt_state: AdamWState,
    student_opt_state: AdamWState,
    opt: AdamW,
    cycler: BatchCycler,
    val_cycler: Option<BatchCycler>,
    schedule: Option<TeacherSchedule>,
    k: usize,
}

/// Run the bilevel loop from the given initial teacher. `teacher_rate = 0`
/// freezes the teacher and reduces the loop to self-training on its soft
/// labels; the teacher is also frozen for the first `warmup` steps.
pub fn msr_train(ds: &WeakDataset, init_teacher: &ParamSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let sets = EvalSets::build(ds)?;
    let pool = ds.train_indices();
    if pool.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let teacher_active = cfg.teacher_rate > 0.0;
    let val_cycler = if teacher_active {
        let val = ds.indices(Split::Valid);
        if val.is_empty() {
            return Err(TrainError::EmptyValidation);
        }
        Some(BatchCycler::new(val, stream_rng(cfg.seed, Stream::ValBatches)))
    } else {
        None
    };
    let schedule = if teacher_active && cfg.use_scheduler {
        Some(TeacherSchedule::new(cfg.teacher_rate, cfg.steps - cfg.warmup)?)
    } else {
        None
    };

    let teacher = init_teacher.detached();
    let student = ParamSet::init(
        cfg.arch_for(ds)?,
        &mut stream_rng(cfg.seed, Stream::StudentInit),
    )?;
    let mut state = MsrState {
        teacher_opt_state: AdamWState::new(&teacher),
        student_opt_state: AdamWState::new(&student),
        teacher,
        student,
        opt: AdamW::with_weight_decay(cfg.weight_decay),
        cycler: BatchCycler::new(pool, stream_rng(cfg.seed, Stream::TrainBatches)),
        val_cycler,
        schedule,
        k: ds.num_classes(),
    };

    let mut tracker = ProgressTracker::new(cfg.eval_interval, cfg.patience, cfg.steps);
    tracker.record(0, &sets, &state.student, Some(&state.teacher))?;
    let mut keep_trace = Vec::new();
    for t in 1..=cfg.steps {
        let rate = at_step(t, kept_rate_step(ds, cfg, &mut state, t, teacher_active))?;
        keep_trace.push(KeepPoint { step: t, rate });
        if tracker.due(t) && tracker.record(t, &sets, &state.student, Some(&state.teacher))? {
            break;
        }
    }
    Ok(tracker.into_report(
        "msr",
        cfg.seed,
        keep_trace,
        &state.student,
        Some(&state.teacher),
        start.elapsed().as_secs_f64(),
    ))
}

/// One full step; returns the fraction of the batch the filter kept.
fn kept_rate_step(
    ds: &WeakDataset,
    cfg: &TrainConfig,
    state: &mut MsrState,
    t: u64,
    teacher_active: bool,
) -> Result<f64> {
    let batch = state.cycler.next_batch(cfg.batch_size);
    let x = ds.features_of(&batch)?;

    if teacher_active && t > cfg.warmup {
        teacher_step(ds, cfg, state, t, &x)?;
    }
    student_step(cfg, state, &x, batch.len())
}

/// Meta-update: descend the validation loss of a one-step-ahead virtual
/// student with respect to the teacher parameters.
fn teacher_step(
    ds: &WeakDataset,
    cfg: &TrainConfig,
    state: &mut MsrState,
    t: u64,
    x: &Tensor,
) -> Result<()> {
    let val_batch = state
        .val_cycler
        .as_mut()
        .expect("validation cycler exists while the teacher is active")
        .next_batch(cfg.val_batch_size);
    let xv = ds.features_of(&val_batch)?;
    let yv = one_hot(&ds.gold_of(&val_batch)?, state.k)?;

    let tape = Tape::new();
    let teacher_w = state.teacher.watched(&tape);
    let student_w = state.student.watched(&tape);
    let soft = forward(&teacher_w, x)?;
    let student_probs = forward(&student_w, x)?;
    let inner_loss = cross_entropy(soft.probs(), student_probs.probs())?;
    let virtual_student = sgd_virtual_step(&student_w, &inner_loss, cfg.student_rate)?;
    let val_probs = forward(&virtual_student, &xv)?;
    let val_loss = cross_entropy(&yv, val_probs.probs())?;
    let teacher_grads = grad(&val_loss, &teacher_w.tensors(), false)?;

    let rate = match &state.schedule {
        Some(s) => s.rate(t - cfg.warmup)?,
        None => cfg.teacher_rate,
    };
    state.teacher = adamw_step(
        &state.opt,
        &mut state.teacher_opt_state,
        &state.teacher,
        &teacher_grads,
        rate,
    )?;
    Ok(())
}

/// Real student update on the (possibly filtered) batch against the current
/// teacher's soft labels. A batch the filter empties leaves the student and
/// its optimizer untouched.
fn student_step(cfg: &TrainConfig, state: &mut MsrState, x: &Tensor, batch_len: usize) -> Result<f64> {
    let tape = Tape::new();
    let soft = forward(&state.teacher, x)?;
    let (weights, kept) = if cfg.use_filter {
        filter_weights(&soft.confidence(), cfg.tau)
    } else {
        (vec![1.0; batch_len], batch_len)
    };
    if kept == 0 {
        return Ok(0.0);
    }
    let student_w = state.student.watched(&tape);
    let probs = forward(&student_w, x)?;
    let loss = weighted_cross_entropy(soft.probs(), probs.probs(), &weights)?;
    let grads = grad(&loss, &student_w.tensors(), false)?;
    state.student = adamw_step(
        &state.opt,
        &mut state.student_opt_state,
        &state.student,
        &grads,
        cfg.student_rate,
    )?;
    Ok(kept as f64 / batch_len as f64)
}
