//! Parameter-update rules: a differentiable SGD step for the virtual
//! student, AdamW for real teacher/student updates, and the teacher's
//! linearly increasing learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{grad, Tensor, TensorError};
use crate::classifier::{ClassifierError, ParamSet};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("{actual} gradients for {expected} parameters")]
    GradCount { expected: usize, actual: usize },
    #[error("gradient for {name} has shape {actual:?}, expected {expected:?}")]
    GradShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("schedule step {t} outside 1..={horizon}")]
    ScheduleStep { t: u64, horizon: u64 },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
}

type Result<T> = std::result::Result<T, OptimError>;

/// One plain SGD step on a copy of `params`, recorded on the tape.
///
/// Gradients are taken with create-graph, so the returned parameters remain
/// differentiable functions of everything upstream of `loss` - in
/// particular of the teacher outputs inside it. That retained path is what
/// the teacher meta-gradient later differentiates through.
pub fn sgd_virtual_step(params: &ParamSet, loss: &Tensor, rate: f64) -> Result<ParamSet> {
    let tensors = params.tensors();
    let grads = grad(loss, &tensors, true)?;
    let stepped = tensors
        .iter()
        .zip(&grads)
        .map(|(p, g)| p.sub(&g.mul_scalar(rate)?))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(params.with_tensors(stepped)?)
}

/// AdamW hyperparameters; decay is decoupled from the adaptive step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::default()
        }
    }
}

/// Moment buffers aligned positionally with one ParamSet's entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &ParamSet) -> Self {
        let names = params
            .entries()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        Self {
            step: 0,
            names,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update with bias correction; returns the new parameters and
/// advances `state`. Purely elementwise on detached values.
pub fn adamw_step(
    opt: &AdamW,
    state: &mut AdamWState,
    params: &ParamSet,
    grads: &[Tensor],
    rate: f64,
) -> Result<ParamSet> {
    let entries = params.entries();
    if grads.len() != entries.len() {
        return Err(OptimError::GradCount {
            expected: entries.len(),
            actual: grads.len(),
        });
    }
    for ((name, p), g) in entries.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(OptimError::GradShape {
                name: name.clone(),
                expected: p.shape().to_vec(),
                actual: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let mut updated = Vec::with_capacity(entries.len());
    for (i, ((_, p), g)) in entries.iter().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut out = Vec::with_capacity(p.numel());
        for ((theta, grad_val), (mi, vi)) in p
            .data()
            .iter()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * grad_val;
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * grad_val * grad_val;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            out.push(theta - rate * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * theta));
        }
        updated.push(Tensor::from_vec(p.shape().to_vec(), out)?);
    }
    Ok(params.with_tensors(updated)?)
}

/// Linear ramp R(t) = t * lambda_t / T over a fixed horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherSchedule {
    lambda_t: f64,
    horizon: u64,
}

impl TeacherSchedule {
    pub fn new(lambda_t: f64, horizon: u64) -> Result<Self> {
        if !(lambda_t > 0.0) {
            return Err(OptimError::BadSchedule(format!(
                "target rate must be positive, got {lambda_t}"
            )));
        }
        if horizon == 0 {
            return Err(OptimError::BadSchedule("horizon must be >= 1".to_string()));
        }
        Ok(Self { lambda_t, horizon })
    }

    /// Rate at step t, 1-based; exactly lambda_t at t = horizon.
    pub fn rate(&self, t: u64) -> Result<f64> {
        if t < 1 || t > self.horizon {
            return Err(OptimError::ScheduleStep {
                t,
                horizon: self.horizon,
            });
        }
        Ok(t as f64 * self.lambda_t / self.horizon as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::classifier::Architecture;
    use crate::rng::{stream_rng, Stream};

    fn one_param_set(value: f64) -> ParamSet {
        // Smallest legal architecture: 1x2 weight + bias, but tests below
        // often only exercise the first tensor.
        let arch = Architecture::new(1, vec![], 2).unwrap();
        let mut rng = stream_rng(0, Stream::TeacherInit);
        let p = ParamSet::init(arch, &mut rng).unwrap();
        p.with_tensors(vec![
            Tensor::from_vec(vec![1, 2], vec![value, 0.0]).unwrap(),
            Tensor::zeros(vec![2]),
        ])
        .unwrap()
    }

    #[test]
    fn zero_rate_virtual_step_keeps_values() {
        let tape = Tape::new();
        let p = one_param_set(1.0).watched(&tape);
        let loss = p.tensors()[0].mul(p.tensors()[0]).unwrap().sum().unwrap();
        let stepped = sgd_virtual_step(&p, &loss, 0.0).unwrap();
        for (a, b) in p.tensors().iter().zip(stepped.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn virtual_step_on_square_loss() {
        // loss = theta^2 at theta=1, rate 0.1: theta' = 1 - 0.1*2 = 0.8.
        let tape = Tape::new();
        let p = one_param_set(1.0).watched(&tape);
        let loss = p.tensors()[0].mul(p.tensors()[0]).unwrap().sum().unwrap();
        let stepped = sgd_virtual_step(&p, &loss, 0.1).unwrap();
        assert!((stepped.tensors()[0].data()[0] - 0.8).abs() < 1e-15);
        assert!(stepped.tensors()[0].is_on_tape());
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_identity() {
        let opt = AdamW::with_weight_decay(0.0);
        let p = one_param_set(0.7);
        let mut state = AdamWState::new(&p);
        let grads: Vec<Tensor> = p
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        let next = adamw_step(&opt, &mut state, &p, &grads, 0.05).unwrap();
        for (a, b) in p.tensors().iter().zip(next.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn adamw_first_step_is_sign_normalized() {
        // After bias correction the first update is -rate * g/(|g|+eps).
        let opt = AdamW::with_weight_decay(0.0);
        let p = one_param_set(0.0);
        let mut state = AdamWState::new(&p);
        let grads = vec![
            Tensor::from_vec(vec![1, 2], vec![3.0, -0.5]).unwrap(),
            Tensor::zeros(vec![2]),
        ];
        let next = adamw_step(&opt, &mut state, &p, &grads, 0.1).unwrap();
        let w = next.tensors()[0].data().to_vec();
        assert!((w[0] - (-0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-12);
        assert!((w[1] - (0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn adamw_with_zero_betas_stays_sign_normalized() {
        let opt = AdamW {
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let mut p = one_param_set(0.0);
        let mut state = AdamWState::new(&p);
        for step in 0..3 {
            let g = 1.5 * (step + 1) as f64;
            let grads = vec![
                Tensor::from_vec(vec![1, 2], vec![g, -g]).unwrap(),
                Tensor::zeros(vec![2]),
            ];
            let before = p.tensors()[0].data().to_vec();
            p = adamw_step(&opt, &mut state, &p, &grads, 0.01).unwrap();
            let after = p.tensors()[0].data().to_vec();
            assert!((after[0] - (before[0] - 0.01 * g / (g + 1e-8))).abs() < 1e-12);
            assert!((after[1] - (before[1] + 0.01 * g / (g + 1e-8))).abs() < 1e-12);
        }
    }

    #[test]
    fn adamw_is_deterministic() {
        let run = || {
            let opt = AdamW::default();
            let mut p = one_param_set(0.3);
            let mut state = AdamWState::new(&p);
            for i in 0..5 {
                let grads = vec![
                    Tensor::from_vec(vec![1, 2], vec![0.2 * i as f64, -0.1]).unwrap(),
                    Tensor::filled(vec![2], 0.05),
                ];
                p = adamw_step(&opt, &mut state, &p, &grads, 0.02).unwrap();
            }
            (p.tensors()[0].to_vec(), state.m, state.v)
        };
        let a = run();
        let b = run();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn grad_shape_mismatch_rejected() {
        let opt = AdamW::default();
        let p = one_param_set(0.0);
        let mut state = AdamWState::new(&p);
        let grads = vec![Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2])];
        assert!(matches!(
            adamw_step(&opt, &mut state, &p, &grads, 0.1),
            Err(OptimError::GradShape { .. })
        ));
    }

    #[test]
    fn schedule_is_linear_and_hits_target() {
        let s = TeacherSchedule::new(2e-5, 1000).unwrap();
        assert!((s.rate(1000).unwrap() - 2e-5).abs() < 1e-20);
        assert!((s.rate(500).unwrap() - 1e-5).abs() < 1e-20);
        let tiny = TeacherSchedule::new(2e-5, 1_000_000).unwrap();
        assert!((tiny.rate(1).unwrap() - 2e-11).abs() < 1e-24);
    }

    #[test]
    fn schedule_is_monotone() {
        let s = TeacherSchedule::new(3e-4, 17).unwrap();
        let mut prev = 0.0;
        for t in 1..=17 {
            let r = s.rate(t).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn schedule_rejects_out_of_range_steps() {
        let s = TeacherSchedule::new(1e-3, 10).unwrap();
        assert!(matches!(s.rate(0), Err(OptimError::ScheduleStep { .. })));
        assert!(matches!(s.rate(11), Err(OptimError::ScheduleStep { .. })));
        assert!(TeacherSchedule::new(0.0, 10).is_err());
        assert!(TeacherSchedule::new(1e-3, 0).is_err());
    }
}
