//! Feed-forward probabilistic classifiers over precomputed feature vectors,
//! with the cross-entropy loss and normalized-entropy confidence score used
//! by the training loops.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError};

/// Probability floor applied before every logarithm, so one-hot
/// distributions stay finite.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("feature dimension mismatch: params expect {expected}, got {actual}")]
    FeatureDim { expected: usize, actual: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

type Result<T> = std::result::Result<T, ClassifierError>;

/// Layer layout of a tanh MLP ending in a softmax over `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(ClassifierError::Architecture(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(ClassifierError::Architecture(
                "zero-width layer".to_string(),
            ));
        }
        Ok(())
    }

    /// (fan_in, fan_out) per layer, in forward order.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }

    /// Width of the last hidden layer; the input width when there is none.
    pub fn last_hidden_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// Ordered, named collection of one classifier's trainable tensors.
///
/// Entry order is fixed (w1, b1, w2, b2, ...) so optimizer state and
/// checkpoints align positionally.
#[derive(Debug, Clone)]
pub struct ParamSet {
    arch: Architecture,
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    /// Glorot-uniform weights, zero biases, drawn in layer order.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut entries = Vec::new();
        for (l, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            entries.push((
                format!("w{}", l + 1),
                Tensor::from_vec(vec![fan_in, fan_out], w)?,
            ));
            entries.push((format!("b{}", l + 1), Tensor::zeros(vec![fan_out])));
        }
        Ok(Self { arch, entries })
    }

    /// Rebuild from named tensors, checking the shape chain.
    pub fn from_entries(arch: Architecture, named: &[(String, Tensor)]) -> Result<Self> {
        arch.validate()?;
        let mut entries = Vec::new();
        for (l, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
            for (name, expected) in [
                (format!("w{}", l + 1), vec![fan_in, fan_out]),
                (format!("b{}", l + 1), vec![fan_out]),
            ] {
                let tensor = named
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| ClassifierError::MissingParam(name.clone()))?;
                if tensor.shape() != expected.as_slice() {
                    return Err(ClassifierError::ParamShape {
                        name,
                        expected,
                        actual: tensor.shape().to_vec(),
                    });
                }
                entries.push((name, tensor));
            }
        }
        Ok(Self { arch, entries })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    /// Copy whose tensors are registered as leaves on `tape`.
    pub fn watched(&self, tape: &Tape) -> ParamSet {
        ParamSet {
            arch: self.arch.clone(),
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.watch(t)))
                .collect(),
        }
    }

    /// Copy with no tape attachments.
    pub fn detached(&self) -> ParamSet {
        ParamSet {
            arch: self.arch.clone(),
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.detach()))
                .collect(),
        }
    }

    /// Same names and architecture, replacement tensors in entry order.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<ParamSet> {
        if tensors.len() != self.entries.len() {
            return Err(ClassifierError::Architecture(format!(
                "expected {} tensors, got {}",
                self.entries.len(),
                tensors.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(tensors)
            .map(|((name, old), new)| {
                if new.shape() != old.shape() {
                    return Err(ClassifierError::ParamShape {
                        name: name.clone(),
                        expected: old.shape().to_vec(),
                        actual: new.shape().to_vec(),
                    });
                }
                Ok((name.clone(), new))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet {
            arch: self.arch.clone(),
            entries,
        })
    }
}

/// Row-normalized class probabilities for a batch, shape [batch, k].
#[derive(Debug, Clone)]
pub struct PredictedDistribution {
    probs: Tensor,
}

impl PredictedDistribution {
    /// Wrap an externally built [batch, k] matrix, checking that every row
    /// is a probability distribution.
    pub fn from_probs(probs: Tensor) -> Result<Self> {
        if probs.rank() != 2 || probs.shape()[1] < 2 {
            return Err(ClassifierError::Tensor(TensorError::ShapeMismatch {
                op: "from_probs",
                detail: format!("need [batch, k >= 2], got {:?}", probs.shape()),
            }));
        }
        let k = probs.shape()[1];
        for (row, chunk) in probs.data().chunks(k).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if chunk.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(ClassifierError::Tensor(TensorError::ShapeMismatch {
                    op: "from_probs",
                    detail: format!("row {row} is not a distribution (sum {sum})"),
                }));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Most probable class per row; first index wins exact ties.
    pub fn argmax(&self) -> Vec<usize> {
        let k = self.num_classes();
        self.probs
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                        if v > bv {
                            (i, v)
                        } else {
                            (bi, bv)
                        }
                    })
                    .0
            })
            .collect()
    }

    /// Per-row confidence 1 - H(p)/ln(k): 1 on one-hot rows, 0 on uniform.
    pub fn confidence(&self) -> Vec<f64> {
        let k = self.num_classes();
        let ln_k = (k as f64).ln();
        self.probs
            .data()
            .chunks(k)
            .map(|row| {
                // A constant row is the uniform distribution; short-circuit
                // so the zero endpoint is exact instead of off by summation
                // ulps (k = 3 already drifts by 2e-16).
                if row.iter().all(|&p| p == row[0]) {
                    return 0.0;
                }
                let entropy: f64 = row.iter().map(|&p| -p * p.max(LOG_EPS).ln()).sum();
                (1.0 - entropy / ln_k).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Forward pass producing tape-recorded probabilities.
pub fn forward(params: &ParamSet, features: &Tensor) -> Result<PredictedDistribution> {
    Ok(PredictedDistribution {
        probs: forward_with_hidden(params, features)?.1,
    })
}

/// Forward pass that also returns the last hidden activations (the input
/// features when the network is a single linear layer).
pub fn forward_with_hidden(params: &ParamSet, features: &Tensor) -> Result<(Tensor, Tensor)> {
    if features.rank() != 2 {
        return Err(ClassifierError::Tensor(TensorError::ShapeMismatch {
            op: "forward",
            detail: format!("features must be [batch, d], got {:?}", features.shape()),
        }));
    }
    let batch = features.shape()[0];
    if features.shape()[1] != params.arch.input_dim {
        return Err(ClassifierError::FeatureDim {
            expected: params.arch.input_dim,
            actual: features.shape()[1],
        });
    }
    let layers = params.arch.layer_dims().len();
    let mut h = features.clone();
    let mut last_hidden = features.clone();
    for l in 0..layers {
        let w = &params.entries[2 * l].1;
        let b = &params.entries[2 * l + 1].1;
        let z = h.matmul(w)?.add(&b.broadcast_rows(batch)?)?;
        if l + 1 < layers {
            h = z.tanh()?;
            last_hidden = h.clone();
        } else {
            h = z;
        }
    }
    Ok((last_hidden, h.softmax()?))
}

/// Batch-mean cross-entropy -E_{y~p} ln q(y), differentiable in both
/// arguments so soft targets pass gradients back to their producer.
pub fn cross_entropy(target: &Tensor, predicted: &Tensor) -> Result<Tensor> {
    if target.shape() != predicted.shape() || target.rank() != 2 {
        return Err(ClassifierError::Tensor(TensorError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("{:?} vs {:?}", target.shape(), predicted.shape()),
        }));
    }
    let batch = target.shape()[0] as f64;
    let ln_q = predicted.max_scalar(LOG_EPS)?.ln()?;
    Ok(target.mul(&ln_q)?.sum()?.mul_scalar(-1.0 / batch)?)
}

/// Cross-entropy where each row additionally carries a fixed weight; the
/// mean stays over the full batch, so zero-weight rows contribute zero
/// without shrinking the denominator.
pub fn weighted_cross_entropy(
    target: &Tensor,
    predicted: &Tensor,
    weights: &[f64],
) -> Result<Tensor> {
    if target.shape() != predicted.shape() || target.rank() != 2 {
        return Err(ClassifierError::Tensor(TensorError::ShapeMismatch {
            op: "weighted_cross_entropy",
            detail: format!("{:?} vs {:?}", target.shape(), predicted.shape()),
        }));
    }
    let batch = target.shape()[0];
    if weights.len() != batch {
        return Err(ClassifierError::Tensor(TensorError::ShapeMismatch {
            op: "weighted_cross_entropy",
            detail: format!("{} weights for batch {}", weights.len(), batch),
        }));
    }
    let ln_q = predicted.max_scalar(LOG_EPS)?.ln()?;
    let per_sample = target.mul(&ln_q)?.sum_axis1()?;
    let w = Tensor::from_vec(vec![batch, 1], weights.to_vec())?;
    Ok(per_sample
        .mul(&w)?
        .sum()?
        .mul_scalar(-1.0 / batch as f64)?)
}

/// One-hot rows for hard labels.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(ClassifierError::Architecture(format!(
                "label {y} out of range for k={k}"
            )));
        }
        data[i * k + y] = 1.0;
    }
    Ok(Tensor::from_vec(vec![labels.len(), k], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn arch(d: usize, hidden: Vec<usize>, k: usize) -> Architecture {
        Architecture::new(d, hidden, k).unwrap()
    }

    fn zero_params(a: Architecture) -> ParamSet {
        let mut rng = stream_rng(0, Stream::TeacherInit);
        let p = ParamSet::init(a, &mut rng).unwrap();
        let zeros = p
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        p.with_tensors(zeros).unwrap()
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = zero_params(arch(4, vec![8], 3));
        let x = Tensor::from_vec(vec![2, 4], vec![0.3; 8]).unwrap();
        let probs = forward(&p, &x).unwrap();
        for &v in probs.probs().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_layer_with_log_two_bias() {
        let p = zero_params(arch(2, vec![], 2));
        let bias = Tensor::from_vec(vec![2], vec![2.0_f64.ln(), 0.0]).unwrap();
        let p = p.with_tensors(vec![Tensor::zeros(vec![2, 2]), bias]).unwrap();
        let x = Tensor::from_vec(vec![1, 2], vec![5.0, -3.0]).unwrap();
        let probs = forward(&p, &x).unwrap();
        let row = probs.probs().data();
        assert!((row[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((row[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_of_probs_matches_argmax_of_logits() {
        let mut rng = stream_rng(3, Stream::TeacherInit);
        let p = ParamSet::init(arch(5, vec![7], 4), &mut rng).unwrap();
        let x_data: Vec<f64> = (0..15).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let x = Tensor::from_vec(vec![3, 5], x_data).unwrap();
        // Probabilities are a monotone map of logits, so both agree; the
        // check runs the public path twice for determinism as well.
        let a = forward(&p, &x).unwrap().argmax();
        let b = forward(&p, &x).unwrap().argmax();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_entropy_of_uniform_prediction_is_ln_two() {
        let p = one_hot(&[0], 2).unwrap();
        let q = Tensor::from_vec(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let ce = cross_entropy(&p, &q).unwrap().item();
        assert!((ce - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_of_perfect_one_hot_is_zero() {
        let p = one_hot(&[1], 3).unwrap();
        let ce = cross_entropy(&p, &p).unwrap().item();
        assert_eq!(ce, 0.0);
    }

    #[test]
    fn cross_entropy_soft_example() {
        let p = Tensor::from_vec(vec![1, 2], vec![0.7, 0.3]).unwrap();
        let q = Tensor::from_vec(vec![1, 2], vec![0.6, 0.4]).unwrap();
        let ce = cross_entropy(&p, &q).unwrap().item();
        let oracle = -(0.7 * 0.6_f64.ln() + 0.3 * 0.4_f64.ln());
        assert!((ce - oracle).abs() < 1e-15);
        assert!((ce - 0.6324651562).abs() < 1e-10);
    }

    #[test]
    fn confidence_of_uniform_is_zero_and_one_hot_is_one() {
        // Including class counts whose term-by-term entropy sum lands an ulp
        // away from ln k, which the constant-row short circuit absorbs.
        for k in [2usize, 3, 4, 6, 7] {
            let uniform = PredictedDistribution {
                probs: Tensor::from_vec(vec![1, k], vec![1.0 / k as f64; k]).unwrap(),
            };
            assert_eq!(uniform.confidence(), vec![0.0], "k = {k}");
        }
        let hot = PredictedDistribution {
            probs: one_hot(&[2], 4).unwrap(),
        };
        assert_eq!(hot.confidence(), vec![1.0]);
    }

    #[test]
    fn confidence_peaked_example() {
        let p = PredictedDistribution {
            probs: Tensor::from_vec(vec![1, 4], vec![0.97, 0.01, 0.01, 0.01]).unwrap(),
        };
        let h = -(0.97 * 0.97_f64.ln() + 3.0 * 0.01 * 0.01_f64.ln());
        let oracle = 1.0 - h / 4.0_f64.ln();
        let got = p.confidence()[0];
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.8790296336).abs() < 1e-10);
    }

    #[test]
    fn confidence_is_permutation_invariant() {
        let a = PredictedDistribution {
            probs: Tensor::from_vec(vec![1, 3], vec![0.6, 0.3, 0.1]).unwrap(),
        };
        let b = PredictedDistribution {
            probs: Tensor::from_vec(vec![1, 3], vec![0.1, 0.6, 0.3]).unwrap(),
        };
        // Summation order differs between the rows, so allow an ulp.
        assert!((a.confidence()[0] - b.confidence()[0]).abs() < 1e-12);
    }

    #[test]
    fn weighted_cross_entropy_zero_weights_drop_rows() {
        let p = one_hot(&[0, 1], 2).unwrap();
        let q = Tensor::from_vec(vec![2, 2], vec![0.5, 0.5, 0.9, 0.1]).unwrap();
        let all = weighted_cross_entropy(&p, &q, &[1.0, 1.0]).unwrap().item();
        let first_only = weighted_cross_entropy(&p, &q, &[1.0, 0.0]).unwrap().item();
        // Denominator stays the full batch, so dropping the second row
        // removes exactly its contribution.
        let second_alone = -(0.1_f64.ln()) / 2.0;
        assert!((all - first_only - second_alone).abs() < 1e-12);
    }

    #[test]
    fn feature_dim_mismatch_rejected() {
        let mut rng = stream_rng(0, Stream::TeacherInit);
        let p = ParamSet::init(arch(4, vec![], 2), &mut rng).unwrap();
        let x = Tensor::from_vec(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            forward(&p, &x),
            Err(ClassifierError::FeatureDim { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn init_is_deterministic_per_stream() {
        let a = ParamSet::init(arch(3, vec![5], 2), &mut stream_rng(9, Stream::StudentInit)).unwrap();
        let b = ParamSet::init(arch(3, vec![5], 2), &mut stream_rng(9, Stream::StudentInit)).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(x.data(), y.data());
        }
    }
}
