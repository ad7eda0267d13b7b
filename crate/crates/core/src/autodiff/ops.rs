use std::rc::Rc;

use super::tensor::{NodeRef, Op, Result, Tensor, TensorError};

fn ensure_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape, b.shape),
        });
    }
    Ok(())
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected rank-2, got {:?}", t.shape),
        });
    }
    Ok((t.shape[0], t.shape[1]))
}

impl Tensor {
    fn finish_binary(
        &self,
        other: &Tensor,
        op: &'static str,
        make: impl FnOnce(usize, usize) -> Op,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Tensor> {
        ensure_finite(&data, op)?;
        let data = Rc::new(data);
        let node = match self.common_tape(other)? {
            Some(tape) => {
                let a = self.id_on(&tape);
                let b = other.id_on(&tape);
                let id = tape.push(make(a, b), shape.clone(), Rc::clone(&data));
                Some(NodeRef {
                    tape: tape.inner,
                    id,
                })
            }
            None => None,
        };
        Ok(Tensor { shape, data, node })
    }

    fn finish_unary(
        &self,
        op: &'static str,
        make: impl FnOnce(usize) -> Op,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Tensor> {
        ensure_finite(&data, op)?;
        let data = Rc::new(data);
        let node = match self.tape() {
            Some(tape) => {
                let a = self.id_on(&tape);
                let id = tape.push(make(a), shape.clone(), Rc::clone(&data));
                Some(NodeRef {
                    tape: tape.inner,
                    id,
                })
            }
            None => None,
        };
        Ok(Tensor { shape, data, node })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        self.finish_binary(other, "add", Op::Add, self.shape.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        self.finish_binary(other, "sub", Op::Sub, self.shape.clone(), data)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .collect();
        self.finish_binary(other, "mul", Op::Mul, self.shape.clone(), data)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("div", self, other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a / b)
            .collect();
        self.finish_binary(other, "div", Op::Div, self.shape.clone(), data)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v + c).collect();
        self.finish_unary("add_scalar", Op::AddScalar, self.shape.clone(), data)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v * c).collect();
        self.finish_unary(
            "mul_scalar",
            |a| Op::MulScalar(a, c),
            self.shape.clone(),
            data,
        )
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = require_rank2("matmul", self)?;
        let (k2, n) = require_rank2("matmul", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = self.data[i * k + p];
                if av != 0.0 {
                    let brow = &other.data[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, b) in orow.iter_mut().zip(brow) {
                        *o += av * b;
                    }
                }
            }
        }
        self.finish_binary(other, "matmul", Op::Matmul, vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = require_rank2("transpose", self)?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        self.finish_unary("transpose", Op::Transpose, vec![n, m], out)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v.tanh()).collect();
        self.finish_unary("tanh", Op::Tanh, self.shape.clone(), data)
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v.exp()).collect();
        self.finish_unary("exp", Op::Exp, self.shape.clone(), data)
    }

    pub fn ln(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v.ln()).collect();
        self.finish_unary("ln", Op::Ln, self.shape.clone(), data)
    }

    /// Softmax over the last axis, max-subtracted for stability.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.rank() == 0 || self.rank() > 2 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax",
                detail: format!("expected rank 1 or 2, got {:?}", self.shape),
            });
        }
        let (rows, cols) = self.rows_cols();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        self.finish_unary("softmax", Op::Softmax, self.shape.clone(), out)
    }

    /// Sum of all entries as a rank-0 scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let data = vec![self.data.iter().sum()];
        self.finish_unary("sum", Op::Sum, vec![], data)
    }

    /// Mean of all entries as a rank-0 scalar.
    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel().max(1);
        self.sum()?.mul_scalar(1.0 / n as f64)
    }

    /// Column sums: [m, n] -> [n].
    pub fn sum_axis0(&self) -> Result<Tensor> {
        let (m, n) = require_rank2("sum_axis0", self)?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += self.data[i * n + j];
            }
        }
        self.finish_unary("sum_axis0", Op::SumAxis0, vec![n], out)
    }

    /// Row sums, keeping the axis: [m, n] -> [m, 1].
    pub fn sum_axis1(&self) -> Result<Tensor> {
        let (m, n) = require_rank2("sum_axis1", self)?;
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = self.data[i * n..(i + 1) * n].iter().sum();
        }
        self.finish_unary("sum_axis1", Op::SumAxis1, vec![m, 1], out)
    }

    /// Repeat a row vector into a matrix: [n] -> [m, n].
    pub fn broadcast_rows(&self, m: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_rows",
                detail: format!("expected rank-1, got {:?}", self.shape),
            });
        }
        let n = self.shape[0];
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.data);
        }
        self.finish_unary("broadcast_rows", Op::BroadcastRows, vec![m, n], out)
    }

    /// Repeat a column into a matrix: [m, 1] -> [m, n].
    pub fn broadcast_cols(&self, n: usize) -> Result<Tensor> {
        let (m, one) = require_rank2("broadcast_cols", self)?;
        if one != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_cols",
                detail: format!("expected [m, 1], got {:?}", self.shape),
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for _ in 0..n {
                out.push(self.data[i]);
            }
        }
        self.finish_unary("broadcast_cols", Op::BroadcastCols, vec![m, n], out)
    }

    /// Fill `shape` with the value of a rank-0 scalar.
    pub fn broadcast_to(&self, shape: Vec<usize>) -> Result<Tensor> {
        if self.rank() != 0 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        let n: usize = shape.iter().product();
        let out = vec![self.data[0]; n];
        self.finish_unary("broadcast_to", Op::BroadcastScalar, shape, out)
    }

    /// Gather rows by index (duplicates allowed): [m, n] -> [k, n].
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (m, n) = require_rank2("select_rows", self)?;
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(TensorError::RowOutOfRange {
                    op: "select_rows",
                    index: i,
                    rows: m,
                });
            }
            out.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        let idx = Rc::new(indices.to_vec());
        self.finish_unary(
            "select_rows",
            |a| Op::SelectRows(a, idx),
            vec![indices.len(), n],
            out,
        )
    }

    /// Scatter-add rows into a zero matrix: [k, n] -> [rows, n].
    pub fn scatter_rows(&self, indices: &[usize], rows: usize) -> Result<Tensor> {
        let (k, n) = require_rank2("scatter_rows", self)?;
        if indices.len() != k {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("{} indices for {} rows", indices.len(), k),
            });
        }
        let mut out = vec![0.0; rows * n];
        for (j, &i) in indices.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::RowOutOfRange {
                    op: "scatter_rows",
                    index: i,
                    rows,
                });
            }
            for c in 0..n {
                out[i * n + c] += self.data[j * n + c];
            }
        }
        let idx = Rc::new(indices.to_vec());
        self.finish_unary(
            "scatter_rows",
            |a| Op::ScatterRows(a, idx),
            vec![rows, n],
            out,
        )
    }

    /// Elementwise max(x, c); the backward mask treats x == c as flat.
    pub fn max_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v.max(c)).collect();
        self.finish_unary("max_scalar", |a| Op::MaxScalar(a, c), self.shape.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = t(vec![2], vec![0.0, 0.0]);
        let y = x.softmax().unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity() {
        let eye = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let a = t(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn log_inverts_exp() {
        let x = t(vec![1], vec![1.5]);
        let y = x.exp().unwrap().ln().unwrap();
        assert!((y.data()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = t(vec![2], vec![1.0, 2.0]);
        let b = t(vec![3], vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            a.add(&b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn non_finite_result_rejected() {
        let x = t(vec![1], vec![0.0]);
        assert!(matches!(x.ln(), Err(TensorError::NonFinite { op: "ln" })));
    }

    #[test]
    fn operations_record_on_the_tape() {
        let tape = Tape::new();
        let x = tape.watch(&t(vec![2], vec![1.0, 2.0]));
        let y = x.mul(&x).unwrap();
        assert!(y.is_on_tape());
        assert_eq!(tape.len(), 2);
        // Plain operands are lifted onto the tape as leaves.
        let z = y.add(&t(vec![2], vec![1.0, 1.0])).unwrap();
        assert!(z.is_on_tape());
        assert_eq!(tape.len(), 4);
    }

    #[test]
    fn mixing_tapes_is_an_error() {
        let ta = Tape::new();
        let tb = Tape::new();
        let a = ta.watch(&t(vec![1], vec![1.0]));
        let b = tb.watch(&t(vec![1], vec![2.0]));
        assert!(matches!(a.add(&b), Err(TensorError::TapeMismatch)));
    }

    #[test]
    fn scatter_rows_accumulates_duplicates() {
        let g = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = g.scatter_rows(&[1, 1], 3).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 4.0, 6.0, 0.0, 0.0]);
    }
}
