use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{Op, Result, Tensor, TensorError};

fn accumulate(map: &mut HashMap<usize, Tensor>, id: usize, contrib: Tensor) -> Result<()> {
    let next = match map.remove(&id) {
        Some(prev) => prev.add(&contrib)?,
        None => contrib,
    };
    map.insert(id, next);
    Ok(())
}

/// Gradient of a scalar `output` with respect to each tensor in `wrt`,
/// by reverse accumulation over the recording tape.
///
/// With `create_graph` set, every backward step is itself recorded, so the
/// returned gradients can be differentiated again. Otherwise the results are
/// detached and the nodes recorded during the sweep are dropped from the tape.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if output.numel() != 1 {
        return Err(TensorError::NotScalar {
            shape: output.shape().to_vec(),
        });
    }
    let tape = output.tape().ok_or(TensorError::NotOnTape)?;
    let out_id = output.node_id().expect("tracked tensor has a node id");

    let mut wrt_ids = Vec::with_capacity(wrt.len());
    for w in wrt {
        match &w.node {
            None => return Err(TensorError::NotOnTape),
            Some(n) => {
                if !Rc::ptr_eq(&n.tape, &tape.inner) {
                    return Err(TensorError::TapeMismatch);
                }
                wrt_ids.push(n.id);
            }
        }
    }

    let start_len = tape.len();
    let mut adjoint: HashMap<usize, Tensor> = HashMap::new();
    adjoint.insert(out_id, Tensor::filled(output.shape().to_vec(), 1.0));
    let mut results: HashMap<usize, Tensor> = HashMap::new();

    // Node ids grow monotonically, so by the time the sweep reaches a node
    // every consumer has already deposited its contribution.
    for nid in (0..=out_id).rev() {
        let Some(g) = adjoint.remove(&nid) else {
            continue;
        };
        if wrt_ids.contains(&nid) {
            results.insert(nid, g.clone());
        }
        match tape.op_of(nid) {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(&mut adjoint, a, g.clone())?;
                accumulate(&mut adjoint, b, g)?;
            }
            Op::Sub(a, b) => {
                accumulate(&mut adjoint, a, g.clone())?;
                accumulate(&mut adjoint, b, g.mul_scalar(-1.0)?)?;
            }
            Op::Mul(a, b) => {
                let va = tape.tensor_for(a);
                let vb = tape.tensor_for(b);
                accumulate(&mut adjoint, a, g.mul(&vb)?)?;
                accumulate(&mut adjoint, b, g.mul(&va)?)?;
            }
            Op::Div(a, b) => {
                let vb = tape.tensor_for(b);
                let y = tape.tensor_for(nid);
                accumulate(&mut adjoint, a, g.div(&vb)?)?;
                let db = g.mul(&y)?.div(&vb)?.mul_scalar(-1.0)?;
                accumulate(&mut adjoint, b, db)?;
            }
            Op::AddScalar(a) => {
                accumulate(&mut adjoint, a, g)?;
            }
            Op::MulScalar(a, c) => {
                accumulate(&mut adjoint, a, g.mul_scalar(c)?)?;
            }
            Op::Matmul(a, b) => {
                let va = tape.tensor_for(a);
                let vb = tape.tensor_for(b);
                accumulate(&mut adjoint, a, g.matmul(&vb.transpose()?)?)?;
                accumulate(&mut adjoint, b, va.transpose()?.matmul(&g)?)?;
            }
            Op::Transpose(a) => {
                accumulate(&mut adjoint, a, g.transpose()?)?;
            }
            Op::Tanh(a) => {
                let y = tape.tensor_for(nid);
                let da = g.sub(&g.mul(&y)?.mul(&y)?)?;
                accumulate(&mut adjoint, a, da)?;
            }
            Op::Exp(a) => {
                let y = tape.tensor_for(nid);
                accumulate(&mut adjoint, a, g.mul(&y)?)?;
            }
            Op::Ln(a) => {
                let va = tape.tensor_for(a);
                accumulate(&mut adjoint, a, g.div(&va)?)?;
            }
            Op::Softmax(a) => {
                // da = y * (g - rowsum(g * y)), broadcast back over the row.
                let y = tape.tensor_for(nid);
                let gy = g.mul(&y)?;
                let centered = if y.rank() == 2 {
                    let s = gy.sum_axis1()?.broadcast_cols(y.shape()[1])?;
                    g.sub(&s)?
                } else {
                    let s = gy.sum()?.broadcast_to(y.shape().to_vec())?;
                    g.sub(&s)?
                };
                accumulate(&mut adjoint, a, y.mul(&centered)?)?;
            }
            Op::Sum(a) => {
                let shape = tape.tensor_for(a).shape().to_vec();
                accumulate(&mut adjoint, a, g.broadcast_to(shape)?)?;
            }
            Op::SumAxis0(a) => {
                let m = tape.tensor_for(a).shape()[0];
                accumulate(&mut adjoint, a, g.broadcast_rows(m)?)?;
            }
            Op::SumAxis1(a) => {
                let n = tape.tensor_for(a).shape()[1];
                accumulate(&mut adjoint, a, g.broadcast_cols(n)?)?;
            }
            Op::BroadcastRows(a) => {
                accumulate(&mut adjoint, a, g.sum_axis0()?)?;
            }
            Op::BroadcastCols(a) => {
                accumulate(&mut adjoint, a, g.sum_axis1()?)?;
            }
            Op::BroadcastScalar(a) => {
                accumulate(&mut adjoint, a, g.sum()?)?;
            }
            Op::SelectRows(a, idx) => {
                let m = tape.tensor_for(a).shape()[0];
                accumulate(&mut adjoint, a, g.scatter_rows(&idx, m)?)?;
            }
            Op::ScatterRows(a, idx) => {
                accumulate(&mut adjoint, a, g.select_rows(&idx)?)?;
            }
            Op::MaxScalar(a, c) => {
                // The mask is locally constant, so it enters as a plain leaf.
                let va = tape.tensor_for(a);
                let mask: Vec<f64> = va
                    .data()
                    .iter()
                    .map(|&v| if v > c { 1.0 } else { 0.0 })
                    .collect();
                let mask = Tensor::from_vec(va.shape().to_vec(), mask)?;
                accumulate(&mut adjoint, a, g.mul(&mask)?)?;
            }
        }
    }

    let mut out = Vec::with_capacity(wrt.len());
    for (w, id) in wrt.iter().zip(&wrt_ids) {
        let t = results
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(w.shape().to_vec()));
        out.push(if create_graph { t } else { t.detach() });
    }
    if !create_graph {
        tape.truncate(start_len);
    }
    Ok(out)
}
