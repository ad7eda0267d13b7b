//! Parameter and optimizer-state persistence.
//!
//! Parameters serialize as a flat JSON object mapping each tensor name to
//! `{"shape": [...], "data": [...]}` with data in row-major order, so
//! checkpoints stay readable and diffable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};
use crate::classifier::{Architecture, ClassifierError, ParamSet};
use crate::optim::AdamWState;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Plain shape-plus-values form of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRepr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Name-keyed snapshot of every parameter tensor, detached from any tape.
pub fn params_to_repr(params: &ParamSet) -> BTreeMap<String, TensorRepr> {
    params
        .entries()
        .iter()
        .map(|(name, t)| {
            (
                name.clone(),
                TensorRepr {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            )
        })
        .collect()
}

/// Rebuild a parameter set from a snapshot; missing or misshapen tensors
/// are rejected against the architecture's layer chain.
pub fn params_from_repr(
    arch: Architecture,
    repr: &BTreeMap<String, TensorRepr>,
) -> Result<ParamSet> {
    let named: Vec<(String, Tensor)> = repr
        .iter()
        .map(|(name, r)| Ok((name.clone(), Tensor::from_vec(r.shape.clone(), r.data.clone())?)))
        .collect::<Result<_>>()?;
    Ok(ParamSet::from_entries(arch, &named)?)
}

pub fn save_params(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, &params_to_repr(params))?;
    Ok(())
}

pub fn load_params(arch: Architecture, path: impl AsRef<Path>) -> Result<ParamSet> {
    let r = BufReader::new(File::open(path)?);
    let repr: BTreeMap<String, TensorRepr> = serde_json::from_reader(r)?;
    params_from_repr(arch, &repr)
}

pub fn save_optimizer(state: &AdamWState, path: impl AsRef<Path>) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, state)?;
    Ok(())
}

pub fn load_optimizer(path: impl AsRef<Path>) -> Result<AdamWState> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}
