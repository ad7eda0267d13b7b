//! Evaluation metrics: accuracy, the five-way breakdown of predictions
//! against weak and gold labels, confidence-threshold sweeps, and hidden
//! representation dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::classifier::{forward_with_hidden, ClassifierError, ParamSet, PredictedDistribution};
use crate::data::{DataError, WeakDataset, ABSTAIN};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{what}: length mismatch {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Data(#[from] DataError),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Fraction of predictions matching gold. Panics on empty input; callers
/// always evaluate nonempty splits.
pub fn accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    assert!(!pred.is_empty() && pred.len() == gold.len());
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / pred.len() as f64
}

/// Five-way split of predictions by weak-label correctness.
///
/// Rows where the weak label is wrong divide into: recovered the gold label
/// anyway (robustness), copied the weak error (type A), or made a third,
/// unforced error (type B). Rows where the weak label is right divide into
/// correct-on-clean and new errors (type C). Each rate is normalized by its
/// own branch count and absent when that branch is empty; abstained rows are
/// counted in `n_excluded` and touch nothing else.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub n: usize,
    pub n_excluded: usize,
    pub n_weak_wrong: usize,
    pub n_weak_right: usize,
    pub robustness_count: usize,
    pub type_a_count: usize,
    pub type_b_count: usize,
    pub correct_on_clean_count: usize,
    pub type_c_count: usize,
    pub robustness_rate: Option<f64>,
    pub type_a_rate: Option<f64>,
    pub type_b_rate: Option<f64>,
    pub correct_on_clean_rate: Option<f64>,
    pub type_c_rate: Option<f64>,
    /// Recorded so downstream readers never have to guess the normalizer.
    pub denominator_convention: &'static str,
}

const DENOMINATOR_CONVENTION: &str = "robustness/type_a/type_b divide by n_weak_wrong; \
     correct_on_clean/type_c divide by n_weak_right; abstains excluded";

pub fn error_decomposition(
    pred: &[usize],
    weak: &[i64],
    gold: &[usize],
) -> Result<ErrorDecomposition> {
    if pred.len() != weak.len() {
        return Err(MetricsError::LengthMismatch {
            what: "decomposition pred vs weak",
            left: pred.len(),
            right: weak.len(),
        });
    }
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            what: "decomposition pred vs gold",
            left: pred.len(),
            right: gold.len(),
        });
    }
    let mut d = ErrorDecomposition {
        n: pred.len(),
        n_excluded: 0,
        n_weak_wrong: 0,
        n_weak_right: 0,
        robustness_count: 0,
        type_a_count: 0,
        type_b_count: 0,
        correct_on_clean_count: 0,
        type_c_count: 0,
        robustness_rate: None,
        type_a_rate: None,
        type_b_rate: None,
        correct_on_clean_rate: None,
        type_c_rate: None,
        denominator_convention: DENOMINATOR_CONVENTION,
    };
    for ((&p, &w), &g) in pred.iter().zip(weak).zip(gold) {
        if w == ABSTAIN {
            d.n_excluded += 1;
        } else if w as usize != g {
            d.n_weak_wrong += 1;
            if p == g {
                d.robustness_count += 1;
            } else if p as i64 == w {
                d.type_a_count += 1;
            } else {
                d.type_b_count += 1;
            }
        } else {
            d.n_weak_right += 1;
            if p == g {
                d.correct_on_clean_count += 1;
            } else {
                d.type_c_count += 1;
            }
        }
    }
    if d.n_weak_wrong > 0 {
        let den = d.n_weak_wrong as f64;
        d.robustness_rate = Some(d.robustness_count as f64 / den);
        d.type_a_rate = Some(d.type_a_count as f64 / den);
        d.type_b_rate = Some(d.type_b_count as f64 / den);
    }
    if d.n_weak_right > 0 {
        let den = d.n_weak_right as f64;
        d.correct_on_clean_rate = Some(d.correct_on_clean_count as f64 / den);
        d.type_c_rate = Some(d.type_c_count as f64 / den);
    }
    Ok(d)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one row per category: `category,count,denominator,rate`.
pub fn write_decomposition_csv(d: &ErrorDecomposition, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "category,count,denominator,rate")?;
    let wrong = d.n_weak_wrong;
    let right = d.n_weak_right;
    for (name, count, den, rate) in [
        ("robustness", d.robustness_count, wrong, d.robustness_rate),
        ("type_a", d.type_a_count, wrong, d.type_a_rate),
        ("type_b", d.type_b_count, wrong, d.type_b_rate),
        (
            "correct_on_clean",
            d.correct_on_clean_count,
            right,
            d.correct_on_clean_rate,
        ),
        ("type_c", d.type_c_count, right, d.type_c_rate),
    ] {
        writeln!(w, "{name},{count},{den},{}", opt_cell(rate))?;
    }
    writeln!(w, "excluded,{},{},", d.n_excluded, d.n)?;
    w.flush()?;
    Ok(())
}

/// One point of a confidence-threshold sweep: how much survives the filter
/// and how accurate the survivors are (absent when nothing survives).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub keep_rate: f64,
    pub accuracy: Option<f64>,
}

pub fn confidence_accuracy_curve(
    dist: &PredictedDistribution,
    gold: &[usize],
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    let conf = dist.confidence();
    if conf.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            what: "curve confidence vs gold",
            left: conf.len(),
            right: gold.len(),
        });
    }
    let pred = dist.argmax();
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let mut kept = 0usize;
            let mut hits = 0usize;
            for ((&c, &p), &g) in conf.iter().zip(&pred).zip(gold) {
                if c >= tau {
                    kept += 1;
                    if p == g {
                        hits += 1;
                    }
                }
            }
            CurvePoint {
                threshold: tau,
                keep_rate: kept as f64 / conf.len().max(1) as f64,
                accuracy: (kept > 0).then(|| hits as f64 / kept as f64),
            }
        })
        .collect())
}

/// CSV with one row per threshold: `threshold,keep_rate,accuracy`.
pub fn write_curve_csv(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "threshold,keep_rate,accuracy")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.keep_rate, opt_cell(p.accuracy))?;
    }
    w.flush()?;
    Ok(())
}

/// Dump every row's last hidden activations plus prediction, confidence,
/// and gold label (empty when unknown) to CSV for cluster inspection.
pub fn export_representations(
    params: &ParamSet,
    ds: &WeakDataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let h_dim = params.arch().last_hidden_dim();
    let header: Vec<String> = (0..h_dim).map(|i| format!("h{i}")).collect();
    writeln!(w, "id,split,{},pred,confidence,gold", header.join(","))?;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(1024) {
        let x = ds.features_of(chunk)?;
        let (hidden, probs) = forward_with_hidden(params, &x)?;
        let dist = PredictedDistribution::from_probs(probs)?;
        let pred = dist.argmax();
        let conf = dist.confidence();
        let hdata = hidden.data();
        for (row, &i) in chunk.iter().enumerate() {
            let feats: Vec<String> = hdata[row * h_dim..(row + 1) * h_dim]
                .iter()
                .map(|v| v.to_string())
                .collect();
            let gold = ds.gold(i).map(|g| g.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                ds.id(i),
                ds.split_of(i),
                feats.join(","),
                pred[row],
                conf[row],
                gold
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
