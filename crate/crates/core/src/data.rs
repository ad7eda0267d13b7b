//! Multi-source weak-label data model: feature vectors, per-source labels
//! with abstention, majority-vote aggregation, split membership, corpus
//! statistics, and JSONL ingestion.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};

/// Abstain / unlabeled sentinel.
pub const ABSTAIN: i64 = -1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("missing or invalid header line: {0}")]
    Header(String),
    #[error("line {line}: {detail}")]
    Record { line: usize, detail: String },
    #[error("dataset contains no samples")]
    Empty,
    #[error("weak labels not aggregated yet; call aggregate() first")]
    NotAggregated,
    #[error("sample {index} has no gold label")]
    MissingGold { index: usize },
    #[error("validation subsample of {requested} exceeds available {available}")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Corpus-level statistics of the weak labeling.
///
/// Coverage and conflict are fractions of the train split; the noise rate is
/// the fraction of covered train samples with known gold whose aggregated
/// weak label disagrees with it (None when no such sample exists).
#[derive(Debug, Clone, Serialize)]
pub struct CorpusStats {
    pub n: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub coverage: f64,
    pub conflict: f64,
    pub class_histogram: Vec<usize>,
    pub noise_rate: Option<f64>,
}

/// Most frequent non-abstain label in a source row; ties are broken
/// uniformly at random with the provided generator; ABSTAIN when every
/// source abstains.
pub fn majority_vote(row: &[i64], k: usize, rng: &mut impl Rng) -> i64 {
    let mut counts = vec![0usize; k];
    for &label in row {
        if label != ABSTAIN {
            counts[label as usize] += 1;
        }
    }
    let best = match counts.iter().max() {
        Some(&m) if m > 0 => m,
        _ => return ABSTAIN,
    };
    let tied: Vec<usize> = (0..k).filter(|&c| counts[c] == best).collect();
    tied[rng.gen_range(0..tied.len())] as i64
}

/// Immutable-after-aggregation weak supervision corpus.
#[derive(Debug, Clone)]
pub struct WeakDataset {
    k: usize,
    d: usize,
    s: usize,
    ids: Vec<String>,
    features: Vec<f64>,
    sources: Vec<i64>,
    weak: Vec<i64>,
    gold: Vec<Option<usize>>,
    split: Vec<Split>,
    aggregated: bool,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    k: usize,
    d: usize,
    #[serde(rename = "S")]
    s: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    features: Vec<f64>,
    weak: Vec<i64>,
    gold: Option<i64>,
    split: Split,
}

impl WeakDataset {
    /// Assemble and validate a dataset from parallel per-sample vectors.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        k: usize,
        d: usize,
        s: usize,
        ids: Vec<String>,
        features: Vec<f64>,
        sources: Vec<i64>,
        gold: Vec<Option<usize>>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = ids.len();
        let ds = Self {
            k,
            d,
            s,
            ids,
            features,
            sources,
            weak: vec![ABSTAIN; n],
            gold,
            split,
            aggregated: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if self.k < 2 {
            return Err(DataError::Header(format!(
                "need at least 2 classes, got {}",
                self.k
            )));
        }
        if self.s == 0 {
            return Err(DataError::Header("need at least 1 weak source".to_string()));
        }
        if self.features.len() != n * self.d
            || self.sources.len() != n * self.s
            || self.gold.len() != n
            || self.split.len() != n
        {
            return Err(DataError::Header("inconsistent field lengths".to_string()));
        }
        for i in 0..n {
            for &w in &self.sources[i * self.s..(i + 1) * self.s] {
                if w != ABSTAIN && !(0..self.k as i64).contains(&w) {
                    return Err(DataError::Record {
                        line: i + 2,
                        detail: format!("weak label {w} out of range for k={}", self.k),
                    });
                }
            }
            if let Some(g) = self.gold[i] {
                if g >= self.k {
                    return Err(DataError::Record {
                        line: i + 2,
                        detail: format!("gold label {g} out of range for k={}", self.k),
                    });
                }
            } else if self.split[i] != Split::Train {
                return Err(DataError::Record {
                    line: i + 2,
                    detail: format!("{} sample without gold label", self.split[i]),
                });
            }
        }
        Ok(())
    }

    /// Read the JSONL format: a header object followed by one record per
    /// line. Line numbers in errors are 1-based file lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let header: HeaderLine = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| DataError::Header(e.to_string()))?,
            None => return Err(DataError::Header("empty file".to_string())),
        };
        let (mut ids, mut features, mut sources, mut gold, mut split) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let rec: RecordLine =
                serde_json::from_str(&line).map_err(|source| DataError::Json {
                    line: lineno,
                    source,
                })?;
            if rec.features.len() != header.d {
                return Err(DataError::Record {
                    line: lineno,
                    detail: format!(
                        "{} features, header says d={}",
                        rec.features.len(),
                        header.d
                    ),
                });
            }
            if rec.weak.len() != header.s {
                return Err(DataError::Record {
                    line: lineno,
                    detail: format!("{} weak labels, header says S={}", rec.weak.len(), header.s),
                });
            }
            if rec.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Record {
                    line: lineno,
                    detail: "non-finite feature value".to_string(),
                });
            }
            let gold_value = match rec.gold {
                None => None,
                Some(g) if (0..header.k as i64).contains(&g) => Some(g as usize),
                Some(g) => {
                    return Err(DataError::Record {
                        line: lineno,
                        detail: format!("gold label {g} out of range for k={}", header.k),
                    })
                }
            };
            ids.push(rec.id);
            features.extend(rec.features);
            sources.extend(rec.weak);
            gold.push(gold_value);
            split.push(rec.split);
        }
        Self::from_parts(header.k, header.d, header.s, ids, features, sources, gold, split)
    }

    /// Write the JSONL format; aggregated labels are never persisted, they
    /// are recomputed per run seed.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = HeaderLine {
            k: self.k,
            d: self.d,
            s: self.s,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for i in 0..self.len() {
            let rec = RecordLine {
                id: self.ids[i].clone(),
                features: self.features[i * self.d..(i + 1) * self.d].to_vec(),
                weak: self.sources[i * self.s..(i + 1) * self.s].to_vec(),
                gold: self.gold[i].map(|g| g as i64),
                split: self.split[i],
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Fill the aggregated weak labels by majority vote over sources, using
    /// `rng` only for ties. Rows are visited in order, so the result is a
    /// deterministic function of (data, rng seed).
    pub fn aggregate(&mut self, rng: &mut impl Rng) {
        for i in 0..self.len() {
            self.weak[i] = majority_vote(&self.sources[i * self.s..(i + 1) * self.s], self.k, rng);
        }
        self.aggregated = true;
    }

    pub fn is_aggregated(&self) -> bool {
        self.aggregated
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn num_sources(&self) -> usize {
        self.s
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn gold(&self, i: usize) -> Option<usize> {
        self.gold[i]
    }

    pub fn sources_row(&self, i: usize) -> &[i64] {
        &self.sources[i * self.s..(i + 1) * self.s]
    }

    /// Aggregated weak label of one sample.
    pub fn weak_label(&self, i: usize) -> Result<i64> {
        if !self.aggregated {
            return Err(DataError::NotAggregated);
        }
        Ok(self.weak[i])
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// All train samples (weakly labeled and unlabeled together).
    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    /// Train samples with a non-abstain aggregated weak label.
    pub fn covered_train_indices(&self) -> Result<Vec<usize>> {
        if !self.aggregated {
            return Err(DataError::NotAggregated);
        }
        Ok((0..self.len())
            .filter(|&i| self.split[i] == Split::Train && self.weak[i] != ABSTAIN)
            .collect())
    }

    /// Feature rows for the given samples as a [batch, d] tensor.
    pub fn features_of(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(&self.features[i * self.d..(i + 1) * self.d]);
        }
        Ok(Tensor::from_vec(vec![indices.len(), self.d], data)?)
    }

    /// Gold labels for the given samples; errors on any missing gold.
    pub fn gold_of(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| self.gold[i].ok_or(DataError::MissingGold { index: i }))
            .collect()
    }

    /// Aggregated weak labels for the given samples.
    pub fn weak_of(&self, indices: &[usize]) -> Result<Vec<i64>> {
        if !self.aggregated {
            return Err(DataError::NotAggregated);
        }
        Ok(indices.iter().map(|&i| self.weak[i]).collect())
    }

    /// Coverage, conflict, histogram, and noise statistics.
    pub fn compute_stats(&self) -> Result<CorpusStats> {
        if !self.aggregated {
            return Err(DataError::NotAggregated);
        }
        let train = self.train_indices();
        let n_train = train.len();
        let mut n_weak = 0;
        let mut n_conflict = 0;
        let mut histogram = vec![0usize; self.k];
        let mut noisy = 0usize;
        let mut with_gold = 0usize;
        for &i in &train {
            let row = self.sources_row(i);
            let fired: Vec<i64> = row.iter().copied().filter(|&w| w != ABSTAIN).collect();
            if self.weak[i] != ABSTAIN {
                n_weak += 1;
                histogram[self.weak[i] as usize] += 1;
                if let Some(g) = self.gold[i] {
                    with_gold += 1;
                    if self.weak[i] != g as i64 {
                        noisy += 1;
                    }
                }
            }
            if !fired.is_empty() && fired.iter().any(|&w| w != fired[0]) {
                n_conflict += 1;
            }
        }
        let frac = |num: usize| {
            if n_train == 0 {
                0.0
            } else {
                num as f64 / n_train as f64
            }
        };
        Ok(CorpusStats {
            n: self.len(),
            n_train,
            n_valid: self.indices(Split::Valid).len(),
            n_test: self.indices(Split::Test).len(),
            n_weak,
            n_unlabeled: n_train - n_weak,
            coverage: frac(n_weak),
            conflict: frac(n_conflict),
            class_histogram: histogram,
            noise_rate: (with_gold > 0).then(|| noisy as f64 / with_gold as f64),
        })
    }

    /// Copy with the validation split reduced to a uniform sample of `m`
    /// rows (without replacement); train and test rows are untouched and
    /// original row order is preserved.
    pub fn subsample_validation(&self, m: usize, rng: &mut impl Rng) -> Result<WeakDataset> {
        let valid = self.indices(Split::Valid);
        if m > valid.len() {
            return Err(DataError::SubsampleTooLarge {
                requested: m,
                available: valid.len(),
            });
        }
        let mut chosen: Vec<usize> = rand::seq::index::sample(rng, valid.len(), m)
            .into_iter()
            .map(|j| valid[j])
            .collect();
        chosen.sort_unstable();
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.split[i] != Split::Valid || chosen.binary_search(&i).is_ok())
            .collect();
        let mut ds = WeakDataset {
            k: self.k,
            d: self.d,
            s: self.s,
            ids: keep.iter().map(|&i| self.ids[i].clone()).collect(),
            features: Vec::with_capacity(keep.len() * self.d),
            sources: Vec::with_capacity(keep.len() * self.s),
            weak: keep.iter().map(|&i| self.weak[i]).collect(),
            gold: keep.iter().map(|&i| self.gold[i]).collect(),
            split: keep.iter().map(|&i| self.split[i]).collect(),
            aggregated: self.aggregated,
        };
        for &i in &keep {
            ds.features
                .extend_from_slice(&self.features[i * self.d..(i + 1) * self.d]);
            ds.sources
                .extend_from_slice(&self.sources[i * self.s..(i + 1) * self.s]);
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn tiny_dataset() -> WeakDataset {
        // 4 train, 1 valid, 1 test; k=3, d=2, S=3.
        WeakDataset::from_parts(
            3,
            2,
            3,
            (0..6).map(|i| format!("s{i}")).collect(),
            vec![0.0; 12],
            vec![
                1, 1, 0, // majority 1
                -1, -1, -1, // abstain
                0, 1, -1, // tie 0/1
                2, 2, 2, // unanimous
                0, 0, 0, // valid row
                1, 1, 1, // test row
            ],
            vec![Some(1), Some(2), Some(0), Some(2), Some(0), Some(1)],
            vec![
                Split::Train,
                Split::Train,
                Split::Train,
                Split::Train,
                Split::Valid,
                Split::Test,
            ],
        )
        .unwrap()
    }

    #[test]
    fn majority_vote_basic_rows() {
        let mut rng = stream_rng(0, Stream::TieBreak);
        assert_eq!(majority_vote(&[1, 1, 0], 2, &mut rng), 1);
        assert_eq!(majority_vote(&[-1, -1, -1], 4, &mut rng), -1);
    }

    #[test]
    fn majority_vote_ties_are_roughly_uniform() {
        let mut zeros = 0;
        for seed in 0..10_000 {
            let mut rng = stream_rng(seed, Stream::TieBreak);
            if majority_vote(&[0, 1, -1], 2, &mut rng) == 0 {
                zeros += 1;
            }
        }
        let freq = zeros as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "tie frequency {freq}");
    }

    #[test]
    fn aggregate_then_stats() {
        let mut ds = tiny_dataset();
        assert!(ds.compute_stats().is_err());
        ds.aggregate(&mut stream_rng(1, Stream::TieBreak));
        let stats = ds.compute_stats().unwrap();
        assert_eq!(stats.n, 6);
        assert_eq!(stats.n_train, 4);
        assert_eq!(stats.n_weak, 3);
        assert_eq!(stats.n_unlabeled, 1);
        assert_eq!(stats.n_weak + stats.n_unlabeled, stats.n_train);
        assert!((stats.coverage - 0.75).abs() < 1e-12);
        // Rows 0 and 2 contain contradicting fired labels.
        assert!((stats.conflict - 0.5).abs() < 1e-12);
        // Gold: row0 weak=1==gold, row2 weak in {0,1} vs gold 0, row3 weak=2==gold.
        let noise = stats.noise_rate.unwrap();
        assert!(noise == 0.0 || (noise - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_never_invents_labels() {
        let mut ds = tiny_dataset();
        ds.aggregate(&mut stream_rng(7, Stream::TieBreak));
        for i in 0..ds.len() {
            let w = ds.weak_label(i).unwrap();
            if w != ABSTAIN {
                assert!(ds.sources_row(i).contains(&w));
            } else {
                assert!(ds.sources_row(i).iter().all(|&v| v == ABSTAIN));
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        ds.save(&path).unwrap();
        let back = WeakDataset::load(&path).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.k, ds.k);
        assert_eq!(back.features, ds.features);
        assert_eq!(back.sources, ds.sources);
        assert_eq!(back.gold, ds.gold);
        assert_eq!(back.split, ds.split);
    }

    #[test]
    fn out_of_range_label_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"k\":2,\"d\":1,\"S\":1}\n{\"id\":\"a\",\"features\":[0.0],\"weak\":[2],\"gold\":0,\"split\":\"train\"}\n",
        )
        .unwrap();
        match WeakDataset::load(&path) {
            Err(DataError::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn zero_sources_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty_sources.jsonl");
        std::fs::write(
            &path,
            "{\"k\":2,\"d\":1,\"S\":0}\n{\"id\":\"a\",\"features\":[0.0],\"weak\":[],\"gold\":0,\"split\":\"train\"}\n",
        )
        .unwrap();
        assert!(matches!(
            WeakDataset::load(&path),
            Err(DataError::Header(_))
        ));
    }

    #[test]
    fn missing_gold_on_valid_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nogold.jsonl");
        std::fs::write(
            &path,
            "{\"k\":2,\"d\":1,\"S\":1}\n{\"id\":\"a\",\"features\":[0.0],\"weak\":[1],\"gold\":null,\"split\":\"valid\"}\n",
        )
        .unwrap();
        assert!(matches!(
            WeakDataset::load(&path),
            Err(DataError::Record { line: 2, .. })
        ));
    }

    #[test]
    fn subsample_validation_full_size_keeps_everything() {
        let ds = tiny_dataset();
        let out = ds
            .subsample_validation(1, &mut stream_rng(3, Stream::ValSubsample))
            .unwrap();
        assert_eq!(out.len(), ds.len());
        assert_eq!(out.indices(Split::Valid).len(), 1);
    }

    #[test]
    fn subsample_validation_is_deterministic_and_sized() {
        let mut ds = tiny_dataset();
        // Blow the validation split up to 4 rows for a real subsample.
        for i in [0usize, 1] {
            ds.split[i] = Split::Valid;
            ds.gold[i] = Some(0);
        }
        let a = ds
            .subsample_validation(2, &mut stream_rng(5, Stream::ValSubsample))
            .unwrap();
        let b = ds
            .subsample_validation(2, &mut stream_rng(5, Stream::ValSubsample))
            .unwrap();
        assert_eq!(a.indices(Split::Valid).len(), 2);
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.indices(Split::Train), b.indices(Split::Train));
        assert!(ds
            .subsample_validation(5, &mut stream_rng(5, Stream::ValSubsample))
            .is_err());
    }
}
