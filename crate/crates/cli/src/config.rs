//! Flat key-value experiment configuration.
//!
//! A config file is a sequence of `key = value` lines with dotted section
//! prefixes (`data.*`, `train.*`). Blank lines and lines starting with `#`
//! are skipped. Every `train.*` key has a default, so a minimal run config
//! is a data source, a method, and a seed list. Parse errors carry the
//! 1-based line number and the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use msr_core::synth::{NoiseStyle, SynthSpec};
use msr_core::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: key `{key}`: {detail}")]
    BadValue {
        line: usize,
        key: String,
        detail: String,
    },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Experiment method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Msr,
    FtWl,
    FtWlst,
    Majority,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Msr => "msr",
            Method::FtWl => "ft-wl",
            Method::FtWlst => "ft-wlst",
            Method::Majority => "majority",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "msr" => Ok(Method::Msr),
            "ft-wl" => Ok(Method::FtWl),
            "ft-wlst" => Ok(Method::FtWlst),
            "majority" => Ok(Method::Majority),
            other => Err(format!(
                "unknown method `{other}` (expected msr, ft-wl, ft-wlst, majority)"
            )),
        }
    }
}

/// Where the corpus comes from: a JSONL file or a generator spec.
#[derive(Debug, Clone)]
pub enum DataSource {
    Path(PathBuf),
    Synth(SynthSpec),
}

/// Fully resolved experiment description.
///
/// `train.seed` is a placeholder; the runner overwrites it with each entry
/// of `seeds`. For synthetic data the generator seed is likewise offset by
/// the run seed, so every seed is an independent end-to-end trial.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub method: Option<Method>,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub workers: usize,
    pub val_size: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub val_size: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_diagnostic(&text)
    }

    pub fn from_str_diagnostic(text: &str) -> Result<Self> {
        let mut draft = Draft::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            };
            draft.set(line, key.trim(), value.trim())?;
        }
        draft.finalize()
    }

    pub fn apply(&mut self, ov: &Overrides) -> Result<()> {
        if let Some(seeds) = &ov.seeds {
            self.seeds = seeds.clone();
        }
        if let Some(out) = &ov.out {
            self.out = out.clone();
        }
        if let Some(workers) = ov.workers {
            self.workers = workers;
        }
        if let Some(val_size) = ov.val_size {
            self.val_size = Some(val_size);
        }
        check_common(&self.seeds, self.workers, self.val_size)
    }

    /// The effective configuration as `key -> value` strings; parsing the
    /// rendered map reproduces this config, which makes every artifact that
    /// embeds it self-describing.
    pub fn to_flat_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        match &self.data {
            DataSource::Path(p) => {
                m.insert("data.path".to_string(), p.display().to_string());
            }
            DataSource::Synth(s) => {
                m.insert("data.synth.k".to_string(), s.k.to_string());
                m.insert("data.synth.d".to_string(), s.d.to_string());
                m.insert("data.synth.n".to_string(), s.n.to_string());
                m.insert(
                    "data.synth.cluster-sep".to_string(),
                    s.cluster_sep.to_string(),
                );
                m.insert("data.synth.sources".to_string(), s.sources.to_string());
                m.insert("data.synth.coverage".to_string(), join_f64(&s.coverage));
                m.insert(
                    "data.synth.error-rate".to_string(),
                    join_f64(&s.error_rate),
                );
                m.insert(
                    "data.synth.style".to_string(),
                    match s.style {
                        NoiseStyle::FeatureDependent => "feature-dependent",
                        NoiseStyle::Uniform => "uniform",
                    }
                    .to_string(),
                );
                m.insert("data.synth.seed".to_string(), s.seed.to_string());
            }
        }
        if let Some(method) = self.method {
            m.insert("method".to_string(), method.to_string());
        }
        let t = &self.train;
        m.insert("train.student-rate".to_string(), t.student_rate.to_string());
        m.insert("train.teacher-rate".to_string(), t.teacher_rate.to_string());
        m.insert("train.steps".to_string(), t.steps.to_string());
        m.insert("train.tau".to_string(), t.tau.to_string());
        m.insert("train.batch-size".to_string(), t.batch_size.to_string());
        m.insert(
            "train.val-batch-size".to_string(),
            t.val_batch_size.to_string(),
        );
        m.insert("train.warmup".to_string(), t.warmup.to_string());
        m.insert(
            "train.use-scheduler".to_string(),
            t.use_scheduler.to_string(),
        );
        m.insert("train.use-filter".to_string(), t.use_filter.to_string());
        m.insert("train.patience".to_string(), t.patience.to_string());
        m.insert(
            "train.eval-interval".to_string(),
            t.eval_interval.to_string(),
        );
        m.insert(
            "train.hidden-dims".to_string(),
            t.hidden_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("train.weight-decay".to_string(), t.weight_decay.to_string());
        m.insert("train.init-steps".to_string(), t.init_steps.to_string());
        m.insert(
            "train.st-soft-labels".to_string(),
            t.st_soft_labels.to_string(),
        );
        m.insert(
            "seeds".to_string(),
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("out".to_string(), self.out.display().to_string());
        m.insert("workers".to_string(), self.workers.to_string());
        if let Some(v) = self.val_size {
            m.insert("val-size".to_string(), v.to_string());
        }
        m
    }
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn check_common(seeds: &[u64], workers: usize, val_size: Option<usize>) -> Result<()> {
    if seeds.is_empty() {
        return Err(ConfigError::Invalid(
            "at least one seed is required".to_string(),
        ));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(ConfigError::Invalid(
            "seeds must be distinct (each seed owns one output directory)".to_string(),
        ));
    }
    if workers == 0 {
        return Err(ConfigError::Invalid("workers must be >= 1".to_string()));
    }
    if val_size == Some(0) {
        return Err(ConfigError::Invalid("val-size must be >= 1".to_string()));
    }
    Ok(())
}

#[derive(Default)]
struct SynthDraft {
    k: Option<usize>,
    d: Option<usize>,
    n: Option<usize>,
    cluster_sep: Option<f64>,
    sources: Option<usize>,
    coverage: Option<Vec<f64>>,
    error_rate: Option<Vec<f64>>,
    style: Option<NoiseStyle>,
    seed: Option<u64>,
}

impl SynthDraft {
    fn touched(&self) -> bool {
        self.k.is_some()
            || self.d.is_some()
            || self.n.is_some()
            || self.cluster_sep.is_some()
            || self.sources.is_some()
            || self.coverage.is_some()
            || self.error_rate.is_some()
            || self.style.is_some()
            || self.seed.is_some()
    }

    fn build(self) -> Result<SynthSpec> {
        let require = |name: &str, missing: bool| -> Result<()> {
            if missing {
                Err(ConfigError::Invalid(format!(
                    "data.synth.{name} is required for synthetic data"
                )))
            } else {
                Ok(())
            }
        };
        require("k", self.k.is_none())?;
        require("d", self.d.is_none())?;
        require("n", self.n.is_none())?;
        require("sources", self.sources.is_none())?;
        require("coverage", self.coverage.is_none())?;
        require("error-rate", self.error_rate.is_none())?;
        Ok(SynthSpec {
            k: self.k.unwrap(),
            d: self.d.unwrap(),
            n: self.n.unwrap(),
            cluster_sep: self.cluster_sep.unwrap_or(3.0),
            sources: self.sources.unwrap(),
            coverage: self.coverage.unwrap(),
            error_rate: self.error_rate.unwrap(),
            style: self.style.unwrap_or(NoiseStyle::FeatureDependent),
            seed: self.seed.unwrap_or(0),
        })
    }
}

#[derive(Default)]
struct Draft {
    seen: BTreeMap<String, usize>,
    data_path: Option<PathBuf>,
    synth: SynthDraft,
    method: Option<Method>,
    train: TrainConfig,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    val_size: Option<usize>,
}

impl Draft {
    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        if self.seen.insert(key.to_string(), line).is_some() {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        let bad = |detail: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            detail,
        };
        match key {
            "data.path" => self.data_path = Some(PathBuf::from(value)),
            "data.synth.k" => self.synth.k = Some(parse_num(value).map_err(bad)?),
            "data.synth.d" => self.synth.d = Some(parse_num(value).map_err(bad)?),
            "data.synth.n" => self.synth.n = Some(parse_num(value).map_err(bad)?),
            "data.synth.cluster-sep" => {
                self.synth.cluster_sep = Some(parse_num(value).map_err(bad)?)
            }
            "data.synth.sources" => self.synth.sources = Some(parse_num(value).map_err(bad)?),
            "data.synth.coverage" => self.synth.coverage = Some(parse_f64_list(value).map_err(bad)?),
            "data.synth.error-rate" => {
                self.synth.error_rate = Some(parse_f64_list(value).map_err(bad)?)
            }
            "data.synth.style" => {
                self.synth.style = Some(match value {
                    "feature-dependent" => NoiseStyle::FeatureDependent,
                    "uniform" => NoiseStyle::Uniform,
                    other => {
                        return Err(bad(format!(
                            "unknown noise style `{other}` (expected feature-dependent, uniform)"
                        )))
                    }
                })
            }
            "data.synth.seed" => self.synth.seed = Some(parse_num(value).map_err(bad)?),
            "method" => self.method = Some(value.parse().map_err(bad)?),
            "train.student-rate" => self.train.student_rate = parse_num(value).map_err(bad)?,
            "train.teacher-rate" => self.train.teacher_rate = parse_num(value).map_err(bad)?,
            "train.steps" => self.train.steps = parse_num(value).map_err(bad)?,
            "train.tau" => self.train.tau = parse_num(value).map_err(bad)?,
            "train.batch-size" => self.train.batch_size = parse_num(value).map_err(bad)?,
            "train.val-batch-size" => self.train.val_batch_size = parse_num(value).map_err(bad)?,
            "train.warmup" => self.train.warmup = parse_num(value).map_err(bad)?,
            "train.use-scheduler" => self.train.use_scheduler = parse_bool(value).map_err(bad)?,
            "train.use-filter" => self.train.use_filter = parse_bool(value).map_err(bad)?,
            "train.patience" => self.train.patience = parse_num(value).map_err(bad)?,
            "train.eval-interval" => self.train.eval_interval = parse_num(value).map_err(bad)?,
            "train.hidden-dims" => self.train.hidden_dims = parse_usize_list(value).map_err(bad)?,
            "train.weight-decay" => self.train.weight_decay = parse_num(value).map_err(bad)?,
            "train.init-steps" => self.train.init_steps = parse_num(value).map_err(bad)?,
            "train.st-soft-labels" => self.train.st_soft_labels = parse_bool(value).map_err(bad)?,
            "seeds" => self.seeds = Some(parse_u64_list(value).map_err(bad)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "workers" => self.workers = Some(parse_num(value).map_err(bad)?),
            "val-size" => self.val_size = Some(parse_num(value).map_err(bad)?),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn finalize(self) -> Result<ExperimentConfig> {
        let data = match (self.data_path, self.synth.touched()) {
            (Some(p), false) => DataSource::Path(p),
            (None, true) => DataSource::Synth(self.synth.build()?),
            (Some(_), true) => {
                return Err(ConfigError::Invalid(
                    "set either data.path or data.synth.*, not both".to_string(),
                ))
            }
            (None, false) => {
                return Err(ConfigError::Invalid(
                    "a data source is required: set data.path or data.synth.*".to_string(),
                ))
            }
        };
        let seeds = self.seeds.unwrap_or_else(|| vec![1]);
        let workers = self.workers.unwrap_or(1);
        check_common(&seeds, workers, self.val_size)?;
        Ok(ExperimentConfig {
            data,
            method: self.method,
            train: self.train,
            seeds,
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
            workers,
            val_size: self.val_size,
        })
    }
}

fn parse_num<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid {} `{value}`: {e}", std::any::type_name::<T>()))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn parse_u64_list(value: &str) -> std::result::Result<Vec<u64>, String> {
    value.split(',').map(|p| parse_num(p.trim())).collect()
}

fn parse_f64_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    value.split(',').map(|p| parse_num(p.trim())).collect()
}

/// Empty value means no hidden layers (a linear softmax model).
fn parse_usize_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|p| parse_num(p.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# benchmark corpus
data.synth.k = 4
data.synth.d = 16
data.synth.n = 4000
data.synth.cluster-sep = 3.0
data.synth.sources = 8
data.synth.coverage = 0.3
data.synth.error-rate = 0.3,0.25,0.3,0.35,0.3,0.25,0.3,0.35
data.synth.style = feature-dependent
data.synth.seed = 7

method = msr
train.student-rate = 5e-3
train.steps = 400
train.hidden-dims = 32,16
seeds = 1,2,3,4,5
out = /tmp/exp
workers = 2
";

    #[test]
    fn full_config_parses_with_defaults_filled() {
        let cfg = ExperimentConfig::from_str_diagnostic(FULL).unwrap();
        let DataSource::Synth(spec) = &cfg.data else {
            panic!("expected synth source");
        };
        assert_eq!(spec.k, 4);
        assert_eq!(spec.error_rate.len(), 8);
        assert_eq!(cfg.method, Some(Method::Msr));
        assert_eq!(cfg.train.student_rate, 5e-3);
        assert_eq!(cfg.train.teacher_rate, 2e-5);
        assert_eq!(cfg.train.tau, 0.5);
        assert_eq!(cfg.train.hidden_dims, vec![32, 16]);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.val_size, None);
    }

    #[test]
    fn echo_round_trips_through_the_parser() {
        let cfg = ExperimentConfig::from_str_diagnostic(FULL).unwrap();
        let rendered: String = cfg
            .to_flat_map()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let again = ExperimentConfig::from_str_diagnostic(&rendered).unwrap();
        assert_eq!(cfg.to_flat_map(), again.to_flat_map());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::from_str_diagnostic("data.path = x\n\ntrain.stepz = 9\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("train.stepz"), "{msg}");
    }

    #[test]
    fn bad_value_names_key_and_line() {
        let err =
            ExperimentConfig::from_str_diagnostic("data.path = x\ntrain.steps = soon\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("train.steps"), "{msg}");
        assert!(msg.contains("soon"), "{msg}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = ExperimentConfig::from_str_diagnostic("data.path = x\ndata.path = y\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_source_and_double_source_are_rejected() {
        let err = ExperimentConfig::from_str_diagnostic("method = msr\n").unwrap_err();
        assert!(err.to_string().contains("data source"), "{err}");
        let err = ExperimentConfig::from_str_diagnostic(
            "data.path = x\ndata.synth.k = 4\ndata.synth.d = 2\ndata.synth.n = 100\n\
             data.synth.sources = 3\ndata.synth.coverage = 0.5\ndata.synth.error-rate = 0.1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("not both"), "{err}");
    }

    #[test]
    fn missing_synth_field_is_named() {
        let err = ExperimentConfig::from_str_diagnostic(
            "data.synth.k = 4\ndata.synth.d = 2\ndata.synth.n = 100\ndata.synth.sources = 3\n\
             data.synth.coverage = 0.5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("data.synth.error-rate"), "{err}");
    }

    #[test]
    fn empty_hidden_dims_means_linear_model() {
        let cfg =
            ExperimentConfig::from_str_diagnostic("data.path = x\ntrain.hidden-dims =\n").unwrap();
        assert!(cfg.train.hidden_dims.is_empty());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::from_str_diagnostic(FULL).unwrap();
        cfg.apply(&Overrides {
            seeds: Some(vec![9]),
            out: Some(PathBuf::from("elsewhere")),
            workers: Some(4),
            val_size: Some(50),
        })
        .unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.out, PathBuf::from("elsewhere"));
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.val_size, Some(50));
        assert_eq!(cfg.to_flat_map()["val-size"], "50");
    }

    #[test]
    fn repeated_seeds_are_rejected() {
        let err = ExperimentConfig::from_str_diagnostic("data.path = x\nseeds = 1,2,1\n")
            .unwrap_err();
        assert!(err.to_string().contains("distinct"), "{err}");
    }
}
