//! Experiment execution: materialize a dataset per seed, run the selected
//! method, persist per-seed artifacts, and aggregate a deterministic
//! summary. Seeds run in parallel worker slots; each worker owns its whole
//! pipeline and the summary is written only after every seed has joined.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use msr_core::classifier::{forward, ClassifierError};
use msr_core::data::{DataError, Split, ABSTAIN};
use msr_core::metrics::{
    confidence_accuracy_curve, error_decomposition, export_representations,
    write_curve_csv, write_decomposition_csv, ErrorDecomposition, MetricsError,
};
use msr_core::rng::{stream_rng, Stream};
use msr_core::synth::{describe, generate, SynthError};
use msr_core::train::{ft_wl, ft_wlst, msr_train, teacher_init, TrainError};
use msr_core::{TrainConfig, TrainReport, WeakDataset};

use crate::config::{ConfigError, DataSource, ExperimentConfig, Method};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cannot read {path}: {source}")]
    Load { path: String, source: DataError },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Process exit code: 1 for configuration problems (unparseable or
    /// invalid config, bad or infeasible inputs, unreadable or malformed
    /// data files), 2 for aborted execution (training blew up, artifacts
    /// could not be written).
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Synth(_) | RunError::Load { .. } => 1,
            RunError::Data(DataError::Io(_)) => 2,
            RunError::Data(_) => 1,
            RunError::Train(TrainError::BadConfig(_)) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// One row of the summary table.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_step: u64,
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
    pub teacher_test_accuracy: Option<f64>,
    pub robustness_rate: Option<f64>,
    pub type_a_rate: Option<f64>,
    pub type_b_rate: Option<f64>,
    pub correct_on_clean_rate: Option<f64>,
    pub type_c_rate: Option<f64>,
}

/// Mean or standard deviation across seeds; a field is absent when no seed
/// produced it (an empty decomposition branch, or a method with no teacher).
#[derive(Debug, Clone, Serialize)]
pub struct AggRow {
    pub valid_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub teacher_test_accuracy: Option<f64>,
    pub robustness_rate: Option<f64>,
    pub type_a_rate: Option<f64>,
    pub type_b_rate: Option<f64>,
    pub correct_on_clean_rate: Option<f64>,
    pub type_c_rate: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub config: BTreeMap<String, String>,
    pub method: String,
    pub seeds: Vec<SeedSummary>,
    pub mean: AggRow,
    pub std: AggRow,
}

#[derive(Debug, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub use_scheduler: bool,
    pub use_filter: bool,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<SeedSummary>,
    pub mean: AggRow,
    pub std: AggRow,
}

#[derive(Debug, Serialize)]
pub struct AblateSummary {
    pub config: BTreeMap<String, String>,
    pub variants: Vec<VariantSummary>,
}

/// Run the configured method over every seed and write
/// `<out>/<method>/<seed>/{report.json, decomposition.csv, curve.csv,
/// repr.csv}` plus `<out>/summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let method = cfg.method.ok_or_else(|| {
        ConfigError::Invalid("method is required: msr, ft-wl, ft-wlst, or majority".to_string())
    })?;
    validate_train(&cfg.train)?;
    let echo = cfg.to_flat_map();
    let rows = run_seeds(cfg, &cfg.train, method, method.as_str(), &echo)?;
    let (mean, std) = aggregate(&rows);
    let summary = RunSummary {
        config: echo,
        method: method.to_string(),
        seeds: rows,
        mean,
        std,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// The 2x2 ablation grid over the teacher scheduler and the confidence
/// filter, every variant trained with the bilevel method across all seeds.
/// Student and teacher metrics are reported side by side per variant.
pub fn ablate_experiment(cfg: &ExperimentConfig) -> Result<AblateSummary> {
    if !matches!(cfg.method, None | Some(Method::Msr)) {
        return Err(ConfigError::Invalid(
            "ablate runs the msr switch grid; leave method unset or set method = msr".to_string(),
        )
        .into());
    }
    validate_train(&cfg.train)?;
    let grid = [
        ("full", true, true),
        ("wo-scheduler", false, true),
        ("wo-filter", true, false),
        ("wo-both", false, false),
    ];
    let mut variants = Vec::new();
    for (name, use_scheduler, use_filter) in grid {
        let mut variant_cfg = cfg.clone();
        variant_cfg.method = Some(Method::Msr);
        variant_cfg.train.use_scheduler = use_scheduler;
        variant_cfg.train.use_filter = use_filter;
        let echo = variant_cfg.to_flat_map();
        let rows = run_seeds(cfg, &variant_cfg.train, Method::Msr, name, &echo)?;
        let (mean, std) = aggregate(&rows);
        variants.push(VariantSummary {
            name: name.to_string(),
            use_scheduler,
            use_filter,
            config: echo,
            seeds: rows,
            mean,
            std,
        });
    }
    let summary = AblateSummary {
        config: cfg.to_flat_map(),
        variants,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Generate the configured synthetic corpus, save it as JSONL, and return
/// its statistics table.
pub fn generate_to_file(cfg: &ExperimentConfig, out: &Path) -> Result<serde_json::Value> {
    let DataSource::Synth(spec) = &cfg.data else {
        return Err(ConfigError::Invalid(
            "gen requires a synthetic spec: set the data.synth.* keys".to_string(),
        )
        .into());
    };
    let ds = generate(spec)?;
    ds.save(out)?;
    let (stats, sources) = describe(&ds)?;
    Ok(json!({ "path": out.display().to_string(), "stats": stats, "sources": sources }))
}

/// Load a JSONL corpus, aggregate its weak labels, and return coverage,
/// conflict, noise, and per-source statistics.
pub fn dataset_stats(path: &Path) -> Result<serde_json::Value> {
    let mut ds = load_corpus(path)?;
    ds.aggregate(&mut stream_rng(0, Stream::TieBreak));
    let (stats, sources) = describe(&ds)?;
    Ok(json!({ "aggregation_seed": 0, "stats": stats, "sources": sources }))
}

/// Invalid hyperparameters are a configuration problem, not a training
/// abort; surface them before any worker starts.
fn validate_train(tc: &TrainConfig) -> Result<()> {
    tc.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()).into())
        .map(|_| ())
}

fn run_seeds(
    cfg: &ExperimentConfig,
    tc: &TrainConfig,
    method: Method,
    subdir: &str,
    echo: &BTreeMap<String, String>,
) -> Result<Vec<SeedSummary>> {
    let mut results: Vec<Option<Result<SeedSummary>>> =
        (0..cfg.seeds.len()).map(|_| None).collect();
    let order: Vec<usize> = (0..cfg.seeds.len()).collect();
    for wave in order.chunks(cfg.workers.max(1)) {
        let mut wave_results = Vec::with_capacity(wave.len());
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&i| {
                    let seed = cfg.seeds[i];
                    scope.spawn(move || (i, run_one_seed(cfg, tc, method, seed, subdir, echo)))
                })
                .collect();
            for h in handles {
                wave_results.push(h.join().expect("seed worker panicked"));
            }
        });
        for (i, r) in wave_results {
            results[i] = Some(r);
        }
    }
    results.into_iter().map(|r| r.expect("seed not run")).collect()
}

/// An input corpus that cannot be read or parsed is a configuration
/// problem; name the offending file in the diagnostic.
fn load_corpus(path: &Path) -> Result<WeakDataset> {
    WeakDataset::load(path).map_err(|source| RunError::Load {
        path: path.display().to_string(),
        source,
    })
}

/// Build the dataset a seed trains on. Synthetic corpora offset the
/// generator seed by the run seed so each trial is an independent draw;
/// loaded corpora are re-aggregated with the run seed's tie-break stream.
fn materialize(cfg: &ExperimentConfig, seed: u64) -> Result<WeakDataset> {
    let mut ds = match &cfg.data {
        DataSource::Synth(spec) => {
            let mut spec = spec.clone();
            spec.seed = spec.seed.wrapping_add(seed);
            generate(&spec)?
        }
        DataSource::Path(path) => {
            let mut ds = load_corpus(path)?;
            ds.aggregate(&mut stream_rng(seed, Stream::TieBreak));
            ds
        }
    };
    if let Some(m) = cfg.val_size {
        ds = ds.subsample_validation(m, &mut stream_rng(seed, Stream::ValSubsample))?;
    }
    Ok(ds)
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    tc: &TrainConfig,
    method: Method,
    seed: u64,
    subdir: &str,
    echo: &BTreeMap<String, String>,
) -> Result<SeedSummary> {
    let ds = materialize(cfg, seed)?;
    let dir = cfg.out.join(subdir).join(seed.to_string());
    fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut tc = tc.clone();
    tc.seed = seed;
    if method == Method::Majority {
        return majority_artifacts(&ds, seed, &dir, echo);
    }
    let report = match method {
        Method::FtWl => ft_wl(&ds, &tc)?,
        Method::FtWlst => {
            let teacher = teacher_init(&ds, &tc)?;
            ft_wlst(&ds, &teacher, &tc)?
        }
        Method::Msr => {
            let teacher = teacher_init(&ds, &tc)?;
            msr_train(&ds, &teacher, &tc)?
        }
        Method::Majority => unreachable!("handled above"),
    };
    model_artifacts(&ds, &report, &dir, echo)
}

/// Persist report.json, the test-split error decomposition, the
/// confidence-accuracy curve, and the hidden representations, all computed
/// from the best-validation checkpoint.
fn model_artifacts(
    ds: &WeakDataset,
    report: &TrainReport,
    dir: &Path,
    echo: &BTreeMap<String, String>,
) -> Result<SeedSummary> {
    let test_idx = ds.indices(Split::Test);
    let feats = ds.features_of(&test_idx)?;
    let dist = forward(&report.best_student_params, &feats)?;
    let pred = dist.argmax();
    let weak = ds.weak_of(&test_idx)?;
    let gold = ds.gold_of(&test_idx)?;
    let decomp = error_decomposition(&pred, &weak, &gold)?;
    write_decomposition_csv(&decomp, dir.join("decomposition.csv"))?;
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let curve = confidence_accuracy_curve(&dist, &gold, &thresholds)?;
    write_curve_csv(&curve, dir.join("curve.csv"))?;
    export_representations(&report.best_student_params, ds, dir.join("repr.csv"))?;
    write_json(&dir.join("report.json"), &json!({ "config": echo, "report": report }))?;
    Ok(seed_summary_from(report, &decomp))
}

fn seed_summary_from(report: &TrainReport, decomp: &ErrorDecomposition) -> SeedSummary {
    SeedSummary {
        seed: report.seed,
        best_step: report.best_step,
        valid_accuracy: report.best_valid_accuracy,
        test_accuracy: report.test_accuracy,
        teacher_test_accuracy: report.teacher_test_accuracy,
        robustness_rate: decomp.robustness_rate,
        type_a_rate: decomp.type_a_rate,
        type_b_rate: decomp.type_b_rate,
        correct_on_clean_rate: decomp.correct_on_clean_rate,
        type_c_rate: decomp.type_c_rate,
    }
}

/// The no-model baseline: accuracy of the aggregated weak labels against
/// gold; abstained rows count as wrong. The curve and representation files
/// stay header-only because there is no classifier to trace.
fn majority_artifacts(
    ds: &WeakDataset,
    seed: u64,
    dir: &Path,
    echo: &BTreeMap<String, String>,
) -> Result<SeedSummary> {
    let weak_vs_gold = |split: Split| -> Result<(f64, usize, usize)> {
        let idx = ds.indices(split);
        let weak = ds.weak_of(&idx)?;
        let gold = ds.gold_of(&idx)?;
        let hits = weak
            .iter()
            .zip(&gold)
            .filter(|(&w, &g)| w == g as i64)
            .count();
        let abstained = weak.iter().filter(|&&w| w == ABSTAIN).count();
        Ok((hits as f64 / idx.len() as f64, idx.len(), abstained))
    };
    let (valid_acc, n_valid, _) = weak_vs_gold(Split::Valid)?;
    let (test_acc, n_test, n_abstained) = weak_vs_gold(Split::Test)?;
    let test_idx = ds.indices(Split::Test);
    let weak = ds.weak_of(&test_idx)?;
    let gold = ds.gold_of(&test_idx)?;
    // Abstained rows are excluded from every decomposition branch, so the
    // placeholder prediction on them is never read.
    let pred: Vec<usize> = weak
        .iter()
        .map(|&w| if w >= 0 { w as usize } else { 0 })
        .collect();
    let decomp = error_decomposition(&pred, &weak, &gold)?;
    write_decomposition_csv(&decomp, dir.join("decomposition.csv"))?;
    write_text(&dir.join("curve.csv"), "threshold,keep_rate,accuracy\n")?;
    write_text(&dir.join("repr.csv"), "id,split,pred,confidence,gold\n")?;
    let report = json!({
        "config": echo,
        "report": {
            "method": "majority",
            "seed": seed,
            "valid_accuracy": valid_acc,
            "test_accuracy": test_acc,
            "n_valid": n_valid,
            "n_test": n_test,
            "n_test_abstained": n_abstained,
        },
    });
    write_json(&dir.join("report.json"), &report)?;
    Ok(SeedSummary {
        seed,
        best_step: 0,
        valid_accuracy: valid_acc,
        test_accuracy: test_acc,
        teacher_test_accuracy: None,
        robustness_rate: decomp.robustness_rate,
        type_a_rate: decomp.type_a_rate,
        type_b_rate: decomp.type_b_rate,
        correct_on_clean_rate: decomp.correct_on_clean_rate,
        type_c_rate: decomp.type_c_rate,
    })
}

fn aggregate(rows: &[SeedSummary]) -> (AggRow, AggRow) {
    let field = |get: &dyn Fn(&SeedSummary) -> Option<f64>| -> (Option<f64>, Option<f64>) {
        let values: Vec<f64> = rows.iter().filter_map(get).collect();
        if values.is_empty() {
            return (None, None);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        // Sample standard deviation; a single trial reports zero spread.
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (Some(mean), Some(std))
    };
    let (valid_mean, valid_std) = field(&|r| Some(r.valid_accuracy));
    let (test_mean, test_std) = field(&|r| Some(r.test_accuracy));
    let (teacher_mean, teacher_std) = field(&|r| r.teacher_test_accuracy);
    let (rob_mean, rob_std) = field(&|r| r.robustness_rate);
    let (a_mean, a_std) = field(&|r| r.type_a_rate);
    let (b_mean, b_std) = field(&|r| r.type_b_rate);
    let (clean_mean, clean_std) = field(&|r| r.correct_on_clean_rate);
    let (c_mean, c_std) = field(&|r| r.type_c_rate);
    (
        AggRow {
            valid_accuracy: valid_mean,
            test_accuracy: test_mean,
            teacher_test_accuracy: teacher_mean,
            robustness_rate: rob_mean,
            type_a_rate: a_mean,
            type_b_rate: b_mean,
            correct_on_clean_rate: clean_mean,
            type_c_rate: c_mean,
        },
        AggRow {
            valid_accuracy: valid_std,
            test_accuracy: test_std,
            teacher_test_accuracy: teacher_std,
            robustness_rate: rob_std,
            type_a_rate: a_std,
            type_b_rate: b_std,
            correct_on_clean_rate: clean_std,
            type_c_rate: c_std,
        },
    )
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| RunError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}
