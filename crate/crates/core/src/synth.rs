//! Synthetic weak-supervision benchmarks with controllable label noise.
//!
//! Samples are Gaussian class clusters; each weak source is a halfspace rule
//! that fires when w.x > b and assigns one fixed label. Feature-dependent
//! noise comes from tilting a rule's direction toward a victim class, so the
//! rule systematically fires on a region where its label is wrong - the
//! errors are a learnable function of the inputs. Uniform-style noise
//! instead gates each rule on its own class and flips fired labels i.i.d.
//!
//! Calibration happens in three nested searches: a bisection on the
//! threshold b per rule to hit its coverage target, a bisection on the
//! direction-mixing weight per rule to hit its error target, and an outer
//! bisection on a global error multiplier until the aggregated weak labels'
//! measured noise rate matches the mean requested rate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CorpusStats, DataError, Split, WeakDataset, ABSTAIN};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("source {rule}: coverage target {target} not reachable within {iters} threshold-search iterations")]
    InfeasibleCoverage {
        rule: usize,
        target: f64,
        iters: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

type Result<T> = std::result::Result<T, SynthError>;

const THRESHOLD_ITERS: usize = 1000;
/// Per-source error targets are capped here; beyond it a rule fires almost
/// exclusively on wrong classes and calibration loses its signal.
const ERROR_CAP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseStyle {
    /// Rule regions drift into a victim class; errors correlate with x.
    FeatureDependent,
    /// Rules fire on their own class and flip labels i.i.d.
    Uniform,
}

/// Generator parameters. `coverage` and `error_rate` hold either one value
/// (applied to every source) or one per source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub cluster_sep: f64,
    pub sources: usize,
    pub coverage: Vec<f64>,
    pub error_rate: Vec<f64>,
    pub style: NoiseStyle,
    pub seed: u64,
}

impl SynthSpec {
    fn expand(values: &[f64], s: usize, what: &str) -> Result<Vec<f64>> {
        match values.len() {
            1 => Ok(vec![values[0]; s]),
            n if n == s => Ok(values.to_vec()),
            n => Err(SynthError::BadSpec(format!(
                "{what} has {n} entries for {s} sources"
            ))),
        }
    }

    fn validate(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.k < 2 {
            return Err(SynthError::BadSpec("k must be >= 2".to_string()));
        }
        if self.d == 0 || self.sources == 0 {
            return Err(SynthError::BadSpec("d and sources must be >= 1".to_string()));
        }
        if self.n < 20 {
            return Err(SynthError::BadSpec(
                "n must be >= 20 so every split is nonempty".to_string(),
            ));
        }
        if !(self.cluster_sep > 0.0) {
            return Err(SynthError::BadSpec("cluster_sep must be positive".to_string()));
        }
        let coverage = Self::expand(&self.coverage, self.sources, "coverage")?;
        let errors = Self::expand(&self.error_rate, self.sources, "error_rate")?;
        if coverage.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(SynthError::BadSpec("coverage targets must lie in (0, 1]".to_string()));
        }
        if errors.iter().any(|&e| !(0.0..1.0).contains(&e)) {
            return Err(SynthError::BadSpec("error rates must lie in [0, 1)".to_string()));
        }
        Ok((coverage, errors))
    }
}

/// Coverage and precision of one weak source, measured on the train split.
#[derive(Debug, Clone, Serialize)]
pub struct SourceStats {
    pub source: usize,
    pub coverage: f64,
    pub precision: Option<f64>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero keeps ln finite.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

fn mix(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    let mut out: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
        .collect();
    if !normalize(&mut out) {
        // Degenerate cancellation; nudge toward the victim direction.
        out = a
            .iter()
            .zip(b)
            .map(|(x, y)| (1.0 - alpha) * x + (alpha + 1e-3) * y)
            .collect();
        normalize(&mut out);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bisect a threshold b so that exactly ~`target` of `projections` exceed
/// it. Tolerance is one sample per 500, at least 1.
fn threshold_for_count(projections: &[f64], target: usize, source: usize) -> Result<f64> {
    let count_above = |b: f64| projections.iter().filter(|&&p| p > b).count();
    let (mut lo, mut hi) = projections
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    lo -= 1.0;
    hi += 1.0;
    let tol = (projections.len() / 500).max(1);
    let mut best = lo;
    let mut best_gap = usize::MAX;
    for _ in 0..THRESHOLD_ITERS {
        let mid = 0.5 * (lo + hi);
        let c = count_above(mid);
        let gap = c.abs_diff(target);
        if gap < best_gap {
            best_gap = gap;
            best = mid;
        }
        match c.cmp(&target) {
            std::cmp::Ordering::Equal => return Ok(mid),
            std::cmp::Ordering::Greater => lo = mid,
            std::cmp::Ordering::Less => hi = mid,
        }
    }
    if best_gap <= tol {
        Ok(best)
    } else {
        Err(SynthError::InfeasibleCoverage {
            rule: source,
            target: target as f64 / projections.len().max(1) as f64,
            iters: THRESHOLD_ITERS,
        })
    }
}

struct Population {
    n: usize,
    d: usize,
    k: usize,
    features: Vec<f64>,
    gold: Vec<usize>,
    split: Vec<Split>,
    train: Vec<usize>,
    /// Per-source base direction (own-class mean plus a fixed jitter).
    base_dirs: Vec<Vec<f64>>,
    /// Per-source victim-class mean direction.
    victim_dirs: Vec<Vec<f64>>,
    home_class: Vec<usize>,
    /// Pre-drawn uniforms for i.i.d. flips, fixed before calibration so the
    /// flip pattern is a deterministic function of the spec alone.
    flip_u: Vec<f64>,
    flip_class_u: Vec<f64>,
}

impl Population {
    fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    fn projections(&self, w: &[f64], indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| dot(self.feature_row(i), w)).collect()
    }
}

fn sample_population(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Population> {
    let (n, d, k) = (spec.n, spec.d, spec.k);
    // Cluster centers: random unit directions scaled by the separation.
    let mut centers = Vec::with_capacity(k);
    for _ in 0..k {
        let mut dir: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        if !normalize(&mut dir) {
            dir[0] = 1.0;
        }
        centers.push(dir.iter().map(|x| x * spec.cluster_sep).collect::<Vec<f64>>());
    }
    let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let mut features = Vec::with_capacity(n * d);
    for &y in &gold {
        for j in 0..d {
            features.push(centers[y][j] + normal(rng));
        }
    }
    // 80/10/10 split over a shuffled order.
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    let n_test = (n / 10).max(1);
    let n_valid = (n / 10).max(1);
    let mut split = vec![Split::Train; n];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }
    for &i in &order[n_test..n_test + n_valid] {
        split[i] = Split::Valid;
    }
    let train: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();

    // Empirical class means drive the rule directions.
    let mut class_means = vec![vec![0.0; d]; k];
    let mut class_counts = vec![0usize; k];
    for i in 0..n {
        class_counts[gold[i]] += 1;
        for j in 0..d {
            class_means[gold[i]][j] += features[i * d + j];
        }
    }
    for c in 0..k {
        if class_counts[c] == 0 {
            return Err(SynthError::BadSpec(format!(
                "class {c} received no samples; increase n"
            )));
        }
        for j in 0..d {
            class_means[c][j] /= class_counts[c] as f64;
        }
    }

    let mut base_dirs = Vec::with_capacity(spec.sources);
    let mut victim_dirs = Vec::with_capacity(spec.sources);
    let mut home_class = Vec::with_capacity(spec.sources);
    let mut victim_class = Vec::with_capacity(spec.sources);
    for j in 0..spec.sources {
        let c = j % k;
        let v = (c + 1) % k;
        home_class.push(c);
        victim_class.push(v);
        let mut jitter: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        if !normalize(&mut jitter) {
            jitter[0] = 1.0;
        }
        let mut base: Vec<f64> = class_means[c]
            .iter()
            .zip(&jitter)
            .map(|(m, e)| m / spec.cluster_sep + 0.25 * e)
            .collect();
        if !normalize(&mut base) {
            base = class_means[c].clone();
            normalize(&mut base);
        }
        base_dirs.push(base);
        let mut vd = class_means[v].clone();
        if !normalize(&mut vd) {
            vd[0] = 1.0;
        }
        victim_dirs.push(vd);
    }

    let (flip_u, flip_class_u) = if spec.style == NoiseStyle::Uniform {
        (
            (0..n).map(|_| rng.gen::<f64>()).collect(),
            (0..n).map(|_| rng.gen::<f64>()).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(Population {
        n,
        d,
        k,
        features,
        gold,
        split,
        train,
        base_dirs,
        victim_dirs,
        home_class,
        flip_u,
        flip_class_u,
    })
}

/// One source's labels for every sample (ABSTAIN outside its region).
fn build_source(
    pop: &Population,
    spec: &SynthSpec,
    j: usize,
    coverage: f64,
    target_err: f64,
) -> Result<Vec<i64>> {
    let c = pop.home_class[j];
    let label = c as i64;
    let n_train = pop.train.len();
    let want = ((coverage * n_train as f64).round() as usize).min(n_train);

    let gated = spec.style == NoiseStyle::Uniform || target_err == 0.0;
    if gated {
        // Fires on the top of its own class along the base direction; the
        // gold gate makes the zero-error limit exact.
        let class_train: Vec<usize> = pop
            .train
            .iter()
            .copied()
            .filter(|&i| pop.gold[i] == c)
            .collect();
        let want = want.min(class_train.len());
        let mut out = vec![ABSTAIN; pop.n];
        if want == 0 {
            return Ok(out);
        }
        let w = &pop.base_dirs[j];
        let projs = pop.projections(w, &class_train);
        let b = threshold_for_count(&projs, want, j)?;
        for i in 0..pop.n {
            if pop.gold[i] == c && dot(pop.feature_row(i), w) > b {
                // Flip decisions are per row, shared by every source that
                // fires there, so the aggregated error stays i.i.d. instead
                // of concentrating where coverage is thin.
                out[i] = if spec.style == NoiseStyle::Uniform && pop.flip_u[i] < target_err {
                    let pick = (pop.flip_class_u[i] * (pop.k - 1) as f64) as usize;
                    let wrong = if pick >= c { pick + 1 } else { pick };
                    (wrong.min(pop.k - 1)) as i64
                } else {
                    label
                };
            }
        }
        return Ok(out);
    }

    // Pure halfspace whose direction is tilted toward the victim class until
    // the fraction of wrongly labeled fired samples hits the target.
    let evaluate = |alpha: f64| -> Result<(Vec<f64>, f64, f64)> {
        let w = mix(&pop.base_dirs[j], &pop.victim_dirs[j], alpha);
        let projs = pop.projections(&w, &pop.train);
        let b = threshold_for_count(&projs, want, j)?;
        let mut fired = 0usize;
        let mut wrong = 0usize;
        for (idx, &p) in projs.iter().enumerate() {
            if p > b {
                fired += 1;
                if pop.gold[pop.train[idx]] != c {
                    wrong += 1;
                }
            }
        }
        let err = if fired == 0 { 0.0 } else { wrong as f64 / fired as f64 };
        Ok((w, b, err))
    };

    let (w0, b0, e0) = evaluate(0.0)?;
    let (mut w, mut b) = (w0, b0);
    if e0 < target_err {
        let (w1, b1, e1) = evaluate(1.0)?;
        if e1 <= target_err {
            w = w1;
            b = b1;
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (wm, bm, em) = evaluate(mid)?;
                w = wm;
                b = bm;
                if (em - target_err).abs() < 0.005 {
                    break;
                }
                if em < target_err {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let mut out = vec![ABSTAIN; pop.n];
    for i in 0..pop.n {
        if dot(pop.feature_row(i), &w) > b {
            out[i] = label;
        }
    }
    Ok(out)
}

fn build_all_sources(
    pop: &Population,
    spec: &SynthSpec,
    coverage: &[f64],
    errors: &[f64],
    gamma: f64,
) -> Result<Vec<i64>> {
    let mut sources = vec![ABSTAIN; pop.n * spec.sources];
    for j in 0..spec.sources {
        let target = (gamma * errors[j]).min(ERROR_CAP);
        let col = build_source(pop, spec, j, coverage[j], target)?;
        for i in 0..pop.n {
            sources[i * spec.sources + j] = col[i];
        }
    }
    Ok(sources)
}

/// Noise rate of majority-aggregated labels over covered train samples,
/// with tie-breaking drawn from a fresh stream so each measurement is
/// independent of how many calibration rounds preceded it.
fn measure_aggregate_noise(pop: &Population, spec: &SynthSpec, sources: &[i64]) -> f64 {
    let mut tie_rng = stream_rng(spec.seed, Stream::TieBreak);
    let mut covered = 0usize;
    let mut wrong = 0usize;
    for &i in &pop.train {
        let row = &sources[i * spec.sources..(i + 1) * spec.sources];
        let label = crate::data::majority_vote(row, pop.k, &mut tie_rng);
        if label != ABSTAIN {
            covered += 1;
            if label != pop.gold[i] as i64 {
                wrong += 1;
            }
        }
    }
    if covered == 0 {
        0.0
    } else {
        wrong as f64 / covered as f64
    }
}

/// Generate a dataset matching `spec`, calibrated so the aggregated weak
/// labels' noise rate approximates the mean requested error rate.
pub fn generate(spec: &SynthSpec) -> Result<WeakDataset> {
    let (coverage, errors) = spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synth);
    let pop = sample_population(spec, &mut rng)?;

    let target = errors.iter().sum::<f64>() / errors.len() as f64;
    let sources = if target == 0.0 {
        build_all_sources(&pop, spec, &coverage, &errors, 1.0)?
    } else {
        // Majority voting rescues part of the per-source noise, so a global
        // multiplier gamma drives per-source targets until the aggregate
        // matches. Grow to bracket, then bisect.
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut cand = build_all_sources(&pop, spec, &coverage, &errors, hi)?;
        let mut measured = measure_aggregate_noise(&pop, spec, &cand);
        let mut grow = 0;
        while measured < target - 0.01 && grow < 7 {
            lo = hi;
            hi *= 2.0;
            cand = build_all_sources(&pop, spec, &coverage, &errors, hi)?;
            measured = measure_aggregate_noise(&pop, spec, &cand);
            grow += 1;
        }
        if measured >= target - 0.01 {
            let mut best = (cand, (measured - target).abs());
            for _ in 0..25 {
                if best.1 <= 0.01 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let c = build_all_sources(&pop, spec, &coverage, &errors, mid)?;
                let m = measure_aggregate_noise(&pop, spec, &c);
                if (m - target).abs() < best.1 {
                    best = (c, (m - target).abs());
                }
                if m < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best.0
        } else {
            // Saturated below the target; ship the closest achievable.
            cand
        }
    };

    let ids = (0..pop.n).map(|i| format!("synth-{i:05}")).collect();
    let gold = pop.gold.iter().map(|&g| Some(g)).collect();
    let mut ds = WeakDataset::from_parts(
        pop.k,
        pop.d,
        spec.sources,
        ids,
        pop.features,
        sources,
        gold,
        pop.split,
    )?;
    ds.aggregate(&mut stream_rng(spec.seed, Stream::TieBreak));
    Ok(ds)
}

/// Corpus statistics plus the per-source coverage/precision table.
pub fn describe(ds: &WeakDataset) -> std::result::Result<(CorpusStats, Vec<SourceStats>), DataError> {
    let stats = ds.compute_stats()?;
    let train = ds.train_indices();
    let mut table = Vec::with_capacity(ds.num_sources());
    for j in 0..ds.num_sources() {
        let mut fired = 0usize;
        let mut graded = 0usize;
        let mut correct = 0usize;
        for &i in &train {
            let label = ds.sources_row(i)[j];
            if label == ABSTAIN {
                continue;
            }
            fired += 1;
            if let Some(g) = ds.gold(i) {
                graded += 1;
                if label == g as i64 {
                    correct += 1;
                }
            }
        }
        table.push(SourceStats {
            source: j,
            coverage: if train.is_empty() {
                0.0
            } else {
                fired as f64 / train.len() as f64
            },
            precision: (graded > 0).then(|| correct as f64 / graded as f64),
        });
    }
    Ok((stats, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(style: NoiseStyle, err: f64, cov: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            k: 4,
            d: 16,
            n: 1500,
            cluster_sep: 3.0,
            sources: 8,
            coverage: vec![cov],
            error_rate: vec![err],
            style,
            seed,
        }
    }

    #[test]
    fn noiseless_full_coverage_reproduces_gold() {
        let spec = SynthSpec {
            k: 3,
            d: 6,
            n: 600,
            cluster_sep: 3.0,
            sources: 3,
            coverage: vec![1.0],
            error_rate: vec![0.0],
            style: NoiseStyle::FeatureDependent,
            seed: 11,
        };
        let ds = generate(&spec).unwrap();
        let stats = ds.compute_stats().unwrap();
        assert_eq!(stats.noise_rate, Some(0.0));
        assert!((stats.coverage - 1.0).abs() < 1e-12);
        for &i in &ds.train_indices() {
            assert_eq!(ds.weak_label(i).unwrap(), ds.gold(i).unwrap() as i64);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(NoiseStyle::FeatureDependent, 0.3, 0.3, 42);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.features_of(&[0, 1, 2]).unwrap().data(), b.features_of(&[0, 1, 2]).unwrap().data());
        for i in 0..a.len() {
            assert_eq!(a.sources_row(i), b.sources_row(i));
            assert_eq!(a.gold(i), b.gold(i));
            assert_eq!(a.split_of(i), b.split_of(i));
        }
    }

    #[test]
    fn aggregate_noise_matches_request() {
        for seed in [1, 2] {
            let s = spec(NoiseStyle::FeatureDependent, 0.3, 0.3, seed);
            let ds = generate(&s).unwrap();
            let noise = ds.compute_stats().unwrap().noise_rate.unwrap();
            assert!(
                (noise - 0.3).abs() <= 0.03,
                "seed {seed}: measured noise {noise}"
            );
        }
    }

    #[test]
    fn uniform_style_noise_matches_request() {
        let s = spec(NoiseStyle::Uniform, 0.3, 0.2, 5);
        let ds = generate(&s).unwrap();
        let noise = ds.compute_stats().unwrap().noise_rate.unwrap();
        assert!((noise - 0.3).abs() <= 0.03, "measured noise {noise}");
    }

    #[test]
    fn describe_reports_perfect_sources() {
        let spec = SynthSpec {
            k: 2,
            d: 4,
            n: 400,
            cluster_sep: 3.0,
            sources: 2,
            coverage: vec![0.8],
            error_rate: vec![0.0],
            style: NoiseStyle::FeatureDependent,
            seed: 3,
        };
        let ds = generate(&spec).unwrap();
        let (_, table) = describe(&ds).unwrap();
        for s in &table {
            assert_eq!(s.precision, Some(1.0));
            assert!(s.coverage > 0.0);
        }
    }

    #[test]
    fn describe_handles_silent_and_random_sources() {
        use crate::data::WeakDataset;
        let mut rng = stream_rng(9, Stream::Synth);
        let n = 10_000;
        let k = 4;
        // Source 0 always abstains; source 1 labels uniformly at random.
        let mut sources = Vec::with_capacity(n * 2);
        let mut gold = Vec::with_capacity(n);
        for _ in 0..n {
            let g = rng.gen_range(0..k);
            gold.push(Some(g));
            sources.push(ABSTAIN);
            sources.push(rng.gen_range(0..k as i64));
        }
        let mut split = vec![Split::Train; n];
        split[0] = Split::Valid;
        split[1] = Split::Test;
        let mut ds = WeakDataset::from_parts(
            k,
            1,
            2,
            (0..n).map(|i| i.to_string()).collect(),
            vec![0.0; n],
            sources,
            gold,
            split,
        )
        .unwrap();
        ds.aggregate(&mut stream_rng(9, Stream::TieBreak));
        let (_, table) = describe(&ds).unwrap();
        assert_eq!(table[0].coverage, 0.0);
        assert_eq!(table[0].precision, None);
        let p = table[1].precision.unwrap();
        assert!((p - 0.25).abs() < 0.02, "random-source precision {p}");
    }

    /// Balanced accuracy of an error-vs-correct threshold rule fitted on the
    /// even rows (mean-difference direction, best of 19 quantile cuts,
    /// orientation included) and scored on the odd rows, so a fitted
    /// direction cannot manufacture separation out of noise.
    fn probe_direction(rows: &[&[f64]], errs: &[bool]) -> f64 {
        let d = rows[0].len();
        let fit: Vec<usize> = (0..rows.len()).step_by(2).collect();
        let eval: Vec<usize> = (1..rows.len()).step_by(2).collect();
        let mut mean_err = vec![0.0; d];
        let mut mean_ok = vec![0.0; d];
        let mut n_err_fit = 0usize;
        for &i in &fit {
            let acc = if errs[i] {
                n_err_fit += 1;
                &mut mean_err
            } else {
                &mut mean_ok
            };
            for (a, v) in acc.iter_mut().zip(rows[i]) {
                *a += v;
            }
        }
        if n_err_fit == 0 || n_err_fit == fit.len() {
            return 0.5;
        }
        for a in mean_err.iter_mut() {
            *a /= n_err_fit as f64;
        }
        for a in mean_ok.iter_mut() {
            *a /= (fit.len() - n_err_fit) as f64;
        }
        let dir: Vec<f64> = mean_err.iter().zip(&mean_ok).map(|(e, o)| e - o).collect();
        let balanced = |ids: &[usize], theta: f64, above_is_err: bool| -> f64 {
            let (mut tp, mut tn, mut ne, mut nc) = (0usize, 0usize, 0usize, 0usize);
            for &i in ids {
                let predicted_err = (dot(rows[i], &dir) > theta) == above_is_err;
                if errs[i] {
                    ne += 1;
                    if predicted_err {
                        tp += 1;
                    }
                } else {
                    nc += 1;
                    if !predicted_err {
                        tn += 1;
                    }
                }
            }
            if ne == 0 || nc == 0 {
                return 0.5;
            }
            0.5 * (tp as f64 / ne as f64 + tn as f64 / nc as f64)
        };
        let mut fit_values: Vec<f64> = fit.iter().map(|&i| dot(rows[i], &dir)).collect();
        fit_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best_rule = (f64::NEG_INFINITY, true);
        let mut best_fit = 0.0;
        for q in 1..20 {
            let theta = fit_values[q * fit_values.len() / 20];
            for orient in [true, false] {
                let bal = balanced(&fit, theta, orient);
                if bal > best_fit {
                    best_fit = bal;
                    best_rule = (theta, orient);
                }
            }
        }
        balanced(&eval, best_rule.0, best_rule.1)
    }

    /// Class-conditioned linear separability of the error indicator; the
    /// noise-style separation check. Mistakes from geometric rules cluster
    /// per gold class in feature space, so a per-class mean-difference probe
    /// finds them; i.i.d. flips give it nothing beyond small-sample noise.
    fn best_threshold_balanced_accuracy(ds: &WeakDataset) -> f64 {
        let covered = ds.covered_train_indices().unwrap();
        let d = ds.feature_dim();
        let x = ds.features_of(&covered).unwrap();
        let mut weighted = 0.0;
        let mut total = 0usize;
        for g in 0..ds.num_classes() {
            let mut rows: Vec<&[f64]> = Vec::new();
            let mut errs: Vec<bool> = Vec::new();
            for (pos, &i) in covered.iter().enumerate() {
                if ds.gold(i).unwrap() == g {
                    rows.push(&x.data()[pos * d..(pos + 1) * d]);
                    errs.push(ds.weak_label(i).unwrap() != g as i64);
                }
            }
            let n_err = errs.iter().filter(|&&e| e).count();
            if n_err < 20 || rows.len() - n_err < 20 {
                continue;
            }
            weighted += probe_direction(&rows, &errs) * rows.len() as f64;
            total += rows.len();
        }
        assert!(total > 0, "no class had enough errors to probe");
        weighted / total as f64
    }

    #[test]
    fn feature_dependent_errors_are_predictable_from_features() {
        for seed in [11, 17, 23] {
            let fd = generate(&spec(NoiseStyle::FeatureDependent, 0.3, 0.3, seed)).unwrap();
            let acc = best_threshold_balanced_accuracy(&fd);
            assert!(acc > 0.6, "seed {seed}: feature-dependent separability {acc}");
        }
    }

    #[test]
    fn uniform_errors_are_not_predictable_from_features() {
        for seed in [11, 17, 23] {
            let un = generate(&spec(NoiseStyle::Uniform, 0.3, 0.2, seed)).unwrap();
            let acc = best_threshold_balanced_accuracy(&un);
            assert!(acc < 0.58, "seed {seed}: uniform separability {acc}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(NoiseStyle::Uniform, 0.3, 0.3, 1);
        s.coverage = vec![0.5, 0.5, 0.5];
        assert!(matches!(generate(&s), Err(SynthError::BadSpec(_))));
        let mut s = spec(NoiseStyle::Uniform, 0.3, 0.3, 1);
        s.error_rate = vec![1.0];
        assert!(matches!(generate(&s), Err(SynthError::BadSpec(_))));
        let mut s = spec(NoiseStyle::Uniform, 0.3, 0.3, 1);
        s.n = 5;
        assert!(matches!(generate(&s), Err(SynthError::BadSpec(_))));
    }
}
