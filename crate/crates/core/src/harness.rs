//! Seeded trials, dataset-fraction sweeps, aggregation and result files.
//!
//! Trial `i` of an experiment draws its dataset from
//! `derive_seed(base_seed, i)` and all learners in that trial share the fit
//! seed `derive_seed(trial_seed, FIT_STREAM)`. Results never depend on the
//! number of worker threads.
//!
//! Aggregate CSV columns: `dataset, variability, learner, fraction, metric,
//! mean, std, ci, n`. Lines starting with `#` carry the configuration.
//! Breakeven CSV columns: `dataset, variability, learner, baseline, metric,
//! baseline_value, breakeven`; an empty `breakeven` means the curve never
//! reached the baseline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit, FitConfig, LearnerKind};
use crate::metrics::{choice_accuracy, kendall_tau, pdc_for_net};
use crate::synth::{build_dataset, Dataset, DatasetConfig, LabelerKind, Preference};

/// Index mixed into a trial seed to obtain the shared fit seed.
pub const FIT_STREAM: u64 = 1;

const Z_95: f64 = 1.96;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(base) ^ index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

/// Number of training comparisons used at `fraction`: `ceil(fraction * n)`,
/// guarded against float error (0.7 * 50 must give 35, not 36).
pub fn prefix_len(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    let k = (exact - 1e-9 * n.max(1) as f64).ceil().max(0.0) as usize;
    k.min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pdc,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Pdc, Metric::Accuracy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Pdc => "pdc",
            Metric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub fractions: Vec<f64>,
    pub learners: Vec<LearnerKind>,
    pub trials: usize,
    pub base_seed: u64,
    pub fit: FitConfig,
}

impl ExperimentConfig {
    /// Full-data run of every learner with 100 trials.
    pub fn new(kind: LabelerKind, variability: bool, base_seed: u64) -> Self {
        Self {
            dataset: DatasetConfig::new(kind, variability),
            fractions: vec![1.0],
            learners: LearnerKind::ALL.to_vec(),
            trials: 100,
            base_seed,
            fit: FitConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::InvalidConfig("no learners selected".into()));
        }
        if self.fractions.is_empty() {
            return Err(Error::InvalidConfig("no fractions given".into()));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidConfig("fractions must lie in (0, 1]".into()));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("fractions must be strictly ascending".into()));
        }
        if prefix_len(self.fractions[0], self.dataset.train_size) == 0 {
            return Err(Error::InvalidConfig("smallest fraction selects no comparisons".into()));
        }
        if self.dataset.test_size < 2 {
            return Err(Error::InvalidConfig("test set needs at least 2 comparisons".into()));
        }
        self.dataset.labeler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub learner: LearnerKind,
    pub fraction: f64,
    pub train_used: usize,
    /// `None` when undefined (constant predictions) or when the fit failed.
    pub pdc: Option<f64>,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

impl TrialResult {
    pub fn value(&self, learner: LearnerKind, fraction: f64, metric: Metric) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.learner == learner && c.fraction == fraction)
            .and_then(|c| match metric {
                Metric::Pdc => c.pdc,
                Metric::Accuracy => c.accuracy,
            })
    }
}

fn evaluate(
    learner: LearnerKind,
    fraction: f64,
    dataset: &Dataset,
    cfg: &FitConfig,
    fit_seed: u64,
) -> CellResult {
    let train_used = prefix_len(fraction, dataset.train.len());
    let mut cell = CellResult {
        learner,
        fraction,
        train_used,
        pdc: None,
        accuracy: None,
        error: None,
    };
    let fitted = match fit(learner, &dataset.train[..train_used], cfg, fit_seed) {
        Ok(f) => f,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    match pdc_for_net(&dataset.ground_truth, &fitted.net, &dataset.test) {
        Ok(v) => cell.pdc = Some(v),
        Err(Error::UndefinedMetric(_)) => {}
        Err(e) => cell.error = Some(e.to_string()),
    }
    match choice_accuracy(&fitted.net, &dataset.test) {
        Ok(v) => cell.accuracy = Some(v),
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Generates the trial's dataset and evaluates every (learner, fraction) cell.
/// Fractions select a prefix of the training comparisons, which are already in
/// iid random order.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let seed = derive_seed(cfg.base_seed, trial as u64);
    let dataset = build_dataset(&cfg.dataset, seed)?;
    let fit_seed = derive_seed(seed, FIT_STREAM);
    let cells = cfg
        .learners
        .iter()
        .flat_map(|&l| cfg.fractions.iter().map(move |&f| (l, f)))
        .map(|(l, f)| evaluate(l, f, &dataset, &cfg.fit, fit_seed))
        .collect();
    Ok(TrialResult { trial, seed, cells })
}

/// Runs all trials on the current rayon pool, ordered by trial index.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// Normal-approximation 95% half-width.
    pub ci: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewValues(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    Ok(Aggregate {
        n,
        mean,
        std,
        ci: Z_95 * std / (n as f64).sqrt(),
    })
}

/// Smallest fraction at which the linearly interpolated curve reaches
/// `baseline`. `curve` must be sorted by fraction.
pub fn breakeven(curve: &[(f64, f64)], baseline: f64) -> Option<f64> {
    let (&(f0, m0), rest) = curve.split_first()?;
    if m0 >= baseline {
        return Some(f0);
    }
    let mut prev = (f0, m0);
    for &(f, m) in rest {
        if m >= baseline {
            let t = (baseline - prev.1) / (m - prev.1);
            return Some(prev.0 + t * (f - prev.0));
        }
        prev = (f, m);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub dataset: LabelerKind,
    pub variability: bool,
    pub learner: LearnerKind,
    pub fraction: f64,
    pub metric: Metric,
    /// Number of defined trial values.
    pub n: usize,
    pub stats: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakevenRow {
    pub dataset: LabelerKind,
    pub variability: bool,
    pub learner: LearnerKind,
    pub baseline: LearnerKind,
    pub metric: Metric,
    /// Baseline mean at the largest fraction.
    pub baseline_value: f64,
    pub breakeven: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<AggregateRow>,
    pub breakevens: Vec<BreakevenRow>,
}

impl ExperimentOutput {
    pub fn aggregate_for(&self, learner: LearnerKind, fraction: f64, metric: Metric) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|r| r.learner == learner && r.fraction == fraction && r.metric == metric)
            .and_then(|r| r.stats.as_ref())
    }

    pub fn breakeven_for(&self, learner: LearnerKind, metric: Metric) -> Option<&BreakevenRow> {
        self.breakevens
            .iter()
            .find(|r| r.learner == learner && r.metric == metric)
    }
}

/// Per-(learner, fraction, metric) aggregates over trials, in config order.
pub fn summarize(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &learner in &cfg.learners {
        for &fraction in &cfg.fractions {
            for metric in Metric::ALL {
                let values: Vec<f64> = trials
                    .iter()
                    .filter_map(|t| t.value(learner, fraction, metric))
                    .collect();
                rows.push(AggregateRow {
                    dataset: cfg.dataset.kind,
                    variability: cfg.dataset.variability,
                    learner,
                    fraction,
                    metric,
                    n: values.len(),
                    stats: aggregate(&values).ok(),
                });
            }
        }
    }
    rows
}

/// Breakeven of every other learner against `baseline` at its largest fraction.
pub fn breakevens(cfg: &ExperimentConfig, rows: &[AggregateRow], baseline: LearnerKind) -> Vec<BreakevenRow> {
    let Some(&full) = cfg.fractions.last() else {
        return Vec::new();
    };
    let mean_of = |learner: LearnerKind, fraction: f64, metric: Metric| {
        rows.iter()
            .find(|r| r.learner == learner && r.fraction == fraction && r.metric == metric)
            .and_then(|r| r.stats.map(|s| s.mean))
    };
    let mut out = Vec::new();
    for metric in Metric::ALL {
        let Some(baseline_value) = mean_of(baseline, full, metric) else {
            continue;
        };
        for &learner in cfg.learners.iter().filter(|&&l| l != baseline) {
            let curve: Vec<(f64, f64)> = cfg
                .fractions
                .iter()
                .filter_map(|&f| mean_of(learner, f, metric).map(|m| (f, m)))
                .collect();
            out.push(BreakevenRow {
                dataset: cfg.dataset.kind,
                variability: cfg.dataset.variability,
                learner,
                baseline,
                metric,
                baseline_value,
                breakeven: breakeven(&curve, baseline_value),
            });
        }
    }
    out
}

/// Runs, aggregates and computes breakevens against BT for one condition.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let trials = run_trials(cfg)?;
    let aggregates = summarize(cfg, &trials);
    let breakevens = breakevens(cfg, &aggregates, LearnerKind::Bt);
    Ok(ExperimentOutput {
        config: cfg.clone(),
        trials,
        aggregates,
        breakevens,
    })
}

/// A rayon pool with `threads` workers, or the default size when `None`.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn write_config_header<W: Write>(w: &mut W, outputs: &[ExperimentOutput]) -> Result<()> {
    for out in outputs {
        writeln!(w, "# config {}", serde_json::to_string(&out.config)?)?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_aggregates_csv<W: Write>(mut w: W, outputs: &[ExperimentOutput]) -> Result<()> {
    write_config_header(&mut w, outputs)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "variability", "learner", "fraction", "metric", "mean", "std", "ci", "n"])?;
    for row in outputs.iter().flat_map(|o| &o.aggregates) {
        csv.write_record([
            row.dataset.name().to_string(),
            row.variability.to_string(),
            row.learner.name().to_string(),
            row.fraction.to_string(),
            row.metric.name().to_string(),
            opt(row.stats.map(|s| s.mean)),
            opt(row.stats.map(|s| s.std)),
            opt(row.stats.map(|s| s.ci)),
            row.n.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_breakeven_csv<W: Write>(mut w: W, outputs: &[ExperimentOutput]) -> Result<()> {
    write_config_header(&mut w, outputs)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "variability", "learner", "baseline", "metric", "baseline_value", "breakeven"])?;
    for row in outputs.iter().flat_map(|o| &o.breakevens) {
        csv.write_record([
            row.dataset.name().to_string(),
            row.variability.to_string(),
            row.learner.name().to_string(),
            row.baseline.name().to_string(),
            row.metric.name().to_string(),
            row.baseline_value.to_string(),
            opt(row.breakeven),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrialLine<'a> {
    dataset: LabelerKind,
    variability: bool,
    #[serde(flatten)]
    trial: &'a TrialResult,
}

/// One JSON object per trial.
pub fn write_trials_jsonl<W: Write>(mut w: W, outputs: &[ExperimentOutput]) -> Result<()> {
    for out in outputs {
        for trial in &out.trials {
            let line = TrialLine {
                dataset: out.config.dataset.kind,
                variability: out.config.dataset.variability,
                trial,
            };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `aggregates.csv`, `breakeven.csv` and `trials.jsonl` into `dir`.
pub fn write_results(dir: &Path, outputs: &[ExperimentOutput]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_aggregates_csv(BufWriter::new(File::create(dir.join("aggregates.csv"))?), outputs)?;
    write_breakeven_csv(BufWriter::new(File::create(dir.join("breakeven.csv"))?), outputs)?;
    write_trials_jsonl(BufWriter::new(File::create(dir.join("trials.jsonl"))?), outputs)?;
    Ok(())
}

/// Label versus ground-truth preference counts. Ties in true utility count as
/// favouring `a`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_a_label_a: usize,
    pub true_a_label_b: usize,
    pub true_b_label_a: usize,
    pub true_b_label_b: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_a_label_a + self.true_a_label_b + self.true_b_label_a + self.true_b_label_b
    }

    pub fn errors(&self) -> usize {
        self.true_a_label_b + self.true_b_label_a
    }

    pub fn error_rate(&self) -> f64 {
        self.errors() as f64 / self.total().max(1) as f64
    }
}

/// Confusion counts over all train and test comparisons.
pub fn label_confusion(dataset: &Dataset) -> Confusion {
    let mut c = Confusion::default();
    for cmp in dataset.train.iter().chain(&dataset.test) {
        let true_a = dataset.ground_truth.utility(&cmp.a) >= dataset.ground_truth.utility(&cmp.b);
        match (true_a, cmp.preference) {
            (true, Preference::A) => c.true_a_label_a += 1,
            (true, Preference::B) => c.true_a_label_b += 1,
            (false, Preference::A) => c.true_b_label_a += 1,
            (false, Preference::B) => c.true_b_label_b += 1,
        }
    }
    c
}

/// Kendall tau between strength signals and true `|Δu|` over all comparisons.
/// Strength signals are response-time-like, so a faithful signal gives -1.
pub fn strength_tau(dataset: &Dataset) -> Result<f64> {
    let (signals, abs_diffs): (Vec<f64>, Vec<f64>) = dataset
        .train
        .iter()
        .chain(&dataset.test)
        .map(|c| {
            let d = dataset.ground_truth.utility(&c.a) - dataset.ground_truth.utility(&c.b);
            (c.strength, d.abs())
        })
        .unzip();
    kendall_tau(&signals, &abs_diffs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub dataset: LabelerKind,
    pub variability: bool,
    pub trial: usize,
    pub seed: u64,
    pub confusion: Confusion,
    pub error_rate: f64,
    pub strength_tau: Option<f64>,
}

/// Per-trial label confusion and strength/|Δu| rank agreement, using the same
/// dataset seeds as [`run_trial`].
pub fn dataset_diagnostics(cfg: &DatasetConfig, trials: usize, base_seed: u64) -> Result<Vec<DiagnosticsRow>> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(base_seed, trial as u64);
            let dataset = build_dataset(cfg, seed)?;
            let confusion = label_confusion(&dataset);
            Ok(DiagnosticsRow {
                dataset: cfg.kind,
                variability: cfg.variability,
                trial,
                seed,
                confusion,
                error_rate: confusion.error_rate(),
                strength_tau: strength_tau(&dataset).ok(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn prefix_lengths() {
        assert_eq!(prefix_len(1.0, 50), 50);
        assert_eq!(prefix_len(0.5, 50), 25);
        assert_eq!(prefix_len(0.7, 50), 35);
        assert_eq!(prefix_len(0.1, 50), 5);
        assert_eq!(prefix_len(0.33, 50), 17);
        for i in 1..=100 {
            let f = i as f64 / 100.0;
            let k = prefix_len(f, 50);
            assert!(k as f64 >= f * 50.0 - 1e-6 && (k as f64) < f * 50.0 + 1.0, "{f} -> {k}");
        }
    }

    #[test]
    fn aggregate_values() {
        let a = aggregate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.mean, 2.0);
        assert_eq!(a.std, 1.0);
        assert!((a.ci - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert!((a.ci - 1.1316).abs() < 1e-4);
        let c = aggregate(&[0.4; 5]).unwrap();
        assert_eq!((c.std, c.ci), (0.0, 0.0));
        assert!(matches!(aggregate(&[1.0]), Err(Error::TooFewValues(1))));
        let b = aggregate(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn breakeven_values() {
        let r = breakeven(&[(0.5, 0.60), (1.0, 0.70)], 0.65).unwrap();
        assert!((r - 0.75).abs() < 1e-12);
        assert_eq!(breakeven(&[(0.5, 0.60), (1.0, 0.70)], 0.80), None);
        assert_eq!(breakeven(&[(0.5, 0.60), (0.7, 0.65), (1.0, 0.70)], 0.65), Some(0.7));
        assert_eq!(breakeven(&[(0.5, 0.66), (1.0, 0.70)], 0.65), Some(0.5));
        assert_eq!(breakeven(&[], 0.65), None);
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(LabelerKind::Deterministic, true, 11);
        cfg.trials = 2;
        cfg.fractions = vec![0.5, 1.0];
        cfg.learners = vec![LearnerKind::Bt, LearnerKind::Rr];
        cfg.fit.train.steps = 20;
        cfg
    }

    #[test]
    fn trial_is_deterministic_and_subsets() {
        let cfg = small_config();
        let a = run_trial(&cfg, 1).unwrap();
        let b = run_trial(&cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 4);
        let used: Vec<usize> = a.cells.iter().map(|c| c.train_used).collect();
        assert_eq!(used, vec![25, 50, 25, 50]);
        assert!(a.cells.iter().all(|c| c.error.is_none() && c.accuracy.is_some()));
    }

    #[test]
    fn summary_has_row_per_cell() {
        let cfg = small_config();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.aggregates.len(), cfg.learners.len() * cfg.fractions.len() * Metric::ALL.len());
        assert_eq!(out.breakevens.len(), Metric::ALL.len());
        let mut buf = Vec::new();
        write_aggregates_csv(&mut buf, std::slice::from_ref(&out)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# config {"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + out.aggregates.len());
    }

    #[test]
    fn validation_rejects_bad_fractions() {
        let mut cfg = small_config();
        cfg.fractions = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.fractions = vec![0.0, 1.0];
        assert!(cfg.validate().is_err());
        cfg.fractions = vec![0.5, 1.0];
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn deterministic_diagnostics() {
        let cfg = DatasetConfig::new(LabelerKind::Deterministic, false);
        let rows = dataset_diagnostics(&cfg, 3, 5).unwrap();
        for r in rows {
            assert_eq!(r.confusion.errors(), 0);
            assert_eq!(r.strength_tau, Some(-1.0));
        }
    }
}
