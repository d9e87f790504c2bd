//! Segmentation metrics, LOESS detrending, the simulation benchmark and
//! paired t-tests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::flda::{self, AdaptationSchedule, FldaState, SelfTrainParams};
use crate::hmm::{self, GaussianHmm, HmmConfig, SleepRule};
use crate::ingest::EpochFeatureMatrix;
use crate::labels::{LabelSequence, Tag};
use crate::sessions;
use crate::simgen::{self, SimConfig, SimRealization};

/// Metrics of one trial. Undefined metrics are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub cosine: Option<f64>,
    /// Hours.
    pub onset_diff: Option<f64>,
    /// Hours.
    pub duration_diff: Option<f64>,
}

pub const METRICS: [&str; 5] = ["accuracy", "f1", "cosine", "onset_diff", "duration_diff"];

impl TrialMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "accuracy" => Some(self.accuracy),
            "f1" => self.f1,
            "cosine" => self.cosine,
            "onset_diff" => self.onset_diff,
            "duration_diff" => self.duration_diff,
            _ => None,
        }
    }
}

/// Runs of sleep as `(start, end)` epoch index pairs, end exclusive.
fn sleep_runs(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 1 {
            let s = i;
            while i < labels.len() && labels[i] == 1 {
                i += 1;
            }
            runs.push((s, i));
        } else {
            i += 1;
        }
    }
    runs
}

/// Scores dense 0/1 label vectors on the same grid, sleep = 1 positive.
pub fn score_dense(pred: &[u8], truth: &[u8], epoch_hours: f64) -> Result<TrialMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("nothing to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = pred.len() as f64;
    let accuracy = (tp + tn) as f64 / n;
    let f1 = (tp + fp + fn_ > 0 && tp + fn_ > 0)
        .then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    let norm = (((tp + fp) * (tp + fn_)) as f64).sqrt();
    let cosine = (norm > 0.0).then(|| tp as f64 / norm);

    let pred_runs = sleep_runs(pred);
    let true_runs = sleep_runs(truth);
    let onset_diff = (!pred_runs.is_empty() && !true_runs.is_empty()).then(|| {
        pred_runs
            .iter()
            .map(|(s, _)| {
                true_runs
                    .iter()
                    .map(|(ts, _)| (*s as f64 - *ts as f64).abs())
                    .fold(f64::INFINITY, f64::min)
                    * epoch_hours
            })
            .sum::<f64>()
            / pred_runs.len() as f64
    });
    let duration_diff = (!pred_runs.is_empty()).then(|| {
        pred_runs
            .iter()
            .map(|&(s, e)| {
                let mut best: Option<(usize, usize)> = None;
                for &(ts, te) in &true_runs {
                    let overlap = e.min(te).saturating_sub(s.max(ts));
                    if overlap > 0 && best.is_none_or(|(o, _)| overlap > o) {
                        best = Some((overlap, te - ts));
                    }
                }
                let len = (e - s) as f64;
                match best {
                    Some((_, true_len)) => (len - true_len as f64).abs() * epoch_hours,
                    None => len * epoch_hours,
                }
            })
            .sum::<f64>()
            / pred_runs.len() as f64
    });
    Ok(TrialMetrics {
        accuracy,
        f1,
        cosine,
        onset_diff,
        duration_diff,
    })
}

/// Scores two label sequences on the same grid. Epochs without a predicted
/// label count as wake.
pub fn score(pred: &LabelSequence, truth: &LabelSequence) -> Result<TrialMetrics> {
    if pred.starts != truth.starts {
        return Err(Error::Validation("label sequences are on different grids".into()));
    }
    score_dense(&pred.dense(0), &truth.dense(0), truth.epoch_length / 3600.0)
}

/// Summary of one metric across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Trials where the metric was defined.
    pub n: usize,
}

fn summarize(values: &[f64]) -> MetricSummary {
    MetricSummary {
        mean: crate::stats::mean(values),
        sd: crate::stats::sample_sd(values),
        n: values.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_trials: usize,
    pub n_failed: usize,
    pub summary: BTreeMap<String, MetricSummary>,
    /// One entry per attempted trial; `None` for failed trials.
    pub trials: Vec<Option<TrialMetrics>>,
}

impl MetricReport {
    pub fn from_trials(trials: Vec<Option<TrialMetrics>>) -> Self {
        let mut summary = BTreeMap::new();
        for m in METRICS {
            let vals: Vec<f64> = trials.iter().flatten().filter_map(|t| t.get(m)).collect();
            summary.insert(m.to_string(), summarize(&vals));
        }
        Self {
            n_trials: trials.iter().flatten().count(),
            n_failed: trials.iter().filter(|t| t.is_none()).count(),
            summary,
            trials,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).and_then(|s| s.mean)
    }

    /// Values of `metric` per attempted trial.
    pub fn values(&self, metric: &str) -> Vec<Option<f64>> {
        self.trials.iter().map(|t| t.and_then(|t| t.get(metric))).collect()
    }
}

/// Local-linear tricube LOESS fit at every point of an evenly spaced series.
pub fn loess_fit(values: &[f64], span: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::Config(format!("LOESS span must lie in (0, 1], got {span}")));
    }
    let q = ((span * n as f64).floor() as usize).min(n);
    if n < 5 || q < 5 {
        return Err(Error::InsufficientData(format!(
            "LOESS needs at least 5 points per local fit; span {span} over {n} points gives {q}"
        )));
    }
    let mut fitted = Vec::with_capacity(n);
    for i in 0..n {
        // The q nearest grid points form a window; shift it inside the range.
        let lo = i.saturating_sub(q / 2).min(n - q);
        let hi = lo + q;
        let dmax = (i - lo).max(hi - 1 - i) as f64;
        let dmax = if dmax > 0.0 { dmax * (1.0 + 1e-12) } else { 1.0 };
        let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in lo..hi {
            let x = j as f64 - i as f64;
            let u = (x.abs() / dmax).min(1.0);
            let w = (1.0 - u * u * u).powi(3);
            sw += w;
            swx += w * x;
            swy += w * values[j];
            swxx += w * x * x;
            swxy += w * x * values[j];
        }
        // Weighted least squares intercept at x = 0.
        let det = sw * swxx - swx * swx;
        let fit = if det.abs() > 1e-12 * sw * swxx.max(1.0) {
            (swxx * swy - swx * swxy) / det
        } else {
            swy / sw
        };
        fitted.push(fit);
    }
    Ok(fitted)
}

/// Residuals from the LOESS trend plus the global mean.
pub fn loess_detrend(values: &[f64], span: f64) -> Result<Vec<f64>> {
    let fitted = loess_fit(values, span)?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(values.iter().zip(&fitted).map(|(v, f)| v - f + mean).collect())
}

/// Detrends every column of a row-major observation matrix.
pub fn loess_detrend_rows(rows: &[Vec<f64>], span: f64) -> Result<Vec<Vec<f64>>> {
    let p = rows.first().map_or(0, Vec::len);
    let mut out = rows.to_vec();
    for j in 0..p {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        for (r, v) in out.iter_mut().zip(loess_detrend(&col, span)?) {
            r[j] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: f64,
    pub mean_diff: f64,
    /// The differences have zero variance.
    pub degenerate: bool,
}

/// Paired t-test of `a − b` against zero.
pub fn paired_ttest(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        let p_value = match alternative {
            _ if mean == 0.0 => 1.0,
            Alternative::Greater => f64::from(u8::from(mean < 0.0)),
            Alternative::Less => f64::from(u8::from(mean > 0.0)),
            Alternative::TwoSided => 0.0,
        };
        return Ok(TTest {
            t,
            p_value,
            df,
            mean_diff: mean,
            degenerate: true,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p_value = match alternative {
        Alternative::Greater => 1.0 - dist.cdf(t),
        Alternative::Less => dist.cdf(t),
        Alternative::TwoSided => 2.0 * (1.0 - dist.cdf(t.abs())),
    };
    Ok(TTest {
        t,
        p_value,
        df,
        mean_diff: mean,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hmm,
    Dhmm,
    Proposed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hmm, Method::Dhmm, Method::Proposed];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hmm => "hmm",
            Method::Dhmm => "dhmm",
            Method::Proposed => "proposed",
        }
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let methods: Vec<Method> = s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        Ok(methods)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    InSample,
    OutOfSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    /// Model draws (apex pair) per benchmark.
    pub n_realizations: usize,
    /// Independent data draws per realization.
    pub n_repeats: usize,
    pub protocol: Protocol,
    pub seed: u64,
    pub baseline_hours: f64,
    pub test_window_hours: f64,
    pub min_train_hours: u32,
    pub max_train_hours: u32,
    pub gamma: f64,
    /// Minimum share of each class in a scored training window.
    pub min_class_fraction: f64,
    /// Observation channels replaced by their natural log before any
    /// segmenter sees them.
    pub log_channels: Vec<usize>,
    pub loess_span: f64,
    pub hmm: HmmConfig,
    /// Median-filter order applied to every method's output; 0 disables.
    pub smoothing_window: usize,
    pub min_sleep_minutes: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            n_realizations: 100,
            n_repeats: 10,
            protocol: Protocol::OutOfSample,
            seed: 0,
            baseline_hours: 36.0,
            test_window_hours: 3.0,
            min_train_hours: 12,
            max_train_hours: 60,
            gamma: 1.0,
            min_class_fraction: 0.1,
            log_channels: vec![1],
            loess_span: 0.75,
            hmm: HmmConfig::default(),
            smoothing_window: 9,
            min_sleep_minutes: 60.0,
        }
    }
}

impl BenchmarkConfig {
    pub fn schedule(&self) -> AdaptationSchedule {
        AdaptationSchedule::hourly(
            self.baseline_hours,
            self.test_window_hours,
            self.min_train_hours,
            self.max_train_hours,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.n_realizations == 0 || self.n_repeats == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        if let Some(c) = self.log_channels.iter().find(|&&c| c > 1) {
            return Err(Error::Config(format!("log channel {c} out of range; records have channels 0 and 1")));
        }
        if self.smoothing_window > 0 && self.smoothing_window.is_multiple_of(2) {
            return Err(Error::Config("smoothing window must be odd".into()));
        }
        self.schedule().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub method: Method,
    pub baseline: Method,
    pub alternative: Alternative,
    pub n: usize,
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub protocol: Protocol,
    pub n_realizations: usize,
    pub n_repeats: usize,
    pub seed: u64,
    pub methods: BTreeMap<Method, MetricReport>,
    /// One-sided tests that the proposed method beats each other method.
    pub comparisons: Vec<Comparison>,
}

impl BenchmarkReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Writes `trial,realization,repeat,method,<metrics>`.
    pub fn write_trials_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["trial", "realization", "repeat", "method"];
        header.extend(METRICS);
        w.write_record(&header)?;
        for (method, report) in &self.methods {
            for (i, t) in report.trials.iter().enumerate() {
                let mut rec = vec![
                    i.to_string(),
                    (i / self.n_repeats).to_string(),
                    (i % self.n_repeats).to_string(),
                    method.to_string(),
                ];
                rec.extend(METRICS.iter().map(|m| {
                    t.and_then(|t| t.get(m)).map(|v| v.to_string()).unwrap_or_default()
                }));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn comparison(&self, metric: &str, baseline: Method) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric && c.baseline == baseline)
    }
}

/// Observation rows of a simulated record with the listed channels
/// log-transformed.
pub fn realization_rows(r: &SimRealization, log_channels: &[usize]) -> Vec<Vec<f64>> {
    let mut rows = r.rows();
    for row in &mut rows {
        for &c in log_channels {
            row[c] = row[c].ln();
        }
    }
    rows
}

/// Feature matrix of simulated rows on a grid of `step_hours`.
pub fn realization_matrix(rows: &[Vec<f64>], step_hours: f64) -> EpochFeatureMatrix {
    EpochFeatureMatrix::from_rows(
        "sim",
        step_hours * 3600.0,
        0.0,
        vec!["x1".into(), "x2".into()],
        rows.iter().map(|o| o.iter().map(|&v| Some(v)).collect()).collect(),
    )
}

pub(crate) fn mix_seed(seed: u64, realization: u64, repeat: u64) -> u64 {
    // SplitMix64 finalizer over the combined index.
    let mut z = seed
        .wrapping_add(realization.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(repeat.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train and test records of one trial. All repeats of a realization share
/// the apex pair.
pub fn trial_data(scenario: &SimConfig, seed: u64, realization: usize, repeat: usize) -> Result<(SimRealization, SimRealization)> {
    let mut model_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, realization as u64, u64::MAX));
    let apex = simgen::draw_apex(scenario, &mut model_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, realization as u64, repeat as u64));
    let train = simgen::sample(scenario, apex, &mut rng)?;
    let test = simgen::sample(scenario, apex, &mut rng)?;
    Ok((train, test))
}

struct Segmenter<'a> {
    config: &'a BenchmarkConfig,
    rule: SleepRule,
}

impl Segmenter<'_> {
    fn rows(&self, r: &SimRealization) -> Vec<Vec<f64>> {
        realization_rows(r, &self.config.log_channels)
    }

    fn baseline_len(&self, r: &SimRealization) -> usize {
        r.time_hours.partition_point(|t| *t < self.config.baseline_hours)
    }

    fn fit_hmm(&self, rows: &[Vec<f64>]) -> Result<(GaussianHmm, Vec<u8>)> {
        let fit = hmm::fit_em(rows, &self.config.hmm)?;
        let events = hmm::state_events(&fit.model, self.rule)?;
        Ok((fit.model, events))
    }

    fn decode(&self, model: &GaussianHmm, events: &[u8], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        let d = hmm::decode(model, rows)?;
        Ok(d.states.iter().map(|&s| events[s]).collect())
    }

    fn static_hmm(&self, train: &[Vec<f64>], n_base: usize, target: &[Vec<f64>]) -> Result<Vec<u8>> {
        let (model, events) = self.fit_hmm(&train[..n_base])?;
        self.decode(&model, &events, target)
    }

    fn proposed(&self, train: &SimRealization, test: Option<&SimRealization>) -> Result<Vec<u8>> {
        let rows = self.rows(train);
        let n_base = self.baseline_len(train);
        let (model, events) = self.fit_hmm(&rows[..n_base])?;
        let base = self.decode(&model, &events, &rows[..n_base])?;
        let m = realization_matrix(&rows, train.step_hours);
        let mut baseline = LabelSequence::empty(m.epoch_length, m.starts(), Tag::Missing);
        for (i, &l) in base.iter().enumerate() {
            baseline.set(i, l, Tag::HmmBaseline);
        }
        let schedule = self.config.schedule();
        let params = SelfTrainParams {
            gamma: self.config.gamma,
            ridge: None,
            min_class_fraction: self.config.min_class_fraction,
        };
        let adapted = flda::gradual_self_train(&m, &[0, 1], &baseline, &schedule, params)?;
        let Some(test) = test else {
            return Ok(adapted.labels.dense(0));
        };
        let states: Vec<Option<FldaState>> = adapted.batch_states();
        let test_rows = self.rows(test);
        let n_test_base = self.baseline_len(test);
        let test_base = self.decode(&model, &events, &test_rows[..n_test_base])?;
        let tm = realization_matrix(&test_rows, test.step_hours);
        let mut test_baseline = LabelSequence::empty(tm.epoch_length, tm.starts(), Tag::Missing);
        for (i, &l) in test_base.iter().enumerate() {
            test_baseline.set(i, l, Tag::HmmBaseline);
        }
        Ok(flda::replay(&states, &tm, &[0, 1], &test_baseline, &schedule)?.dense(0))
    }

    fn run(&self, method: Method, train: &SimRealization, test: &SimRealization) -> Result<Vec<u8>> {
        let oos = self.config.protocol == Protocol::OutOfSample;
        let target = if oos { test } else { train };
        let n_base = self.baseline_len(train);
        match method {
            Method::Hmm => self.static_hmm(&self.rows(train), n_base, &self.rows(target)),
            Method::Dhmm => {
                let span = self.config.loess_span;
                let train_rows = loess_detrend_rows(&self.rows(train), span)?;
                let target_rows = if oos {
                    loess_detrend_rows(&self.rows(test), span)?
                } else {
                    train_rows.clone()
                };
                self.static_hmm(&train_rows, n_base, &target_rows)
            }
            Method::Proposed => self.proposed(train, oos.then_some(test)),
        }
    }

    fn smooth(&self, labels: Vec<u8>, epoch_length: f64) -> Vec<u8> {
        if self.config.smoothing_window == 0 {
            return labels;
        }
        let seq = LabelSequence::from_labels(epoch_length, 0.0, &labels, Tag::Flda);
        sessions::smooth_labels(&seq, self.config.smoothing_window, self.config.min_sleep_minutes).dense(0)
    }
}

/// Smoothed labels of one method on one trial: the held-out record under
/// the out-of-sample protocol, the training record otherwise.
pub fn segment_trial(config: &BenchmarkConfig, method: Method, train: &SimRealization, test: &SimRealization) -> Result<Vec<u8>> {
    let seg = Segmenter {
        config,
        rule: SleepRule::default(),
    };
    let target = if config.protocol == Protocol::OutOfSample { test } else { train };
    let labels = seg.run(method, train, test)?;
    Ok(seg.smooth(labels, target.step_hours * 3600.0))
}

/// Monte-Carlo comparison of the segmenters on simulated records.
pub fn run_benchmark(scenario: &SimConfig, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    scenario.validate()?;
    config.validate()?;
    let n_trials = config.n_realizations * config.n_repeats;
    let results: Vec<BTreeMap<Method, Option<TrialMetrics>>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let (r, j) = (trial / config.n_repeats, trial % config.n_repeats);
            let mut out = BTreeMap::new();
            let data = trial_data(scenario, config.seed, r, j);
            for &method in &config.methods {
                let metrics = data.as_ref().map_err(|e| e.to_string()).and_then(|(train, test)| {
                    let target = if config.protocol == Protocol::OutOfSample { test } else { train };
                    let labels = segment_trial(config, method, train, test).map_err(|e| e.to_string())?;
                    score_dense(&labels, &target.truth, target.step_hours).map_err(|e| e.to_string())
                });
                match metrics {
                    Ok(m) => {
                        out.insert(method, Some(m));
                    }
                    Err(e) => {
                        debug!("trial {trial} method {method} failed: {e}");
                        out.insert(method, None);
                    }
                }
            }
            out
        })
        .collect();

    let mut methods = BTreeMap::new();
    for &method in &config.methods {
        let trials = results.iter().map(|r| r[&method]).collect();
        methods.insert(method, MetricReport::from_trials(trials));
    }
    let comparisons = compare(&methods);
    Ok(BenchmarkReport {
        scenario: scenario.scenario.to_string(),
        protocol: config.protocol,
        n_realizations: config.n_realizations,
        n_repeats: config.n_repeats,
        seed: config.seed,
        methods,
        comparisons,
    })
}

fn compare(methods: &BTreeMap<Method, MetricReport>) -> Vec<Comparison> {
    let Some(proposed) = methods.get(&Method::Proposed) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (&other, report) in methods {
        if other == Method::Proposed {
            continue;
        }
        for metric in METRICS {
            let alternative = if matches!(metric, "onset_diff" | "duration_diff") {
                Alternative::Less
            } else {
                Alternative::Greater
            };
            let (a, b): (Vec<f64>, Vec<f64>) = proposed
                .values(metric)
                .into_iter()
                .zip(report.values(metric))
                .filter_map(|(x, y)| Some((x?, y?)))
                .unzip();
            out.push(Comparison {
                metric: metric.to_string(),
                method: Method::Proposed,
                baseline: other,
                alternative,
                n: a.len(),
                test: paired_ttest(&a, &b, alternative).ok(),
            });
        }
    }
    out
}
