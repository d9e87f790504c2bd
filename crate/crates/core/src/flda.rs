//! Fisher discriminant, projected naive-Bayes rule, separability-driven
//! window selection and gradual self-training.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EpochFeatureMatrix;
use crate::labels::{LabelSequence, Tag};
use crate::separability;

/// Fisher weights `w = (S_W + ridge·I)^{-1} (x̄_1 − x̄_0)`.
///
/// `ridge = None` uses `1e-8 · trace(S_W) / p`.
pub fn fisher_weights(x: &[Vec<f64>], y: &[u8], ridge: Option<f64>) -> Result<Vec<f64>> {
    let (sw, diff) = scatter(x, y)?;
    let p = diff.len();
    let ridge = ridge.unwrap_or_else(|| 1e-8 * sw.trace() / p as f64);
    let a = &sw + DMatrix::identity(p, p) * ridge;
    let w = match a.clone().cholesky() {
        Some(chol) => chol.solve(&diff),
        None => a
            .svd(true, true)
            .solve(&diff, 1e-14)
            .map_err(|e| Error::Numerical(format!("within-class scatter solve: {e}")))?,
    };
    Ok(w.iter().copied().collect())
}

/// Within-class scatter and mean difference `x̄_1 − x̄_0`.
fn scatter(x: &[Vec<f64>], y: &[u8]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let p = x.first().map_or(0, Vec::len);
    let mut counts = [0usize; 2];
    let mut sums = [DVector::zeros(p), DVector::zeros(p)];
    for (xi, &yi) in x.iter().zip(y) {
        let c = usize::from(yi == 1);
        counts[c] += 1;
        for j in 0..p {
            sums[c][j] += xi[j];
        }
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::ClassStarvation(format!(
            "class sizes {} and {}; need at least 2 each",
            counts[0], counts[1]
        )));
    }
    let means = [&sums[0] / counts[0] as f64, &sums[1] / counts[1] as f64];
    let mut sw = DMatrix::zeros(p, p);
    for (xi, &yi) in x.iter().zip(y) {
        let c = usize::from(yi == 1);
        let d = DVector::from_fn(p, |j, _| xi[j] - means[c][j]);
        sw += &d * d.transpose();
    }
    Ok((sw, &means[1] - &means[0]))
}

/// Fisher criterion `J(w) = (wᵀ(x̄_1 − x̄_0))² / wᵀ S_W w`.
pub fn fisher_criterion(x: &[Vec<f64>], y: &[u8], w: &[f64]) -> Result<f64> {
    let (sw, diff) = scatter(x, y)?;
    let w = DVector::from_column_slice(w);
    let between = w.dot(&diff).powi(2);
    let within = (w.transpose() * &sw * &w)[(0, 0)];
    Ok(between / within)
}

/// A trained projected classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FldaState {
    pub weights: Vec<f64>,
    /// Projected class means `(z̄_0, z̄_1)`.
    pub class_means: [f64; 2],
    /// Projected class variances with denominator `n_k − 1`.
    pub class_variances: [f64; 2],
    /// Prior odds ratio.
    pub gamma: f64,
    /// Time interval `[from, to)` of the training sample, in seconds.
    pub trained_on: (f64, f64),
}

impl FldaState {
    /// Fits weights and projected class statistics on a labelled sample.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[u8],
        gamma: f64,
        ridge: Option<f64>,
        trained_on: (f64, f64),
    ) -> Result<Self> {
        let weights = fisher_weights(x, y, ridge)?;
        if !weights.iter().all(|w| w.is_finite()) || weights.iter().all(|w| *w == 0.0) {
            return Err(Error::ClassStarvation("degenerate discriminant direction".into()));
        }
        let mut z: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (xi, &yi) in x.iter().zip(y) {
            z[usize::from(yi == 1)].push(dot(&weights, xi));
        }
        let mut class_means = [0.0; 2];
        let mut class_variances = [0.0; 2];
        for k in 0..2 {
            let n = z[k].len() as f64;
            let m = z[k].iter().sum::<f64>() / n;
            let v = z[k].iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            if !(v > 0.0) {
                return Err(Error::ClassStarvation(format!(
                    "class {k} has zero projected variance"
                )));
            }
            class_means[k] = m;
            class_variances[k] = v;
        }
        Ok(Self {
            weights,
            class_means,
            class_variances,
            gamma,
            trained_on,
        })
    }

    pub fn project(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }

    pub fn classify(&self, x: &[f64]) -> u8 {
        classify_projected(self, self.project(x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Label 1 iff `(z−z̄_0)²/σ²_0 − (z−z̄_1)²/σ²_1 > log(γ σ²_1 / σ²_0)`.
pub fn classify_projected(state: &FldaState, z: f64) -> u8 {
    let [m0, m1] = state.class_means;
    let [v0, v1] = state.class_variances;
    let lhs = (z - m0).powi(2) / v0 - (z - m1).powi(2) / v1;
    let rhs = (state.gamma * v1 / v0).ln();
    u8::from(lhs > rhs)
}

pub fn project_classify(state: &FldaState, x: &[f64]) -> u8 {
    state.classify(x)
}

/// Nearest-neighbour label agreement of the merged train and test samples
/// under the projection distance `|wᵀ(x − x')|`.
pub fn separability_index(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    test_x: &[Vec<f64>],
    test_y: &[u8],
    w: &[f64],
) -> Option<f64> {
    let z: Vec<f64> = train_x.iter().chain(test_x).map(|x| dot(w, x)).collect();
    let labels: Vec<u8> = train_y.iter().chain(test_y).copied().collect();
    separability::agreement(&z, &labels).map(|a| a.value)
}

/// Batch and window geometry, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSchedule {
    pub baseline_end: f64,
    pub test_window: f64,
    /// Ascending candidate training-window lengths.
    pub candidate_lengths: Vec<f64>,
}

impl AdaptationSchedule {
    /// Hourly candidates `min_hours..=max_hours`.
    pub fn hourly(baseline_end_hours: f64, test_window_hours: f64, min_hours: u32, max_hours: u32) -> Self {
        Self {
            baseline_end: baseline_end_hours * 3600.0,
            test_window: test_window_hours * 3600.0,
            candidate_lengths: (min_hours..=max_hours).map(|h| h as f64 * 3600.0).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_window > 0.0) {
            return Err(Error::Config("test window must be positive".into()));
        }
        if self.candidate_lengths.is_empty() {
            return Err(Error::Config("no candidate training lengths".into()));
        }
        if self.candidate_lengths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("candidate lengths must be strictly ascending".into()));
        }
        if self.candidate_lengths[0] < self.test_window {
            return Err(Error::Config(
                "candidate lengths must be at least the test window".into(),
            ));
        }
        Ok(())
    }

    /// Index of the batch containing time `t`, or `None` inside the baseline.
    pub fn batch_of(&self, t: f64) -> Option<usize> {
        (t >= self.baseline_end).then(|| ((t - self.baseline_end) / self.test_window).floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDiagnostic {
    pub batch_start: f64,
    pub chosen_length: Option<f64>,
    pub si: Option<f64>,
    pub carried_forward: bool,
    /// Present epochs classified in this batch.
    pub classified: usize,
    /// Classifier applied to this batch.
    pub state: Option<FldaState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTraining {
    pub labels: LabelSequence,
    pub batches: Vec<BatchDiagnostic>,
}

impl SelfTraining {
    /// Writes `batch_start,chosen_d,si` (hours for `chosen_d`).
    pub fn write_diagnostics(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["batch_start", "chosen_d", "si"])?;
        for b in &self.batches {
            w.write_record([
                b.batch_start.to_string(),
                b.chosen_length.map(|d| (d / 3600.0).to_string()).unwrap_or_default(),
                b.si.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// The classifier in force for each batch, carrying the last one forward
    /// over batches that had none.
    pub fn batch_states(&self) -> Vec<Option<FldaState>> {
        let mut last = None;
        self.batches
            .iter()
            .map(|b| {
                if b.state.is_some() {
                    last = b.state.clone();
                }
                last.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainParams {
    pub gamma: f64,
    pub ridge: Option<f64>,
    /// Smallest share of a candidate window each class must hold for the
    /// window to be scored; thinner windows count as class-starved.
    pub min_class_fraction: f64,
}

impl Default for SelfTrainParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            ridge: None,
            min_class_fraction: 0.1,
        }
    }
}

fn balanced(labels: &[u8], min_fraction: f64) -> bool {
    let n = labels.len() as f64;
    let ones = labels.iter().filter(|&&y| y == 1).count() as f64;
    ones >= min_fraction * n && n - ones >= min_fraction * n
}

/// Gradual self-training over the post-baseline stream.
///
/// `epochs` should already have abnormal epochs blanked out. `baseline`
/// supplies labels for epochs starting before `schedule.baseline_end`; those
/// labels are copied through untouched. Each batch `[t, t + Δ)` tries every
/// candidate window `[t − d, t)` (skipping windows that would start before
/// the first epoch or that lack two points per class), classifies the batch,
/// and keeps the candidate with the highest separability index; ties go to
/// the shorter window.
pub fn gradual_self_train(
    epochs: &EpochFeatureMatrix,
    features: &[usize],
    baseline: &LabelSequence,
    schedule: &AdaptationSchedule,
    params: SelfTrainParams,
) -> Result<SelfTraining> {
    schedule.validate()?;
    if !(0.0..0.5).contains(&params.min_class_fraction) {
        return Err(Error::Config(format!(
            "min_class_fraction must lie in [0, 0.5), got {}",
            params.min_class_fraction
        )));
    }
    let n = epochs.len();
    if baseline.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: baseline.len(),
        });
    }
    let Some(first) = epochs.epochs.first().map(|e| e.start) else {
        return Err(Error::EmptyResult);
    };
    if schedule.baseline_end - first < schedule.candidate_lengths[0] {
        return Err(Error::Config(format!(
            "baseline spans {:.1} h, shorter than the smallest training window {:.1} h",
            (schedule.baseline_end - first) / 3600.0,
            schedule.candidate_lengths[0] / 3600.0
        )));
    }

    let starts = epochs.starts();
    let rows: Vec<Option<Vec<f64>>> = (0..n).map(|i| epochs.row(i, features)).collect();
    let mut labels = LabelSequence::empty(epochs.epoch_length, starts.clone(), Tag::Missing);
    for i in 0..n {
        if starts[i] < schedule.baseline_end {
            if let (Some(l), Some(_)) = (baseline.labels[i], &rows[i]) {
                labels.set(i, l, Tag::HmmBaseline);
            }
        }
    }

    let Some(last_start) = starts.last().copied() else {
        return Err(Error::EmptyResult);
    };
    let mut batches = Vec::new();
    let mut last_state: Option<FldaState> = None;
    let mut t = schedule.baseline_end;
    let mut lo = starts.partition_point(|s| *s < t);
    while t <= last_start {
        let t_end = t + schedule.test_window;
        let hi = starts.partition_point(|s| *s < t_end);
        let test_idx: Vec<usize> = (lo..hi).filter(|&i| rows[i].is_some()).collect();
        let test_x: Vec<Vec<f64>> = test_idx.iter().map(|&i| rows[i].clone().unwrap()).collect();

        let mut best: Option<(f64, f64, FldaState, Vec<u8>)> = None;
        if !test_idx.is_empty() {
            for &d in &schedule.candidate_lengths {
                if t - d < first - 1e-9 {
                    continue;
                }
                let a = starts.partition_point(|s| *s < t - d - 1e-9);
                let (train_x, train_y): (Vec<Vec<f64>>, Vec<u8>) = (a..lo)
                    .filter_map(|i| Some((rows[i].clone()?, labels.labels[i]?)))
                    .unzip();
                if !balanced(&train_y, params.min_class_fraction) {
                    continue;
                }
                let state = match FldaState::fit(&train_x, &train_y, params.gamma, params.ridge, (t - d, t)) {
                    Ok(s) => s,
                    Err(Error::ClassStarvation(_)) => continue,
                    Err(e) => return Err(e),
                };
                let pred: Vec<u8> = test_x.iter().map(|x| state.classify(x)).collect();
                let si = separability_index(&train_x, &train_y, &test_x, &pred, &state.weights)
                    .unwrap_or(0.0);
                if best.as_ref().is_none_or(|b| si > b.1) {
                    best = Some((d, si, state, pred));
                }
            }
        }

        let mut diag = BatchDiagnostic {
            batch_start: t,
            chosen_length: None,
            si: None,
            carried_forward: false,
            classified: test_idx.len(),
            state: None,
        };
        match best {
            Some((d, si, state, pred)) => {
                for (&i, &l) in test_idx.iter().zip(&pred) {
                    labels.set(i, l, Tag::Flda);
                }
                diag.chosen_length = Some(d);
                diag.si = Some(si);
                diag.state = Some(state.clone());
                last_state = Some(state);
            }
            None if !test_idx.is_empty() => {
                if let Some(state) = &last_state {
                    warn!("batch at {t:.0} s: every candidate window is class-starved; carrying forward");
                    for (&i, x) in test_idx.iter().zip(&test_x) {
                        labels.set(i, state.classify(x), Tag::CarriedForward);
                    }
                    diag.carried_forward = true;
                    diag.state = Some(state.clone());
                } else {
                    warn!("batch at {t:.0} s: class-starved with no earlier classifier; left unlabeled");
                }
            }
            None => {}
        }
        batches.push(diag);
        t = t_end;
        lo = hi;
    }

    Ok(SelfTraining { labels, batches })
}

/// Applies recorded per-batch classifiers to another stream with the same
/// batch geometry. Baseline epochs take `baseline` labels; batches beyond
/// the recorded ones reuse the last classifier.
pub fn replay(
    states: &[Option<FldaState>],
    epochs: &EpochFeatureMatrix,
    features: &[usize],
    baseline: &LabelSequence,
    schedule: &AdaptationSchedule,
) -> Result<LabelSequence> {
    let n = epochs.len();
    if baseline.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: baseline.len(),
        });
    }
    let fallback = states.iter().rev().find_map(|s| s.as_ref());
    let mut labels = LabelSequence::empty(epochs.epoch_length, epochs.starts(), Tag::Missing);
    for i in 0..n {
        let Some(x) = epochs.row(i, features) else { continue };
        match schedule.batch_of(epochs.epochs[i].start) {
            None => {
                if let Some(l) = baseline.labels[i] {
                    labels.set(i, l, Tag::HmmBaseline);
                }
            }
            Some(b) => {
                let state = states.get(b).and_then(|s| s.as_ref()).or(fallback);
                if let Some(state) = state {
                    labels.set(i, state.classify(&x), Tag::Flda);
                }
            }
        }
    }
    Ok(labels)
}
