//! Raw sample streams, epoch aggregation, subject gating and SWSI-based
//! feature selection.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::separability::{self, Agreement};
use crate::stats;

pub const STATISTICS: [&str; 3] = ["MEAN", "MED", "SD"];

/// Timestamped multi-channel samples. Absent values are missing samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSeries {
    pub subject_id: String,
    pub channel_names: Vec<String>,
    /// Seconds since study start, strictly increasing.
    pub timestamps: Vec<f64>,
    /// One row per timestamp, one slot per channel.
    pub values: Vec<Vec<Option<f64>>>,
    /// Nominal per-channel sampling rate in Hz.
    pub sample_rates: Vec<f64>,
}

impl MultiChannelSeries {
    pub fn new(
        subject_id: impl Into<String>,
        channel_names: Vec<String>,
        timestamps: Vec<f64>,
        values: Vec<Vec<Option<f64>>>,
        sample_rates: Vec<f64>,
    ) -> Result<Self> {
        let series = Self {
            subject_id: subject_id.into(),
            channel_names,
            timestamps,
            values,
            sample_rates,
        };
        series.validate()?;
        Ok(series)
    }

    /// Builds a series and infers each channel's rate from the median gap
    /// between its present samples.
    pub fn with_inferred_rates(
        subject_id: impl Into<String>,
        channel_names: Vec<String>,
        timestamps: Vec<f64>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let p = channel_names.len();
        let mut rates = Vec::with_capacity(p);
        for c in 0..p {
            let times: Vec<f64> = timestamps
                .iter()
                .zip(&values)
                .filter(|(_, row)| row.get(c).copied().flatten().is_some())
                .map(|(t, _)| *t)
                .collect();
            let gaps: Vec<f64> = times
                .windows(2)
                .map(|w| w[1] - w[0])
                .filter(|g| *g > 0.0)
                .collect();
            let rate = stats::median(&gaps).map(|g| 1.0 / g).unwrap_or(1.0);
            rates.push(rate);
        }
        Self::new(subject_id, channel_names, timestamps, values, rates)
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Writes `timestamp,<channel>...`; missing samples are empty cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.timestamps.iter().zip(&self.values) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let p = self.channel_names.len();
        if p == 0 {
            return Err(Error::Validation("series needs at least one channel".into()));
        }
        if self.values.len() != self.timestamps.len() {
            return Err(Error::Validation(format!(
                "{} timestamps but {} sample rows",
                self.timestamps.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|row| row.len() != p) {
            return Err(Error::Validation(format!(
                "sample row {i} has {} slots, expected {p}",
                self.values[i].len()
            )));
        }
        if self.sample_rates.len() != p || self.sample_rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Validation(
                "need one positive sample rate per channel".into(),
            ));
        }
        if let Some(i) = self
            .timestamps
            .windows(2)
            .position(|w| !(w[1] > w[0]))
        {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at row {} ({} then {})",
                i + 1,
                self.timestamps[i],
                self.timestamps[i + 1]
            )));
        }
        Ok(())
    }
}

/// Reads `timestamp,<channel>,...` CSV. An empty `channels` list loads every
/// non-timestamp column.
pub fn load_series(path: &Path, channels: &[&str]) -> Result<MultiChannelSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let ts_col = headers
        .iter()
        .position(|h| h == "timestamp")
        .ok_or_else(|| parse_err(1, "header has no `timestamp` column".into()))?;
    let names: Vec<String> = if channels.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        channels.iter().map(|c| c.to_string()).collect()
    };
    let cols: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(1, format!("header has no `{name}` column")))
        })
        .collect::<Result<_>>()?;

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let t: f64 = record
            .get(ts_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "malformed timestamp".into()))?;
        let mut row = Vec::with_capacity(cols.len());
        for (&col, name) in cols.iter().zip(&names) {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                row.push(None);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(line, format!("malformed value `{cell}` in {name}")))?;
                row.push(Some(v));
            }
        }
        timestamps.push(t);
        values.push(row);
    }
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    MultiChannelSeries::with_inferred_rates(subject, names, timestamps, values)
}

/// Features of one epoch. `values` are all absent when the epoch did not
/// reach the availability threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub start: f64,
    pub values: Vec<Option<f64>>,
    pub availability: f64,
}

impl Epoch {
    pub fn is_present(&self) -> bool {
        self.values.iter().any(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochFeatureMatrix {
    pub subject_id: String,
    /// Seconds.
    pub epoch_length: f64,
    pub feature_names: Vec<String>,
    pub epochs: Vec<Epoch>,
}

impl EpochFeatureMatrix {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn require_feature(&self, name: &str) -> Result<usize> {
        self.feature_index(name)
            .ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.feature_index(name)?;
        Some(self.epochs.iter().map(|e| e.values[j]).collect())
    }

    pub fn starts(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.start).collect()
    }

    /// Row `i` restricted to `indices`, if every requested value is present.
    pub fn row(&self, i: usize, indices: &[usize]) -> Option<Vec<f64>> {
        indices.iter().map(|&j| self.epochs[i].values[j]).collect()
    }

    /// Builds a matrix from already-aggregated feature rows on a regular grid.
    pub fn from_rows(
        subject_id: impl Into<String>,
        epoch_length: f64,
        start0: f64,
        feature_names: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Self {
        let epochs = rows
            .into_iter()
            .enumerate()
            .map(|(i, values)| {
                let availability = if values.iter().any(Option::is_some) { 1.0 } else { 0.0 };
                Epoch {
                    start: start0 + i as f64 * epoch_length,
                    values,
                    availability,
                }
            })
            .collect();
        Self {
            subject_id: subject_id.into(),
            epoch_length,
            feature_names,
            epochs,
        }
    }

    /// Writes `epoch_start,availability,<feature>...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["epoch_start".to_string(), "availability".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut rec = vec![e.start.to_string(), e.availability.to_string()];
            rec.extend(
                e.values
                    .iter()
                    .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Feature name for a channel statistic, e.g. `HR_MED`.
pub fn feature_name(channel: &str, stat: &str) -> String {
    format!("{channel}_{stat}")
}

/// Aggregates samples into fixed-length epochs with MEAN, MED and SD per
/// channel.
///
/// Epochs are anchored at the first timestamp rounded down to a multiple of
/// `epoch_length`; only complete epochs inside the sampled span are
/// produced. Availability is the minimum over channels of present samples
/// divided by the nominal count, capped at 1.
pub fn epochize(
    series: &MultiChannelSeries,
    epoch_length: f64,
    availability_threshold: f64,
) -> Result<EpochFeatureMatrix> {
    if !(epoch_length > 0.0) {
        return Err(Error::Config("epoch length must be positive".into()));
    }
    if series.is_empty() {
        return Err(Error::EmptyResult);
    }
    let p = series.channel_count();
    let first = series.timestamps[0];
    let last = *series.timestamps.last().unwrap();
    let anchor = (first / epoch_length).floor() * epoch_length;
    let min_period = series
        .sample_rates
        .iter()
        .map(|r| 1.0 / r)
        .fold(f64::INFINITY, f64::min);
    let span_end = last + min_period;
    let n_epochs = ((span_end - anchor) / epoch_length + 1e-9).floor() as usize;
    if n_epochs == 0 {
        return Err(Error::EmptyResult);
    }

    let mut buckets: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); p]; n_epochs];
    for (t, row) in series.timestamps.iter().zip(&series.values) {
        let e = ((t - anchor) / epoch_length).floor() as usize;
        if e >= n_epochs {
            continue;
        }
        for (c, v) in row.iter().enumerate() {
            if let Some(v) = v {
                buckets[e][c].push(*v);
            }
        }
    }

    let mut names = Vec::with_capacity(3 * p);
    for ch in &series.channel_names {
        for stat in STATISTICS {
            names.push(feature_name(ch, stat));
        }
    }

    let epochs = buckets
        .into_iter()
        .enumerate()
        .map(|(e, channels)| {
            let availability = channels
                .iter()
                .zip(&series.sample_rates)
                .map(|(samples, rate)| {
                    let expected = (rate * epoch_length).round().max(1.0);
                    (samples.len() as f64 / expected).min(1.0)
                })
                .fold(1.0, f64::min);
            let values = if availability >= availability_threshold {
                channels
                    .iter()
                    .flat_map(|s| [stats::mean(s), stats::median(s), stats::sample_sd(s)])
                    .collect()
            } else {
                vec![None; 3 * p]
            };
            Epoch {
                start: anchor + e as f64 * epoch_length,
                values,
                availability,
            }
        })
        .collect();

    Ok(EpochFeatureMatrix {
        subject_id: series.subject_id.clone(),
        epoch_length,
        feature_names: names,
        epochs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectGate {
    pub subject_id: String,
    pub missing_proportion: f64,
    pub abnormal_proportion: f64,
    pub admitted: bool,
}

pub const MAX_MISSING: f64 = 0.4;
pub const MAX_ABNORMAL: f64 = 0.4;

/// Missingness is measured over all epochs, abnormality over the present
/// ones.
pub fn gate_subject(epochs: &EpochFeatureMatrix, abnormal_mask: &[bool]) -> Result<SubjectGate> {
    gate_subject_with(epochs, abnormal_mask, MAX_MISSING, MAX_ABNORMAL)
}

pub fn gate_subject_with(
    epochs: &EpochFeatureMatrix,
    abnormal_mask: &[bool],
    max_missing: f64,
    max_abnormal: f64,
) -> Result<SubjectGate> {
    if abnormal_mask.len() != epochs.len() {
        return Err(Error::DimensionMismatch {
            expected: epochs.len(),
            got: abnormal_mask.len(),
        });
    }
    let total = epochs.len();
    let present: Vec<usize> = (0..total).filter(|&i| epochs.epochs[i].is_present()).collect();
    let missing = total - present.len();
    let abnormal = present.iter().filter(|&&i| abnormal_mask[i]).count();
    let missing_proportion = if total == 0 { 1.0 } else { missing as f64 / total as f64 };
    let abnormal_proportion = if present.is_empty() {
        0.0
    } else {
        abnormal as f64 / present.len() as f64
    };
    Ok(SubjectGate {
        subject_id: epochs.subject_id.clone(),
        missing_proportion,
        abnormal_proportion,
        admitted: missing_proportion <= max_missing && abnormal_proportion <= max_abnormal,
    })
}

/// Half-open daily clock interval `[start, end)` in hours; wraps midnight
/// when `end < start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockWindow {
    pub start_hour: f64,
    pub end_hour: f64,
}

impl ClockWindow {
    pub const fn new(start_hour: f64, end_hour: f64) -> Self {
        Self {
            start_hour,
            end_hour,
        }
    }

    pub fn contains(&self, hour: f64) -> bool {
        let h = hour.rem_euclid(24.0);
        if self.start_hour <= self.end_hour {
            h >= self.start_hour && h < self.end_hour
        } else {
            h >= self.start_hour || h < self.end_hour
        }
    }
}

/// Clock hour of a time given in seconds since study start.
pub fn clock_hour(seconds: f64, clock_offset_hours: f64) -> f64 {
    (seconds / 3600.0 + clock_offset_hours).rem_euclid(24.0)
}

/// Sleep/wake separability index of one scalar feature.
///
/// Epochs starting inside `sleep_window` get putative label 1, those inside
/// `wake_window` label 0; the index is the fraction of labelled epochs whose
/// nearest neighbour in feature value carries the same label.
pub fn swsi(
    values: &[Option<f64>],
    starts: &[f64],
    clock_offset_hours: f64,
    sleep_window: ClockWindow,
    wake_window: ClockWindow,
) -> Result<Agreement> {
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (v, &t) in values.iter().zip(starts) {
        let Some(v) = v else { continue };
        let hour = clock_hour(t, clock_offset_hours);
        if sleep_window.contains(hour) {
            xs.push(*v);
            labels.push(1u8);
        } else if wake_window.contains(hour) {
            xs.push(*v);
            labels.push(0u8);
        }
    }
    let n_sleep = labels.iter().filter(|&&l| l == 1).count();
    if n_sleep == 0 || n_sleep == labels.len() {
        return Err(Error::InsufficientData(
            "a putative window captured no available epochs".into(),
        ));
    }
    Ok(separability::agreement(&xs, &labels).expect("two windows give at least two points"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionCriteria {
    pub sleep_window: ClockWindow,
    pub wake_window: ClockWindow,
    pub clock_offset_hours: f64,
    pub swsi_threshold: f64,
    pub subject_fraction: f64,
    pub correlation_dedup: f64,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            sleep_window: ClockWindow::new(2.0, 5.0),
            wake_window: ClockWindow::new(19.0, 22.0),
            clock_offset_hours: 0.0,
            swsi_threshold: 0.7,
            subject_fraction: 0.75,
            correlation_dedup: 0.95,
        }
    }
}

/// Per-feature SWSI outcome across subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSwsi {
    pub feature: String,
    /// One entry per subject; `None` when the index was undefined or degenerate.
    pub per_subject: Vec<Option<f64>>,
    pub pass_fraction: f64,
    pub lower_quartile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub selected: Vec<String>,
    /// Features that passed the SWSI rule but were dropped as correlated
    /// with a better one.
    pub dropped_correlated: Vec<String>,
    pub report: Vec<FeatureSwsi>,
}

/// Keeps features whose SWSI exceeds the threshold for enough subjects, then
/// drops the weaker member (lower 25% SWSI quantile) of every highly
/// correlated pair.
pub fn select_features(
    subjects: &[&EpochFeatureMatrix],
    criteria: &SelectionCriteria,
) -> Result<FeatureSelection> {
    let Some(first) = subjects.first() else {
        return Err(Error::InsufficientData("no admitted subjects".into()));
    };
    let names = first.feature_names.clone();
    let mut report = Vec::with_capacity(names.len());
    for name in &names {
        let mut per_subject = Vec::with_capacity(subjects.len());
        for s in subjects {
            let value = s.column(name).and_then(|col| {
                swsi(
                    &col,
                    &s.starts(),
                    criteria.clock_offset_hours,
                    criteria.sleep_window,
                    criteria.wake_window,
                )
                .ok()
                .filter(|a| !a.degenerate)
                .map(|a| a.value)
            });
            per_subject.push(value);
        }
        let passes = per_subject
            .iter()
            .filter(|v| v.is_some_and(|x| x > criteria.swsi_threshold))
            .count();
        let available: Vec<f64> = per_subject.iter().flatten().copied().collect();
        report.push(FeatureSwsi {
            feature: name.clone(),
            pass_fraction: passes as f64 / subjects.len() as f64,
            lower_quartile: stats::quantile(&available, 0.25),
            per_subject,
        });
    }

    let mut passing: Vec<&FeatureSwsi> = report
        .iter()
        .filter(|f| f.pass_fraction >= criteria.subject_fraction)
        .collect();
    if passing.is_empty() {
        let summary = report
            .iter()
            .map(|f| format!("{}={:.2}", f.feature, f.pass_fraction))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::SelectionEmpty { report: summary });
    }
    // Strongest lower quartile first; stable sort keeps column order on ties.
    passing.sort_by(|a, b| {
        b.lower_quartile
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.lower_quartile.unwrap_or(f64::NEG_INFINITY))
    });

    let mut kept: Vec<&str> = Vec::new();
    let mut dropped = Vec::new();
    for candidate in passing {
        let correlated = kept.iter().any(|k| {
            pooled_correlation(subjects, k, &candidate.feature)
                .is_some_and(|r| r.abs() > criteria.correlation_dedup)
        });
        if correlated {
            dropped.push(candidate.feature.clone());
        } else {
            kept.push(&candidate.feature);
        }
    }
    // Report the selection in original column order.
    let selected = names
        .iter()
        .filter(|n| kept.contains(&n.as_str()))
        .cloned()
        .collect();
    Ok(FeatureSelection {
        selected,
        dropped_correlated: dropped,
        report,
    })
}

/// Pearson correlation of two features pooled over every subject's epochs
/// where both are present.
fn pooled_correlation(subjects: &[&EpochFeatureMatrix], a: &str, b: &str) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in subjects {
        let (Some(ia), Some(ib)) = (s.feature_index(a), s.feature_index(b)) else {
            continue;
        };
        for e in &s.epochs {
            if let (Some(x), Some(y)) = (e.values[ia], e.values[ib]) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    stats::pearson(&xs, &ys)
}

/// Column lookup table used by callers that address features by name.
pub fn feature_indices(matrix: &EpochFeatureMatrix, names: &[String]) -> Result<Vec<usize>> {
    let lookup: HashMap<&str, usize> = matrix
        .feature_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    names
        .iter()
        .map(|n| {
            lookup
                .get(n.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown feature `{n}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn series_1hz(values: Vec<Vec<Option<f64>>>, channels: &[&str]) -> MultiChannelSeries {
        let n = values.len();
        MultiChannelSeries::new(
            "s",
            channels.iter().map(|c| c.to_string()).collect(),
            (0..n).map(|i| i as f64).collect(),
            values,
            vec![1.0; channels.len()],
        )
        .unwrap()
    }

    #[test]
    fn load_three_row_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "timestamp,HR,ACC\n0,60,0.1\n1,61,0.2\n2,62,0.3").unwrap();
        let s = load_series(f.path(), &["HR", "ACC"]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.channel_count(), 2);
        assert_eq!(s.values[2], vec![Some(62.0), Some(0.3)]);
    }

    #[test]
    fn empty_cell_is_missing() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "timestamp,HR,ACC\n0,60,0.1\n1,,0.2\n2,62,0.3").unwrap();
        let s = load_series(f.path(), &["HR", "ACC"]).unwrap();
        assert_eq!(s.values[1], vec![None, Some(0.2)]);
        assert_eq!(s.values[0], vec![Some(60.0), Some(0.1)]);
    }

    #[test]
    fn shuffled_timestamps_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "timestamp,HR\n0,60\n2,61\n1,62").unwrap();
        let err = load_series(f.path(), &["HR"]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "timestamp,HR\n0,60\n1,abc").unwrap();
        match load_series(f.path(), &["HR"]).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn constant_channel_features() {
        let s = series_1hz(vec![vec![Some(7.5)]; 10], &["HR"]);
        let m = epochize(&s, 10.0, 0.9).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.feature_names, vec!["HR_MEAN", "HR_MED", "HR_SD"]);
        assert_eq!(m.epochs[0].values, vec![Some(7.5), Some(7.5), Some(0.0)]);
    }

    #[test]
    fn one_two_three_four() {
        let s = series_1hz((1..=4).map(|v| vec![Some(v as f64)]).collect(), &["X"]);
        let m = epochize(&s, 4.0, 0.9).unwrap();
        let v = &m.epochs[0].values;
        assert_abs_diff_eq!(v[0].unwrap(), 2.5);
        assert_abs_diff_eq!(v[1].unwrap(), 2.5);
        assert_abs_diff_eq!(v[2].unwrap(), 1.2909944487358056, epsilon = 1e-12);
    }

    #[test]
    fn low_availability_epoch_is_absent() {
        // 20 one-second slots, 3 missing: 85% available.
        let mut rows: Vec<Vec<Option<f64>>> = (0..20).map(|i| vec![Some(i as f64)]).collect();
        for i in [3, 9, 15] {
            rows[i] = vec![None];
        }
        let s = series_1hz(rows, &["X"]);
        let m = epochize(&s, 20.0, 0.9).unwrap();
        assert_abs_diff_eq!(m.epochs[0].availability, 0.85);
        assert!(m.epochs[0].values.iter().all(Option::is_none));
    }

    #[test]
    fn epochize_anchors_on_epoch_boundary() {
        let s = MultiChannelSeries::new(
            "s",
            vec!["X".into()],
            (0..30).map(|i| 25.0 + i as f64).collect(),
            vec![vec![Some(1.0)]; 30],
            vec![1.0],
        )
        .unwrap();
        let m = epochize(&s, 10.0, 0.0).unwrap();
        assert_eq!(m.epochs[0].start, 20.0);
        assert!(m.epochs.windows(2).all(|w| w[1].start - w[0].start == 10.0));
    }

    #[test]
    fn empty_series_is_empty_result() {
        let s = MultiChannelSeries::new("s", vec!["X".into()], vec![], vec![], vec![1.0]).unwrap();
        assert!(matches!(epochize(&s, 10.0, 0.9), Err(Error::EmptyResult)));
        let short = series_1hz(vec![vec![Some(1.0)]; 3], &["X"]);
        assert!(matches!(epochize(&short, 600.0, 0.9), Err(Error::EmptyResult)));
    }

    fn matrix_with_presence(present: &[bool]) -> EpochFeatureMatrix {
        EpochFeatureMatrix::from_rows(
            "s",
            600.0,
            0.0,
            vec!["X".into()],
            present
                .iter()
                .map(|&p| vec![if p { Some(1.0) } else { None }])
                .collect(),
        )
    }

    #[test]
    fn gate_admission_rules() {
        let full = matrix_with_presence(&[true; 20]);
        assert!(gate_subject(&full, &[false; 20]).unwrap().admitted);

        let mut presence = vec![true; 20];
        presence[..9].iter_mut().for_each(|p| *p = false);
        let sparse = matrix_with_presence(&presence);
        let g = gate_subject(&sparse, &[false; 20]).unwrap();
        assert_abs_diff_eq!(g.missing_proportion, 0.45);
        assert!(!g.admitted);

        // 30% missing, 41% of the remaining 100 abnormal.
        let mut presence = vec![true; 143];
        presence[..43].iter_mut().for_each(|p| *p = false);
        let m = matrix_with_presence(&presence);
        let mut mask = vec![false; 143];
        mask[43..84].iter_mut().for_each(|a| *a = true);
        let g = gate_subject(&m, &mask).unwrap();
        assert_abs_diff_eq!(g.abnormal_proportion, 0.41);
        assert!(!g.admitted);
    }

    #[test]
    fn clock_window_wraps_midnight() {
        let w = ClockWindow::new(22.0, 5.0);
        assert!(w.contains(23.0));
        assert!(w.contains(1.0));
        assert!(!w.contains(12.0));
        assert!(!w.contains(5.0));
    }

    fn two_window_matrix(sleep: &[f64], wake: &[f64]) -> EpochFeatureMatrix {
        // Sleep epochs at 03:00.., wake epochs at 20:00..
        let mut epochs = Vec::new();
        for (i, v) in sleep.iter().enumerate() {
            epochs.push(Epoch {
                start: 3.0 * 3600.0 + 60.0 * i as f64,
                values: vec![Some(*v)],
                availability: 1.0,
            });
        }
        for (i, v) in wake.iter().enumerate() {
            epochs.push(Epoch {
                start: 20.0 * 3600.0 + 60.0 * i as f64,
                values: vec![Some(*v)],
                availability: 1.0,
            });
        }
        EpochFeatureMatrix {
            subject_id: "s".into(),
            epoch_length: 60.0,
            feature_names: vec!["X".into()],
            epochs,
        }
    }

    #[test]
    fn swsi_perfect_separation() {
        let m = two_window_matrix(&[0.0, 0.1], &[10.0, 10.1]);
        let c = SelectionCriteria::default();
        let a = swsi(&m.column("X").unwrap(), &m.starts(), 0.0, c.sleep_window, c.wake_window)
            .unwrap();
        assert_eq!(a.value, 1.0);
        assert!(!a.degenerate);
    }

    #[test]
    fn swsi_interleaved_matches_enumeration() {
        // Sleep {0,2,4,6}, wake {1,3,5,7}: every point is 1 away from both
        // neighbours. Brute-force enumeration with lowest-index tie-break.
        let sleep = [0.0, 2.0, 4.0, 6.0];
        let wake = [1.0, 3.0, 5.0, 7.0];
        let m = two_window_matrix(&sleep, &wake);
        let c = SelectionCriteria::default();
        let got = swsi(&m.column("X").unwrap(), &m.starts(), 0.0, c.sleep_window, c.wake_window)
            .unwrap()
            .value;

        let xs: Vec<f64> = sleep.iter().chain(&wake).copied().collect();
        let ls: Vec<u8> = [1, 1, 1, 1, 0, 0, 0, 0].to_vec();
        let mut agree = 0;
        for i in 0..xs.len() {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..xs.len() {
                let d = (xs[i] - xs[j]).abs();
                if j != i && d < best.0 {
                    best = (d, j);
                }
            }
            agree += usize::from(ls[i] == ls[best.1]);
        }
        // Every nearest neighbour sits one step away on the other side.
        assert_eq!(agree, 0);
        assert_eq!(got, agree as f64 / 8.0);
    }

    #[test]
    fn swsi_identical_values_degenerate() {
        let m = two_window_matrix(&[1.0, 1.0], &[1.0, 1.0]);
        let c = SelectionCriteria::default();
        let a = swsi(&m.column("X").unwrap(), &m.starts(), 0.0, c.sleep_window, c.wake_window)
            .unwrap();
        assert!(a.degenerate);
    }

    #[test]
    fn swsi_requires_both_windows() {
        let m = two_window_matrix(&[1.0, 2.0], &[]);
        let c = SelectionCriteria::default();
        let r = swsi(&m.column("X").unwrap(), &m.starts(), 0.0, c.sleep_window, c.wake_window);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    fn selection_subject(seed: u64) -> EpochFeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Two days of 10-minute epochs; feature A separates sleep from wake,
        // B = 3A + 1 (affine copy with a little noise), C is noise.
        let mut rows = Vec::new();
        for i in 0..288 {
            let hour = (i as f64 / 6.0) % 24.0;
            let asleep = hour < 6.0;
            let a = if asleep { 50.0 } else { 80.0 } + rng.random_range(-3.0..3.0);
            let b = 3.0 * a + 1.0 + rng.random_range(-0.5..0.5);
            let c: f64 = rng.random_range(0.0..1.0);
            rows.push(vec![Some(a), Some(b), Some(c)]);
        }
        EpochFeatureMatrix::from_rows(
            format!("s{seed}"),
            600.0,
            0.0,
            vec!["A".into(), "B".into(), "C".into()],
            rows,
        )
    }

    #[test]
    fn selection_keeps_separating_feature_and_dedups() {
        let subjects: Vec<EpochFeatureMatrix> = (0..4).map(selection_subject).collect();
        let refs: Vec<&EpochFeatureMatrix> = subjects.iter().collect();
        let sel = select_features(&refs, &SelectionCriteria::default()).unwrap();
        assert_eq!(sel.selected.len(), 1);
        assert_eq!(sel.dropped_correlated.len(), 1);
        assert!(!sel.selected.contains(&"C".to_string()));
        // The dropped feature has the lower (or equal) 25% quantile.
        let q = |n: &str| {
            sel.report
                .iter()
                .find(|f| f.feature == n)
                .unwrap()
                .lower_quartile
                .unwrap()
        };
        assert!(q(&sel.selected[0]) >= q(&sel.dropped_correlated[0]));
    }

    #[test]
    fn selection_empty_reports() {
        let subjects: Vec<EpochFeatureMatrix> = (0..2).map(selection_subject).collect();
        let refs: Vec<&EpochFeatureMatrix> = subjects.iter().collect();
        let criteria = SelectionCriteria {
            swsi_threshold: 1.1,
            ..Default::default()
        };
        match select_features(&refs, &criteria).unwrap_err() {
            Error::SelectionEmpty { report } => assert!(report.contains("A=")),
            other => panic!("unexpected {other}"),
        }
    }
}
