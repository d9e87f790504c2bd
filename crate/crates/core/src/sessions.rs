//! Label smoothing, session construction, day alignment and session-level
//! features.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{clock_hour, EpochFeatureMatrix};
use crate::labels::{LabelSequence, Tag, SLEEP, WAKE};
use crate::stats;

/// Order-`window` binary median filter followed by removal of short sleep.
///
/// Only labelled epochs take part; excluded epochs are skipped over. Near
/// the ends the window shrinks symmetrically so it always has odd length.
/// The filter is applied until the stream stops changing (a median root),
/// then every sleep run shorter than `min_sleep_minutes` becomes wake.
pub fn smooth_labels(labels: &LabelSequence, window: usize, min_sleep_minutes: f64) -> LabelSequence {
    assert!(window % 2 == 1, "median window must be odd");
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels.labels[i].is_some()).collect();
    let mut values: Vec<u8> = idx.iter().map(|&i| labels.labels[i].unwrap()).collect();

    // Binary median roots are reached in far fewer passes than this cap.
    for _ in 0..values.len().max(1) {
        let next = median_pass(&values, window / 2);
        if next == values {
            break;
        }
        values = next;
    }

    let min_epochs = min_sleep_minutes * 60.0 / labels.epoch_length;
    let mut start = 0;
    while start < values.len() {
        let mut end = start;
        while end < values.len() && values[end] == values[start] {
            end += 1;
        }
        if values[start] == SLEEP && ((end - start) as f64) < min_epochs - 1e-9 {
            values[start..end].iter_mut().for_each(|v| *v = WAKE);
        }
        start = end;
    }

    let mut out = labels.clone();
    for (&i, &v) in idx.iter().zip(&values) {
        out.labels[i] = Some(v);
    }
    out
}

fn median_pass(values: &[u8], half: usize) -> Vec<u8> {
    let n = values.len();
    let mut prefix = vec![0usize; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + usize::from(values[i] == SLEEP);
    }
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let ones = prefix[i + h + 1] - prefix[i - h];
            u8::from(2 * ones > 2 * h + 1)
        })
        .collect()
}

/// Gives each index in `reinserted` the label of the nearest labelled epoch
/// before it (or after it, when none precedes).
pub fn reinsert(labels: &mut LabelSequence, reinserted: &[usize]) {
    let mut order = reinserted.to_vec();
    order.sort_unstable();
    for i in order {
        let before = (0..i).rev().find_map(|j| labels.labels[j]);
        let label = match before {
            Some(l) => l,
            None => match (i + 1..labels.len()).find_map(|j| labels.labels[j]) {
                Some(l) => {
                    warn!("reinserted epoch {i} precedes every labelled epoch; using the next label");
                    l
                }
                None => {
                    warn!("reinserted epoch {i} has no labelled neighbour; left excluded");
                    continue;
                }
            },
        };
        labels.set(i, label, Tag::Reinserted);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Wake,
    Sleep,
}

impl SessionKind {
    pub fn from_label(l: u8) -> Self {
        if l == SLEEP {
            SessionKind::Sleep
        } else {
            SessionKind::Wake
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionKind::Wake => "wake",
            SessionKind::Sleep => "sleep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub kind: SessionKind,
    /// Seconds since study start.
    pub start: f64,
    pub end: f64,
    /// 1-based study day.
    pub day: i64,
    /// Epoch indices `[first, last]` covered by the session.
    pub first_epoch: usize,
    pub last_epoch: usize,
}

impl Session {
    pub fn duration_hours(&self) -> f64 {
        (self.end - self.start) / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DayRules {
    /// Clock hour at study time 0.
    pub clock_offset_hours: f64,
    /// Sleep onsets before this clock hour belong to the previous day.
    pub day_cutoff_hour: f64,
}

impl Default for DayRules {
    fn default() -> Self {
        Self {
            clock_offset_hours: 0.0,
            day_cutoff_hour: 5.0,
        }
    }
}

impl DayRules {
    pub fn day_of(&self, seconds: f64) -> i64 {
        ((seconds / 3600.0 + self.clock_offset_hours) / 24.0).floor() as i64 + 1
    }

    /// Seconds of the midnight that opens `day`.
    pub fn midnight_of(&self, day: i64) -> f64 {
        ((day - 1) as f64 * 24.0 - self.clock_offset_hours) * 3600.0
    }
}

/// Maximal runs of equal labels, broken by excluded epochs, after giving
/// the `reinserted` epochs their neighbours' labels.
pub fn build_sessions(labels: &LabelSequence, reinserted: &[usize], rules: DayRules) -> Vec<Session> {
    let mut labels = labels.clone();
    reinsert(&mut labels, reinserted);
    let mut sessions = Vec::new();
    let n = labels.len();
    let mut i = 0;
    while i < n {
        let Some(l) = labels.labels[i] else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j + 1 < n && labels.labels[j + 1] == Some(l) {
            j += 1;
        }
        let start = labels.starts[i];
        let end = labels.starts[j] + labels.epoch_length;
        let kind = SessionKind::from_label(l);
        let mut day = rules.day_of(start);
        if kind == SessionKind::Sleep
            && clock_hour(start, rules.clock_offset_hours) < rules.day_cutoff_hour
        {
            day -= 1;
        }
        sessions.push(Session {
            kind,
            start,
            end,
            day,
            first_epoch: i,
            last_epoch: j,
        });
        i = j + 1;
    }
    sessions
}

/// Writes `subject,day,kind,start,end`.
pub fn write_sessions_csv(path: &Path, subject: &str, sessions: &[Session]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "day", "kind", "start", "end"])?;
    for s in sessions {
        w.write_record([
            subject.to_string(),
            s.day.to_string(),
            s.kind.as_str().to_string(),
            s.start.to_string(),
            s.end.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const LOG_FLOOR: f64 = 1e-12;

/// Column names for a matrix's local features, in table order.
pub fn feature_columns(local_features: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = ["total_duration", "night_duration", "onset", "offset"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for kind in [SessionKind::Sleep, SessionKind::Wake] {
        for f in local_features {
            let k = kind.as_str();
            for s in ["mean", "median", "sd"] {
                cols.push(format!("{f}.{s}.{k}"));
            }
            for c in 0..2 {
                cols.push(format!("{f}.linear.coef{c}.{k}"));
            }
            for c in 0..3 {
                cols.push(format!("{f}.quad.coef{c}.{k}"));
            }
        }
    }
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject: String,
    pub day: i64,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl SessionFeatureTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get(&self, day: i64, name: &str) -> Option<f64> {
        let j = self.column_index(name)?;
        self.rows.iter().find(|r| r.day == day)?.values[j]
    }

    /// Appends the rows of another subject's table with identical columns.
    pub fn extend(&mut self, other: SessionFeatureTable) -> Result<()> {
        if other.columns != self.columns {
            return Err(Error::Validation("feature tables have different columns".into()));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    /// Writes `subject,day,<columns>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["subject".to_string(), "day".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.subject.clone(), r.day.to_string()];
            rec.extend(r.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "subject" || &headers[1] != "day" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected `subject,day,...` header".into(),
            });
        }
        let columns: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |m: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: m,
            };
            let day = rec[1].parse().map_err(|_| bad(format!("bad day `{}`", &rec[1])))?;
            let values = rec
                .iter()
                .skip(2)
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|_| bad(format!("bad value `{c}`")))
                    }
                })
                .collect::<Result<_>>()?;
            rows.push(FeatureRow {
                subject: rec[0].to_string(),
                day,
                values,
            });
        }
        Ok(Self { columns, rows })
    }
}

/// Session-level features, one row per study day that has a session.
///
/// Same-kind sessions of a day are pooled epoch by epoch; each epoch's time
/// coordinate is its position within its own session scaled to `[0, 1]`.
/// Within-session standard deviations are log-transformed.
pub fn session_features(sessions: &[Session], epochs: &EpochFeatureMatrix, rules: DayRules) -> SessionFeatureTable {
    let columns = feature_columns(&epochs.feature_names);
    let mut by_day: BTreeMap<i64, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        by_day.entry(s.day).or_default().push(s);
    }
    let rows = by_day
        .into_iter()
        .map(|(day, list)| FeatureRow {
            subject: epochs.subject_id.clone(),
            day,
            values: day_features(day, &list, epochs, rules),
        })
        .collect();
    SessionFeatureTable { columns, rows }
}

fn day_features(day: i64, sessions: &[&Session], epochs: &EpochFeatureMatrix, rules: DayRules) -> Vec<Option<f64>> {
    let sleep: Vec<&Session> = sessions.iter().copied().filter(|s| s.kind == SessionKind::Sleep).collect();
    let mut values = Vec::with_capacity(4 + 16 * epochs.feature_names.len());
    if sleep.is_empty() {
        values.extend([None; 4]);
    } else {
        let total: f64 = sleep.iter().map(|s| s.duration_hours()).sum();
        // Longest sleep; the earliest wins a tie.
        let night = sleep
            .iter()
            .copied()
            .reduce(|a, b| if b.duration_hours() > a.duration_hours() { b } else { a })
            .unwrap();
        let midnight = rules.midnight_of(day);
        values.push(Some(total));
        values.push(Some(night.duration_hours()));
        values.push(Some((night.start - midnight) / 3600.0));
        values.push(Some((night.end - midnight) / 3600.0));
    }
    for kind in [SessionKind::Sleep, SessionKind::Wake] {
        let of_kind: Vec<&Session> = sessions.iter().copied().filter(|s| s.kind == kind).collect();
        for j in 0..epochs.feature_names.len() {
            let mut tau = Vec::new();
            let mut v = Vec::new();
            for s in &of_kind {
                let n = s.last_epoch - s.first_epoch + 1;
                for (pos, e) in (s.first_epoch..=s.last_epoch).enumerate() {
                    if let Some(x) = epochs.epochs[e].values[j] {
                        tau.push(if n > 1 { pos as f64 / (n - 1) as f64 } else { 0.0 });
                        v.push(x);
                    }
                }
            }
            values.push(stats::mean(&v));
            values.push(stats::median(&v));
            values.push(stats::sample_sd(&v).map(|s| s.max(LOG_FLOOR).ln()));
            let lin = stats::polyfit(&tau, &v, 1);
            let quad = stats::polyfit(&tau, &v, 2);
            for c in 0..2 {
                values.push(lin.as_ref().map(|l| l[c]));
            }
            for c in 0..3 {
                values.push(quad.as_ref().map(|q| q[c]));
            }
        }
    }
    values
}
