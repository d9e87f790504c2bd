//! End-to-end segmentation of subject records: epoch features, abnormality
//! screening and gating, baseline HMM, adaptive FLDA, reinsertion,
//! smoothing and session features.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{self, AbnormalityReport, Category};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{self, TrialMetrics};
use crate::flda::{self, SelfTraining};
use crate::hmm::{self, SleepRule};
use crate::ingest::{self, EpochFeatureMatrix, FeatureSelection, SubjectGate};
use crate::labels::{LabelSequence, Tag};
use crate::sessions::{self, Session, SessionFeatureTable};

/// One subject's epoch features, with the true labels when the record is a
/// simulated realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub epochs: EpochFeatureMatrix,
    pub truth: Option<Vec<u8>>,
    pub source: PathBuf,
}

impl SubjectRecord {
    pub fn id(&self) -> &str {
        &self.epochs.subject_id
    }

    pub fn is_simulated(&self) -> bool {
        self.truth.is_some()
    }
}

fn subject_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".into())
}

/// Reads a raw `timestamp,<channel>...` series and epochizes it, or reads a
/// simulated `time_hours,y_true,x1,x2` realization as epochs directly.
pub fn load_record(path: &Path, config: &PipelineConfig) -> Result<SubjectRecord> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let id = subject_id_of(path);
    if headers.get(0) == Some("time_hours") && headers.get(1) == Some("y_true") {
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut truth = Vec::new();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("bad number `{s}`"),
                })
            };
            times.push(num(&rec[0])?);
            let y = num(&rec[1])?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("label must be 0 or 1, got `{}`", &rec[1]),
                });
            }
            truth.push(y as u8);
            rows.push(
                rec.iter()
                    .skip(2)
                    .map(|c| if c.trim().is_empty() { Ok(None) } else { num(c).map(Some) })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if times.len() < 2 {
            return Err(Error::EmptyResult);
        }
        let step = times[1] - times[0];
        if !(step > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step.max(1.0)) {
            return Err(Error::Validation(format!(
                "{}: realization times must be evenly spaced",
                path.display()
            )));
        }
        let epochs = EpochFeatureMatrix::from_rows(id, step * 3600.0, times[0] * 3600.0, names, rows);
        return Ok(SubjectRecord {
            epochs,
            truth: Some(truth),
            source: path.to_path_buf(),
        });
    }
    drop(reader);
    let mut series = ingest::load_series(path, &[])?;
    series.subject_id = id;
    let epochs = ingest::epochize(&series, config.epoch_seconds(), config.availability_threshold)?;
    Ok(SubjectRecord {
        epochs,
        truth: None,
        source: path.to_path_buf(),
    })
}

/// Every `.csv` under `path` (sorted), or `path` itself when it is a file.
pub fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Validation(format!("no .csv files in {}", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Natural log of the named features; non-positive values become absent.
pub fn log_transform(epochs: &mut EpochFeatureMatrix, names: &[String]) {
    for name in names {
        let Some(j) = epochs.feature_index(name) else { continue };
        let mut dropped = 0;
        for e in &mut epochs.epochs {
            if let Some(v) = e.values[j] {
                e.values[j] = if v > 0.0 {
                    Some(v.ln())
                } else {
                    dropped += 1;
                    None
                };
            }
        }
        if dropped > 0 {
            log::warn!("{}: {dropped} non-positive `{name}` values dropped before the log", epochs.subject_id);
        }
    }
}

/// Abnormality screening when the record carries the filtering features.
pub fn screen(epochs: &EpochFeatureMatrix, config: &PipelineConfig) -> Result<Option<AbnormalityReport>> {
    if !config.anomaly_enabled {
        return Ok(None);
    }
    if config.anomaly.filtering_features.iter().any(|f| epochs.feature_index(f).is_none()) {
        log::info!("{}: filtering features absent; abnormality screening skipped", epochs.subject_id);
        return Ok(None);
    }
    anomaly::screen(epochs, &config.anomaly).map(Some)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub record: SubjectRecord,
    pub screening: Option<AbnormalityReport>,
    pub gate: SubjectGate,
}

/// Screening and the admission gate for one subject.
pub fn prepare(record: SubjectRecord, config: &PipelineConfig) -> Result<Prepared> {
    let screening = screen(&record.epochs, config)?;
    let mask = screening
        .as_ref()
        .map(|s| s.flagged.clone())
        .unwrap_or_else(|| vec![false; record.epochs.len()]);
    let gate = ingest::gate_subject_with(&record.epochs, &mask, config.max_missing, config.max_abnormal)?;
    Ok(Prepared {
        record,
        screening,
        gate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Labels after adaptation, reinsertion and smoothing.
    pub labels: LabelSequence,
    pub training: SelfTraining,
    pub sessions: Vec<Session>,
    pub features: SessionFeatureTable,
    /// Agreement with the true labels of a simulated record.
    pub metrics: Option<TrialMetrics>,
}

/// Contiguous runs of epochs in `[from, to)` whose features are present.
fn present_runs(epochs: &EpochFeatureMatrix, idx: &[usize], from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = from;
    while i < to {
        if epochs.row(i, idx).is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < to && epochs.row(i, idx).is_some() {
            i += 1;
        }
        runs.push((start, i));
    }
    runs
}

/// Segments one admitted subject on the given features.
pub fn segment(prepared: &Prepared, features: &[String], config: &PipelineConfig) -> Result<Segmentation> {
    let record = &prepared.record;
    let n = record.epochs.len();
    let baseline_start = config.baseline_start_hours * 3600.0;
    let baseline_end = config.baseline_end_hours * 3600.0;
    let record_end = record.epochs.epochs.last().map_or(0.0, |e| e.start + record.epochs.epoch_length);
    if record_end < baseline_end {
        return Err(Error::Config(format!(
            "{}: record ends at {:.1} h, before the baseline end at {} h",
            record.id(),
            record_end / 3600.0,
            config.baseline_end_hours
        )));
    }

    // Flagged epochs sit out the segmentation; reinsertion brings some back.
    let mut masked = record.epochs.clone();
    log_transform(&mut masked, &config.log_features);
    let flagged = prepared.screening.as_ref().map(|s| s.flagged.clone());
    if let Some(flags) = &flagged {
        for (e, &f) in masked.epochs.iter_mut().zip(flags) {
            if f {
                e.values.iter_mut().for_each(|v| *v = None);
            }
        }
    }
    let idx = ingest::feature_indices(&masked, features)?;
    let sleep_channel = match &config.sleep_feature {
        Some(name) => features
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::Config(format!("sleep feature `{name}` is not a segmentation feature")))?,
        None => 0,
    };

    let from = masked.epochs.partition_point(|e| e.start < baseline_start);
    let to = masked.epochs.partition_point(|e| e.start < baseline_end);
    let runs = present_runs(&masked, &idx, from, to);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| masked.row(i, &idx).unwrap_or_default()).collect();
    let segments: Vec<&[Vec<f64>]> = runs.iter().map(|&(a, b)| &rows[a..b]).collect();
    if segments.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no present baseline epochs", record.id())));
    }
    let fit = hmm::fit_em_segments(&segments, &config.hmm)?;
    let events = hmm::state_events(
        &fit.model,
        SleepRule {
            channel: sleep_channel,
            lower_is_sleep: true,
        },
    )?;
    let decoded = hmm::decode_segments(&fit.model, &segments)?;
    let mut baseline = LabelSequence::empty(masked.epoch_length, masked.starts(), Tag::Missing);
    let mut k = 0;
    for &(a, b) in &runs {
        for i in a..b {
            baseline.set(i, events[decoded.states[k]], Tag::HmmBaseline);
            k += 1;
        }
    }

    let training = flda::gradual_self_train(&masked, &idx, &baseline, &config.schedule(), config.self_train_params())?;
    let mut labels = training.labels.clone();
    let mut reinserted = Vec::new();
    if let (Some(s), Some(flags)) = (&prepared.screening, &flagged) {
        for i in (0..n).filter(|&i| flags[i]) {
            match s.category(i) {
                Some(c) if c.reinserted() => reinserted.push(i),
                Some(Category::NW) => labels.exclude(i, Tag::NotWorn),
                Some(Category::LOC) => labels.exclude(i, Tag::LossOfContact),
                Some(_) => labels.exclude(i, Tag::Other),
                None => labels.exclude(i, Tag::Abnormal),
            }
        }
    }
    sessions::reinsert(&mut labels, &reinserted);
    let labels = sessions::smooth_labels(&labels, config.smoothing_window, config.min_sleep_minutes);
    let sessions = sessions::build_sessions(&labels, &[], config.days);
    let features_table = sessions::session_features(&sessions, &record.epochs, config.days);
    let metrics = match &record.truth {
        Some(truth) => Some(eval::score_dense(&labels.dense(0), truth, record.epochs.epoch_length / 3600.0)?),
        None => None,
    };
    Ok(Segmentation {
        labels,
        training,
        sessions,
        features: features_table,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub source: PathBuf,
    pub gate: SubjectGate,
    pub segmented: bool,
    pub error: Option<String>,
    pub accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct SegmentRun {
    pub features: Vec<String>,
    pub selection: Option<FeatureSelection>,
    pub subjects: Vec<(Prepared, Result<Segmentation>)>,
    pub rejected: Vec<Prepared>,
}

impl SegmentRun {
    pub fn summaries(&self) -> Vec<SubjectSummary> {
        let mut out: Vec<SubjectSummary> = self
            .subjects
            .iter()
            .map(|(p, r)| SubjectSummary {
                subject: p.record.id().to_string(),
                source: p.record.source.clone(),
                gate: p.gate.clone(),
                segmented: r.is_ok(),
                error: r.as_ref().err().map(|e| e.to_string()),
                accuracy: r.as_ref().ok().and_then(|s| s.metrics).map(|m| m.accuracy),
            })
            .collect();
        out.extend(self.rejected.iter().map(|p| SubjectSummary {
            subject: p.record.id().to_string(),
            source: p.record.source.clone(),
            gate: p.gate.clone(),
            segmented: false,
            error: None,
            accuracy: None,
        }));
        out.sort_by(|a, b| a.subject.cmp(&b.subject));
        out
    }

    /// Session features of every segmented subject.
    pub fn feature_table(&self) -> Option<SessionFeatureTable> {
        let mut it = self.subjects.iter().filter_map(|(_, r)| r.as_ref().ok());
        let mut table = it.next()?.features.clone();
        for s in it {
            if table.extend(s.features.clone()).is_err() {
                log::warn!("skipping a feature table with different columns");
            }
        }
        Some(table)
    }
}

/// Gates every record, picks the segmentation features, then segments the
/// admitted subjects in parallel.
pub fn run(records: Vec<SubjectRecord>, config: &PipelineConfig) -> Result<SegmentRun> {
    config.validate()?;
    let prepared: Vec<Prepared> = records
        .into_par_iter()
        .map(|r| prepare(r, config))
        .collect::<Result<_>>()?;
    let (admitted, rejected): (Vec<Prepared>, Vec<Prepared>) = prepared.into_iter().partition(|p| p.gate.admitted);
    for p in &rejected {
        log::warn!(
            "{}: rejected (missing {:.2}, abnormal {:.2})",
            p.record.id(),
            p.gate.missing_proportion,
            p.gate.abnormal_proportion
        );
    }
    let (features, selection) = match &config.features {
        Some(f) => (f.clone(), None),
        None if admitted.iter().all(|p| p.record.is_simulated()) => {
            let names = admitted.first().map(|p| p.record.epochs.feature_names.clone()).unwrap_or_default();
            (names, None)
        }
        None => {
            let refs: Vec<&EpochFeatureMatrix> = admitted.iter().map(|p| &p.record.epochs).collect();
            let sel = ingest::select_features(&refs, &config.selection)?;
            (sel.selected.clone(), Some(sel))
        }
    };
    log::info!("segmentation features: {features:?}");
    let subjects = admitted
        .into_par_iter()
        .map(|p| {
            let s = segment(&p, &features, config);
            if let Err(e) = &s {
                log::error!("{}: {e}", p.record.id());
            }
            (p, s)
        })
        .collect();
    Ok(SegmentRun {
        features,
        selection,
        subjects,
        rejected,
    })
}

/// Writes per-subject `labels.csv`, `sessions.csv`, `batches.csv` and, when
/// screening ran, `abnormal.csv` under `out/<subject>/`, plus a combined
/// `features.csv`.
pub fn write_outputs(run: &SegmentRun, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (p, seg) in &run.subjects {
        let dir = out.join(p.record.id());
        std::fs::create_dir_all(&dir)?;
        if let Some(s) = &p.screening {
            let path = dir.join("abnormal.csv");
            s.write_csv(&p.record.epochs, &path)?;
            written.push(path);
        }
        let Ok(seg) = seg else { continue };
        let labels = dir.join("labels.csv");
        seg.labels.write_csv(&labels)?;
        let sess = dir.join("sessions.csv");
        sessions::write_sessions_csv(&sess, p.record.id(), &seg.sessions)?;
        let batches = dir.join("batches.csv");
        seg.training.write_diagnostics(&batches)?;
        written.extend([labels, sess, batches]);
    }
    if let Some(table) = run.feature_table() {
        let path = out.join("features.csv");
        table.write_csv(&path)?;
        written.push(path);
    }
    Ok(written)
}
