//! Per-epoch event labels and exclusion tags.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WAKE: u8 = 0;
pub const SLEEP: u8 = 1;

/// Where an epoch's label came from, or why it has none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    HmmBaseline,
    Flda,
    CarriedForward,
    Reinserted,
    /// Too few samples in the epoch.
    Missing,
    /// Flagged by the abnormality filter and not (yet) classified.
    Abnormal,
    NotWorn,
    LossOfContact,
    Other,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::HmmBaseline => "hmm-baseline",
            Tag::Flda => "flda",
            Tag::CarriedForward => "carried-forward",
            Tag::Reinserted => "reinserted",
            Tag::Missing => "missing",
            Tag::Abnormal => "abnormal",
            Tag::NotWorn => "nw",
            Tag::LossOfContact => "loc",
            Tag::Other => "other",
        }
    }

    pub fn is_labeled(self) -> bool {
        matches!(
            self,
            Tag::HmmBaseline | Tag::Flda | Tag::CarriedForward | Tag::Reinserted
        )
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labels on a regular epoch grid. `labels[i]` is `Some` exactly when
/// `tags[i]` is one of the labelling sources.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub epoch_length: f64,
    pub starts: Vec<f64>,
    pub labels: Vec<Option<u8>>,
    pub tags: Vec<Tag>,
}

impl LabelSequence {
    /// A sequence with every epoch excluded under `tag`.
    pub fn empty(epoch_length: f64, starts: Vec<f64>, tag: Tag) -> Self {
        let n = starts.len();
        Self {
            epoch_length,
            starts,
            labels: vec![None; n],
            tags: vec![tag; n],
        }
    }

    /// Fully labelled sequence on the grid `start0 + i * epoch_length`.
    pub fn from_labels(epoch_length: f64, start0: f64, labels: &[u8], tag: Tag) -> Self {
        Self {
            epoch_length,
            starts: (0..labels.len())
                .map(|i| start0 + i as f64 * epoch_length)
                .collect(),
            labels: labels.iter().map(|&l| Some(l)).collect(),
            tags: vec![tag; labels.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn set(&mut self, i: usize, label: u8, tag: Tag) {
        debug_assert!(tag.is_labeled());
        self.labels[i] = Some(label);
        self.tags[i] = tag;
    }

    pub fn exclude(&mut self, i: usize, tag: Tag) {
        debug_assert!(!tag.is_labeled());
        self.labels[i] = None;
        self.tags[i] = tag;
    }

    /// Labels with excluded epochs mapped to `fill`.
    pub fn dense(&self, fill: u8) -> Vec<u8> {
        self.labels.iter().map(|l| l.unwrap_or(fill)).collect()
    }

    /// Writes `epoch_start,label,source`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch_start", "label", "source"])?;
        for i in 0..self.len() {
            let label = self.labels[i].map(|l| l.to_string()).unwrap_or_default();
            w.write_record([
                self.starts[i].to_string(),
                label,
                self.tags[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.starts.len() != self.labels.len() || self.tags.len() != self.labels.len() {
            return Err(Error::Validation(
                "label sequence columns have different lengths".into(),
            ));
        }
        for (l, t) in self.labels.iter().zip(&self.tags) {
            if l.is_some() != t.is_labeled() {
                return Err(Error::Validation(format!(
                    "label presence disagrees with tag {t}"
                )));
            }
        }
        Ok(())
    }
}
