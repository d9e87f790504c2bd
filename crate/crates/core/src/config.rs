//! Run configuration. Every field has a default, so `{}` is a complete
//! configuration document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyConfig;
use crate::error::{Error, Result};
use crate::eval::BenchmarkConfig;
use crate::flda::{AdaptationSchedule, SelfTrainParams};
use crate::hmm::HmmConfig;
use crate::ingest::{SelectionCriteria, MAX_ABNORMAL, MAX_MISSING};
use crate::outcomes::GlmOptions;
use crate::sessions::DayRules;
use crate::simgen::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub epoch_minutes: f64,
    /// Epochs with a smaller share of present samples are discarded.
    pub availability_threshold: f64,
    /// Subjects above either proportion are not segmented.
    pub max_missing: f64,
    pub max_abnormal: f64,
    pub baseline_start_hours: f64,
    pub baseline_end_hours: f64,
    pub test_window_hours: f64,
    pub min_train_hours: u32,
    pub max_train_hours: u32,
    /// Prior odds of wake to sleep in the discriminant rule.
    pub gamma: f64,
    pub min_class_fraction: f64,
    pub anomaly_enabled: bool,
    pub anomaly: AnomalyConfig,
    pub selection: SelectionCriteria,
    /// Segmentation features; when absent they are chosen by SWSI.
    pub features: Option<Vec<String>>,
    /// Features replaced by their natural log before segmentation. Names a
    /// record does not have are ignored.
    pub log_features: Vec<String>,
    /// Feature whose lower state mean marks sleep; the first segmentation
    /// feature when absent.
    pub sleep_feature: Option<String>,
    pub hmm: HmmConfig,
    pub smoothing_window: usize,
    pub min_sleep_minutes: f64,
    pub days: DayRules,
    pub simulation: SimConfig,
    pub benchmark: BenchmarkConfig,
    pub outcomes: OutcomeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epoch_minutes: 10.0,
            availability_threshold: 0.9,
            max_missing: MAX_MISSING,
            max_abnormal: MAX_ABNORMAL,
            baseline_start_hours: 0.0,
            baseline_end_hours: 36.0,
            test_window_hours: 3.0,
            min_train_hours: 12,
            max_train_hours: 60,
            gamma: 1.0,
            min_class_fraction: 0.1,
            anomaly_enabled: true,
            anomaly: AnomalyConfig::default(),
            selection: SelectionCriteria::default(),
            features: None,
            log_features: vec!["x2".into()],
            sleep_feature: None,
            hmm: HmmConfig::default(),
            smoothing_window: 9,
            min_sleep_minutes: 60.0,
            days: DayRules::default(),
            simulation: SimConfig::default(),
            benchmark: BenchmarkConfig::default(),
            outcomes: OutcomeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    /// Study day whose session features feed the models.
    pub day: i64,
    /// Ordinal outcome level count.
    pub levels: u8,
    pub smote_runs: usize,
    pub seed: u64,
    pub glm: GlmOptions,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        Self {
            day: 2,
            levels: 3,
            smote_runs: 100,
            seed: 0,
            glm: GlmOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn epoch_seconds(&self) -> f64 {
        self.epoch_minutes * 60.0
    }

    pub fn schedule(&self) -> AdaptationSchedule {
        AdaptationSchedule::hourly(
            self.baseline_end_hours,
            self.test_window_hours,
            self.min_train_hours,
            self.max_train_hours,
        )
    }

    pub fn self_train_params(&self) -> SelfTrainParams {
        SelfTrainParams {
            gamma: self.gamma,
            ridge: None,
            min_class_fraction: self.min_class_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epoch_minutes > 0.0) {
            return bad(format!("epoch_minutes must be positive, got {}", self.epoch_minutes));
        }
        for (name, v) in [
            ("availability_threshold", self.availability_threshold),
            ("max_missing", self.max_missing),
            ("max_abnormal", self.max_abnormal),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.baseline_end_hours > self.baseline_start_hours) {
            return bad("baseline must end after it starts".into());
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.smoothing_window.is_multiple_of(2) {
            return bad("smoothing window must be odd".into());
        }
        if matches!(&self.features, Some(f) if f.is_empty()) {
            return bad("feature list is empty".into());
        }
        if self.anomaly_enabled {
            self.anomaly.validate()?;
        }
        self.schedule().validate()?;
        self.simulation.validate()?;
        self.benchmark.validate()?;
        if self.outcomes.levels < 2 {
            return bad("outcome levels must be at least 2".into());
        }
        Ok(())
    }
}
