//! Ground-truth wake/sleep simulator with drifting channel means.
//!
//! A record is `M` consecutive (wake, sleep) session pairs. Durations come
//! from truncated normals with a mean cadence of 24 h. Channel 1 is a
//! truncated normal (heart-rate analog), channel 2 log-normal (activity
//! analog). After the baseline, per-pair means follow a quadratic trend in
//! the pair index `m` with apex at `m_o`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MultiChannelSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "stable")]
    Stable,
    #[serde(rename = "unstable++")]
    UnstablePlusPlus,
    #[serde(rename = "unstable+-")]
    UnstablePlusMinus,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::Stable,
        Scenario::UnstablePlusPlus,
        Scenario::UnstablePlusMinus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Stable => "stable",
            Scenario::UnstablePlusPlus => "unstable++",
            Scenario::UnstablePlusMinus => "unstable+-",
        }
    }

    /// Trend tuple `(b_0^(1), b_1^(1), b_0^(2), b_1^(2))`.
    pub fn trend_tuple(self) -> [f64; 4] {
        match self {
            Scenario::Stable => [0.0, 0.0, 0.0, 0.0],
            Scenario::UnstablePlusPlus => [15.0, 10.0, 0.5, -0.5],
            Scenario::UnstablePlusMinus => [-15.0, 15.0, 0.5, -0.5],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario `{s}` (valid: stable, unstable++, unstable+-)"
                ))
            })
    }
}

/// Location and scale of one state's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocScale {
    pub loc: f64,
    pub scale: f64,
}

impl LocScale {
    pub const fn new(loc: f64, scale: f64) -> Self {
        Self { loc, scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: Scenario,
    /// Number of (wake, sleep) session pairs.
    pub sessions: usize,
    /// Sample step in hours.
    pub step_hours: f64,
    /// Trends start after this many hours.
    pub baseline_hours: f64,
    /// Wake duration `(μ_0, σ_0)` in hours; sleep uses `(24 − μ_0, σ_0)`.
    pub wake_duration: LocScale,
    /// Truncated normal, indexed by state (0 = wake, 1 = sleep).
    pub channel1: [LocScale; 2],
    /// Log-normal log-location and log-scale, indexed by state.
    pub channel2: [LocScale; 2],
    /// Trend coefficients `b[i][k]` for channel `i` and state `k`.
    pub trend: [[f64; 2]; 2],
    /// Candidate apex pair indices, drawn uniformly.
    pub apex_sessions: Vec<usize>,
    /// Largest reduction of the mean sleep duration (hours), reached at the
    /// apex pair. Only used when the scenario is unstable.
    pub sleep_shrink_hours: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::Stable)
    }
}

impl SimConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let [b01, b11, b02, b12] = scenario.trend_tuple();
        Self {
            scenario,
            sessions: 11,
            step_hours: 1.0 / 6.0,
            baseline_hours: 36.0,
            wake_duration: LocScale::new(16.0, 1.0),
            channel1: [LocScale::new(75.0, 8.0), LocScale::new(58.0, 5.0)],
            channel2: [LocScale::new(-1.0, 0.5), LocScale::new(-2.5, 0.5)],
            trend: [[b01, b11], [b02, b12]],
            apex_sessions: vec![5, 6, 7],
            sleep_shrink_hours: 2.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.sessions < 2 {
            return bad("sessions must be at least 2");
        }
        if !(self.step_hours > 0.0) {
            return bad("step_hours must be positive");
        }
        if !(self.wake_duration.loc < 24.0) {
            return bad("wake duration mean must be below 24 h");
        }
        let scales = [self.wake_duration.scale]
            .into_iter()
            .chain(self.channel1.iter().map(|c| c.scale))
            .chain(self.channel2.iter().map(|c| c.scale));
        if scales.into_iter().any(|s| !(s > 0.0)) {
            return bad("all scale parameters must be positive");
        }
        if self.apex_sessions.is_empty()
            || self
                .apex_sessions
                .iter()
                .any(|&m| m < 2 || m > self.sessions)
        {
            return bad("apex sessions must lie in 2..=sessions");
        }
        if self.scenario == Scenario::Stable && self.trend.iter().flatten().any(|b| *b != 0.0) {
            return bad("the stable scenario has no trend");
        }
        Ok(())
    }

    fn is_unstable(&self) -> bool {
        self.scenario != Scenario::Stable
    }
}

/// The three scenarios with default calibration.
pub fn default_configs() -> Vec<(Scenario, SimConfig)> {
    Scenario::ALL
        .into_iter()
        .map(|s| (s, SimConfig::for_scenario(s)))
        .collect()
}

/// `u_m = u_1 − b (m − m_o)² / (1 − m_o)² + b`.
pub fn trend_mean(u1: f64, b: f64, m: usize, apex: usize) -> f64 {
    let m = m as f64;
    let mo = apex as f64;
    u1 - b * (m - mo).powi(2) / (1.0 - mo).powi(2) + b
}

/// Means in force over one session block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionBlock {
    /// 1-based pair index.
    pub pair: usize,
    pub state: u8,
    pub start_hours: f64,
    pub end_hours: f64,
    /// Channel-1 mean and channel-2 log-location before and after the
    /// baseline boundary.
    pub baseline_means: [f64; 2],
    pub trend_means: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRealization {
    pub apex: usize,
    pub step_hours: f64,
    pub time_hours: Vec<f64>,
    pub truth: Vec<u8>,
    pub observations: Vec<[f64; 2]>,
    /// Cumulative transition times `τ_m` in hours.
    pub transition_times: Vec<f64>,
    pub blocks: Vec<SessionBlock>,
}

impl SimRealization {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.to_vec()).collect()
    }

    /// Writes `time_hours,y_true,x1,x2`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_hours", "y_true", "x1", "x2"])?;
        for i in 0..self.len() {
            w.write_record([
                self.time_hours[i].to_string(),
                self.truth[i].to_string(),
                self.observations[i][0].to_string(),
                self.observations[i][1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `m_o` and a realization from `config.seed`.
pub fn generate(config: &SimConfig) -> Result<SimRealization> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let apex = draw_apex(config, &mut rng);
    sample(config, apex, &mut rng)
}

pub fn draw_apex<R: Rng>(config: &SimConfig, rng: &mut R) -> usize {
    config.apex_sessions[rng.random_range(0..config.apex_sessions.len())]
}

/// Draws a realization for a fixed apex pair.
pub fn sample<R: Rng>(config: &SimConfig, apex: usize, rng: &mut R) -> Result<SimRealization> {
    config.validate()?;
    let mu0 = config.wake_duration.loc;
    let sd0 = config.wake_duration.scale;

    let mut transition_times = Vec::with_capacity(2 * config.sessions);
    let mut blocks = Vec::with_capacity(2 * config.sessions);
    let mut clock = 0.0;
    for m in 1..=config.sessions {
        for state in [0u8, 1u8] {
            let k = state as usize;
            let mean = if state == 0 {
                mu0
            } else {
                let shrink = if config.is_unstable() {
                    config.sleep_shrink_hours * sleep_shrink_weight(m, apex)
                } else {
                    0.0
                };
                24.0 - mu0 - shrink
            };
            let duration = truncated_normal(rng, mean, sd0, 0.0);
            let baseline_means = [config.channel1[k].loc, config.channel2[k].loc];
            let trend_means = [
                trend_mean(config.channel1[k].loc, config.trend[0][k], m, apex),
                trend_mean(config.channel2[k].loc, config.trend[1][k], m, apex),
            ];
            blocks.push(SessionBlock {
                pair: m,
                state,
                start_hours: clock,
                end_hours: clock + duration,
                baseline_means,
                trend_means,
            });
            clock += duration;
            transition_times.push(clock);
        }
    }

    let n = (clock / config.step_hours).floor() as usize;
    let mut time_hours = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    let mut b = 0;
    for j in 0..n {
        let t = j as f64 * config.step_hours;
        while b + 1 < blocks.len() && t >= blocks[b].end_hours {
            b += 1;
        }
        let block = &blocks[b];
        let k = block.state as usize;
        let means = if t < config.baseline_hours {
            block.baseline_means
        } else {
            block.trend_means
        };
        let x1 = truncated_normal(rng, means[0], config.channel1[k].scale, 0.0);
        let x2 = (means[1] + config.channel2[k].scale * standard_normal(rng)).exp();
        time_hours.push(t);
        truth.push(block.state);
        observations.push([x1, x2]);
    }

    Ok(SimRealization {
        apex,
        step_hours: config.step_hours,
        time_hours,
        truth,
        observations,
        transition_times,
        blocks,
    })
}

/// Raw four-channel wearable record (HR, TEMP, EDA, ACC) with a fixed
/// nightly sleep window, for exercising the full preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WearableConfig {
    pub hours: f64,
    pub sample_seconds: f64,
    /// Clock hours of sleep onset and offset; the study starts at midnight.
    pub sleep_start_hour: f64,
    pub sleep_end_hour: f64,
    /// Study hours `[from, to)` during which the device lies on a table.
    pub not_worn: Option<(f64, f64)>,
    /// Probability that any single sample is missing.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for WearableConfig {
    fn default() -> Self {
        Self {
            hours: 72.0,
            sample_seconds: 60.0,
            sleep_start_hour: 23.0,
            sleep_end_hour: 7.0,
            not_worn: None,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

pub const WEARABLE_CHANNELS: [&str; 4] = ["HR", "TEMP", "EDA", "ACC"];

impl WearableConfig {
    pub fn is_asleep(&self, seconds: f64) -> bool {
        let h = (seconds / 3600.0).rem_euclid(24.0);
        if self.sleep_start_hour <= self.sleep_end_hour {
            (self.sleep_start_hour..self.sleep_end_hour).contains(&h)
        } else {
            h >= self.sleep_start_hour || h < self.sleep_end_hour
        }
    }
}

/// Draws a raw series: HR and TEMP shift with sleep, ACC varies far less
/// during sleep, and EDA carries no state information.
pub fn wearable(config: &WearableConfig, subject_id: &str) -> Result<MultiChannelSeries> {
    if !(config.hours > 0.0 && config.sample_seconds > 0.0) || !(0.0..1.0).contains(&config.missing_rate) {
        return Err(Error::Config("wearable needs positive span and step and a missing rate in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = (config.hours * 3600.0 / config.sample_seconds).floor() as usize;
    let mut timestamps = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * config.sample_seconds;
        let off = config.not_worn.is_some_and(|(a, b)| (a * 3600.0..b * 3600.0).contains(&t));
        let row = if off {
            [
                truncated_normal(&mut rng, 70.0, 20.0, 30.0),
                22.0 + 0.3 * standard_normal(&mut rng),
                0.01 * (0.2 * standard_normal(&mut rng)).exp(),
                1.0 + 0.002 * standard_normal(&mut rng),
            ]
        } else if config.is_asleep(t) {
            [
                truncated_normal(&mut rng, 58.0, 5.0, 30.0),
                34.2 + 0.3 * standard_normal(&mut rng),
                (-0.5 + 0.6 * standard_normal(&mut rng)).exp(),
                1.0 + 0.02 * standard_normal(&mut rng),
            ]
        } else {
            [
                truncated_normal(&mut rng, 75.0, 8.0, 30.0),
                33.0 + 0.4 * standard_normal(&mut rng),
                (-0.5 + 0.6 * standard_normal(&mut rng)).exp(),
                1.0 + 0.3 * standard_normal(&mut rng),
            ]
        };
        timestamps.push(t);
        values.push(
            row.iter()
                .map(|&v| (rng.random::<f64>() >= config.missing_rate).then_some(v))
                .collect(),
        );
    }
    MultiChannelSeries::new(
        subject_id,
        WEARABLE_CHANNELS.iter().map(|c| c.to_string()).collect(),
        timestamps,
        values,
        vec![1.0 / config.sample_seconds; 4],
    )
}

/// Triangular weight peaking at the apex pair and vanishing at pair 1.
fn sleep_shrink_weight(m: usize, apex: usize) -> f64 {
    let span = (apex as f64 - 1.0).max(1.0);
    (1.0 - (m as f64 - apex as f64).abs() / span).max(0.0)
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Normal(mean, sd) conditioned on exceeding `lower`, by rejection.
fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lower: f64) -> f64 {
    // Every configured distribution keeps the bound several sds away, so
    // rejection almost never loops; the guard falls back to the bound's
    // neighbourhood for pathological overrides.
    for _ in 0..10_000 {
        let x = mean + sd * standard_normal(rng);
        if x > lower {
            return x;
        }
    }
    lower + f64::EPSILON.max(sd * 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trend_endpoints() {
        assert_abs_diff_eq!(trend_mean(75.0, 15.0, 1, 6), 75.0);
        assert_abs_diff_eq!(trend_mean(75.0, 15.0, 6, 6), 90.0);
        assert_abs_diff_eq!(trend_mean(75.0, -15.0, 6, 6), 60.0);
        // Symmetric about the apex.
        assert_abs_diff_eq!(trend_mean(1.0, 2.0, 4, 6), trend_mean(1.0, 2.0, 8, 6));
    }

    #[test]
    fn default_trend_tuples() {
        let c = SimConfig::for_scenario(Scenario::UnstablePlusPlus);
        assert_eq!(c.trend, [[15.0, 10.0], [0.5, -0.5]]);
        let c = SimConfig::for_scenario(Scenario::UnstablePlusMinus);
        assert_eq!(c.trend, [[-15.0, 15.0], [0.5, -0.5]]);
        let c = SimConfig::for_scenario(Scenario::Stable);
        assert!(c.trend.iter().flatten().all(|b| *b == 0.0));
        assert_eq!(c.sessions, 11);
        assert_abs_diff_eq!(c.step_hours, 1.0 / 6.0);
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
        let err = "wobbly".parse::<Scenario>().unwrap_err();
        assert!(err.to_string().contains("unstable+-"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SimConfig::default();
        c.wake_duration.loc = 24.0;
        assert!(generate(&c).is_err());
        let mut c = SimConfig::default();
        c.trend[0][0] = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_realization() {
        let c = SimConfig::for_scenario(Scenario::UnstablePlusMinus).with_seed(9);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let d = c.clone().with_seed(10);
        assert_ne!(generate(&c).unwrap(), generate(&d).unwrap());
    }

    #[test]
    fn labels_alternate_from_wake() {
        let r = generate(&SimConfig::default().with_seed(3)).unwrap();
        assert_eq!(r.truth[0], 0);
        let runs = r.truth.windows(2).filter(|w| w[0] != w[1]).count() + 1;
        assert!((21..=22).contains(&runs), "{runs} runs");
        assert!(r.observations.iter().all(|o| o[1] > 0.0 && o[0] > 0.0));
        // About 11 days of 10-minute samples.
        assert!((1450..1720).contains(&r.len()), "{}", r.len());
    }

    #[test]
    fn stable_moments_match_configuration() {
        let c = SimConfig::default();
        let mut sums = [[0.0; 2]; 2];
        let mut sq = [[0.0; 2]; 2];
        let mut counts = [0usize; 2];
        let mut seed = 0;
        while counts.iter().min().unwrap() < &10_000 {
            let r = generate(&c.clone().with_seed(seed)).unwrap();
            for (y, o) in r.truth.iter().zip(&r.observations) {
                let k = *y as usize;
                let v = [o[0], o[1].ln()];
                for i in 0..2 {
                    sums[k][i] += v[i];
                    sq[k][i] += v[i] * v[i];
                }
                counts[k] += 1;
            }
            seed += 1;
        }
        for k in 0..2 {
            let n = counts[k] as f64;
            let targets = [c.channel1[k], c.channel2[k]];
            for i in 0..2 {
                let mean = sums[k][i] / n;
                let var = sq[k][i] / n - mean * mean;
                let se = (var / n).sqrt();
                assert!(
                    (mean - targets[i].loc).abs() < 3.0 * se,
                    "state {k} channel {i}: {mean} vs {}",
                    targets[i].loc
                );
            }
        }
    }

    #[test]
    fn stable_cadence_is_a_day() {
        let c = SimConfig::default();
        let mut cycles = Vec::new();
        for seed in 0..200 {
            let r = generate(&c.clone().with_seed(seed)).unwrap();
            let mut prev = 0.0;
            for pair in r.transition_times.chunks(2) {
                cycles.push(pair[1] - prev);
                prev = pair[1];
            }
        }
        let n = cycles.len() as f64;
        let mean = cycles.iter().sum::<f64>() / n;
        let var = cycles.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 24.0).abs() < 3.0 * (var / n).sqrt(), "{mean}");
    }

    #[test]
    fn trend_applies_after_baseline_only() {
        let c = SimConfig::for_scenario(Scenario::UnstablePlusPlus).with_seed(1);
        let r = generate(&c).unwrap();
        let apex_block = r
            .blocks
            .iter()
            .find(|b| b.pair == r.apex && b.state == 0)
            .unwrap();
        assert_abs_diff_eq!(apex_block.trend_means[0], 75.0 + 15.0);
        assert_abs_diff_eq!(r.blocks[0].trend_means[0], 75.0);
    }

    #[test]
    fn wearable_states_and_gaps() {
        let cfg = WearableConfig {
            hours: 48.0,
            not_worn: Some((14.0, 16.0)),
            missing_rate: 0.05,
            seed: 4,
            ..Default::default()
        };
        let s = wearable(&cfg, "w").unwrap();
        assert_eq!(s.len(), 48 * 60);
        assert_eq!(s.channel_names, WEARABLE_CHANNELS);
        let mean_hr = |asleep: bool| {
            let v: Vec<f64> = s
                .timestamps
                .iter()
                .zip(&s.values)
                .filter(|(t, _)| cfg.is_asleep(**t) == asleep && !(14.0 * 3600.0..16.0 * 3600.0).contains(*t))
                .filter_map(|(_, r)| r[0])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_hr(true) < 60.0 && mean_hr(false) > 73.0);
        let missing = s.values.iter().flatten().filter(|v| v.is_none()).count() as f64 / (4.0 * s.len() as f64);
        assert!((missing - 0.05).abs() < 0.01);
        let off_temp = s.values[15 * 60][1].unwrap_or(22.0);
        assert!(off_temp < 24.0);
        assert!(cfg.is_asleep(2.0 * 3600.0) && !cfg.is_asleep(12.0 * 3600.0));
    }
}
