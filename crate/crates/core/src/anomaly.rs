//! Two-stage abnormal-epoch screening.
//!
//! Stage 1 fits a per-feature normal region with a three-cluster k-means and
//! a one-sided quantile cutoff. Stage 2 sorts the flagged epochs with an IQR
//! decision tree and puts plausible wake or active epochs back.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EpochFeatureMatrix;
use crate::stats;

const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    /// Values below the cutoff are abnormal.
    LowerTail,
    /// Values above the cutoff are abnormal.
    UpperTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalRegion {
    pub features_used: Vec<String>,
    pub cutoffs: Vec<f64>,
    pub directions: Vec<Tail>,
    pub k: usize,
    pub quantile: f64,
}

impl NormalRegion {
    /// Whether `value` lies on the abnormal side of feature `m`'s cutoff.
    pub fn is_abnormal(&self, m: usize, value: f64) -> bool {
        match self.directions[m] {
            Tail::LowerTail => value < self.cutoffs[m],
            Tail::UpperTail => value > self.cutoffs[m],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Device not worn.
    NW,
    /// Loss of skin contact.
    LOC,
    Wake,
    Active,
    Other,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::NW => "NW",
            Category::LOC => "LOC",
            Category::Wake => "Wake",
            Category::Active => "Active",
            Category::Other => "Other",
        }
    }

    pub fn reinserted(self) -> bool {
        matches!(self, Category::Wake | Category::Active)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbnormalityVerdict {
    pub epoch_index: usize,
    pub category: Category,
    pub reinserted: bool,
}

/// Heart-rate, temperature and activity-spread features walked by the tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeFeatures {
    pub hr: String,
    pub temp: String,
    pub acc: String,
}

impl Default for TreeFeatures {
    fn default() -> Self {
        Self {
            hr: "HR_MED".into(),
            temp: "TEMP_MED".into(),
            acc: "ACC_SD".into(),
        }
    }
}

/// How high heart rate and activity combine into the Active category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivePredicate {
    /// HR above its upper fence and ACC above its upper fence.
    #[default]
    Both,
    /// Either one above its upper fence.
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub k: usize,
    pub quantile: f64,
    pub filtering_features: Vec<String>,
    pub tree_features: TreeFeatures,
    pub active_predicate: ActivePredicate,
    /// Cluster all filtering features jointly instead of one at a time.
    pub joint: bool,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            k: 3,
            quantile: 0.025,
            filtering_features: vec!["HR_MED".into(), "TEMP_MED".into()],
            tree_features: TreeFeatures::default(),
            active_predicate: ActivePredicate::Both,
            joint: false,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::Config(format!("anomaly k must be at least 3, got {}", self.k)));
        }
        if !(self.quantile > 0.0 && self.quantile < 0.5) {
            return Err(Error::Config(format!(
                "anomaly quantile must lie in (0, 0.5), got {}",
                self.quantile
            )));
        }
        if self.filtering_features.is_empty() {
            return Err(Error::Config("no filtering features".into()));
        }
        Ok(())
    }
}

/// Lloyd's k-means on points of any dimension.
///
/// Initial centroids are the points at the (2i+1)/(2k) quantiles of the
/// coordinate sum, so the result is deterministic.
pub fn kmeans(points: &[Vec<f64>], k: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut distinct: Vec<&Vec<f64>> = points.iter().collect();
    distinct.sort_by(|a, b| order_key(a).total_cmp(&order_key(b)).then_with(|| lex(a, b)));
    distinct.dedup_by(|a, b| a == b);
    if distinct.len() < k {
        return Err(Error::DegenerateClustering(format!(
            "{} distinct values for {k} clusters",
            distinct.len()
        )));
    }

    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| order_key(a).total_cmp(&order_key(b)).then_with(|| lex(a, b)));
    let pick = |pool: &[&Vec<f64>]| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                let q = (2 * i + 1) as f64 / (2 * k) as f64;
                let idx = ((pool.len() - 1) as f64 * q).round() as usize;
                pool[idx].clone()
            })
            .collect()
    };
    let mut centroids = pick(&sorted);
    if has_duplicates(&centroids) {
        centroids = pick(&distinct);
    }

    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = nearest(&centroids, p);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let mut counts = vec![0usize; k];
    for &a in &assign {
        counts[a] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::DegenerateClustering("k-means left an empty cluster".into()));
    }
    Ok((centroids, assign))
}

fn order_key(p: &[f64]) -> f64 {
    p.iter().sum()
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn has_duplicates(c: &[Vec<f64>]) -> bool {
    (0..c.len()).any(|i| (i + 1..c.len()).any(|j| c[i] == c[j]))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(mu, p);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// The cluster whose nearest other centroid is farthest away. With three
/// clusters on a line this is the extreme cluster beyond the wider gap.
fn isolated_cluster(centroids: &[Vec<f64>]) -> usize {
    let k = centroids.len();
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..k {
        let d = (0..k)
            .filter(|&j| j != i)
            .map(|j| sq_dist(&centroids[i], &centroids[j]))
            .fold(f64::INFINITY, f64::min);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// One-sided quantile of the normal set, capped so that at most `2q` of
/// the whole fitting sample falls on the abnormal side.
fn cutoff(all: &[f64], normal: &mut [f64], abnormal_mean: f64, quantile: f64) -> (f64, Tail) {
    normal.sort_by(f64::total_cmp);
    let mut all = all.to_vec();
    all.sort_by(f64::total_cmp);
    let normal_mean = normal.iter().sum::<f64>() / normal.len() as f64;
    if normal_mean > abnormal_mean {
        let c = stats::quantile_sorted(normal, quantile);
        (c.min(stats::quantile_sorted(&all, 2.0 * quantile)), Tail::LowerTail)
    } else {
        let c = stats::quantile_sorted(normal, 1.0 - quantile);
        (c.max(stats::quantile_sorted(&all, 1.0 - 2.0 * quantile)), Tail::UpperTail)
    }
}

fn present_column(epochs: &EpochFeatureMatrix, name: &str, k: usize) -> Result<Vec<f64>> {
    let j = epochs.require_feature(name)?;
    let values: Vec<f64> = epochs.epochs.iter().filter_map(|e| e.values[j]).collect();
    if values.len() < 3 * k {
        return Err(Error::InsufficientData(format!(
            "{} present values of `{name}`, need at least {}",
            values.len(),
            3 * k
        )));
    }
    Ok(values)
}

/// Fits one cutoff per filtering feature from that feature alone.
pub fn fit_normal_region(
    epochs: &EpochFeatureMatrix,
    filtering_features: &[String],
    k: usize,
    quantile: f64,
) -> Result<NormalRegion> {
    let mut cutoffs = Vec::with_capacity(filtering_features.len());
    let mut directions = Vec::with_capacity(filtering_features.len());
    for name in filtering_features {
        let values = present_column(epochs, name, k)?;
        let points: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let (centroids, assign) = kmeans(&points, k)?;
        let abn = isolated_cluster(&centroids);
        let mut normal: Vec<f64> = values
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a != abn)
            .map(|(&v, _)| v)
            .collect();
        let (c, dir) = cutoff(&values, &mut normal, centroids[abn][0], quantile);
        log::debug!("{name}: centroids {centroids:?}, abnormal cluster {abn}, cutoff {c} ({dir:?})");
        cutoffs.push(c);
        directions.push(dir);
    }
    Ok(NormalRegion {
        features_used: filtering_features.to_vec(),
        cutoffs,
        directions,
        k,
        quantile,
    })
}

/// Joint variant: clusters the standardized filtering features together,
/// then derives the per-feature cutoffs from the shared normal set.
/// Only epochs with every filtering feature present take part.
pub fn fit_normal_region_joint(
    epochs: &EpochFeatureMatrix,
    filtering_features: &[String],
    k: usize,
    quantile: f64,
) -> Result<NormalRegion> {
    let idx: Vec<usize> = filtering_features
        .iter()
        .map(|n| epochs.require_feature(n))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..epochs.len()).filter_map(|i| epochs.row(i, &idx)).collect();
    if rows.len() < 3 * k {
        return Err(Error::InsufficientData(format!(
            "{} complete rows, need at least {}",
            rows.len(),
            3 * k
        )));
    }
    let p = idx.len();
    let mut centers = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for m in 0..p {
        let col: Vec<f64> = rows.iter().map(|r| r[m]).collect();
        let mu = stats::mean(&col).unwrap_or(0.0);
        let sd = stats::sample_sd(&col).filter(|s| *s > 0.0).unwrap_or(1.0);
        centers.push(mu);
        scales.push(sd);
    }
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..p).map(|m| (r[m] - centers[m]) / scales[m]).collect())
        .collect();
    let (centroids, assign) = kmeans(&z, k)?;
    let abn = isolated_cluster(&centroids);

    let mut cutoffs = Vec::with_capacity(p);
    let mut directions = Vec::with_capacity(p);
    for m in 0..p {
        let mut normal: Vec<f64> = rows
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a != abn)
            .map(|(r, _)| r[m])
            .collect();
        let col: Vec<f64> = rows.iter().map(|r| r[m]).collect();
        let abn_mean = centroids[abn][m] * scales[m] + centers[m];
        let (c, dir) = cutoff(&col, &mut normal, abn_mean, quantile);
        cutoffs.push(c);
        directions.push(dir);
    }
    Ok(NormalRegion {
        features_used: filtering_features.to_vec(),
        cutoffs,
        directions,
        k,
        quantile,
    })
}

/// Per-epoch abnormal flags.
///
/// Each present filtering feature is checked against its cutoff and one
/// abnormal value flags the epoch. Absent features neither flag nor clear
/// it, so an epoch with every filtering feature missing is never flagged.
pub fn filter_abnormal(epochs: &EpochFeatureMatrix, region: &NormalRegion) -> Result<Vec<bool>> {
    let idx: Vec<usize> = region
        .features_used
        .iter()
        .map(|n| epochs.require_feature(n))
        .collect::<Result<_>>()?;
    Ok(epochs
        .epochs
        .iter()
        .map(|e| {
            idx.iter()
                .enumerate()
                .any(|(m, &j)| e.values[j].is_some_and(|v| region.is_abnormal(m, v)))
        })
        .collect())
}

/// Tukey fences `Q1 - 1.5 IQR` and `Q3 + 1.5 IQR`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fences {
    pub lower: f64,
    pub upper: f64,
}

impl Fences {
    pub fn from_sample(values: &[f64]) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::InsufficientReference(values.len()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = stats::quantile_sorted(&sorted, 0.25);
        let q3 = stats::quantile_sorted(&sorted, 0.75);
        Ok(Self::from_quartiles(q1, q3))
    }

    pub fn from_quartiles(q1: f64, q3: f64) -> Self {
        let iqr = q3 - q1;
        Self {
            lower: q1 - 1.5 * iqr,
            upper: q3 + 1.5 * iqr,
        }
    }

    fn low(&self, v: f64) -> bool {
        v < self.lower
    }

    fn high(&self, v: f64) -> bool {
        v > self.upper
    }

    fn inside(&self, v: f64) -> bool {
        !self.low(v) && !self.high(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeFences {
    pub hr: Fences,
    pub temp: Fences,
    pub acc: Fences,
}

/// Walks the decision tree for one epoch given `(hr, temp, acc)`.
pub fn classify_values(
    hr: Option<f64>,
    temp: Option<f64>,
    acc: Option<f64>,
    fences: &TreeFences,
    active: ActivePredicate,
) -> Category {
    let (Some(hr), Some(temp), Some(acc)) = (hr, temp, acc) else {
        return Category::Other;
    };
    let cold = fences.temp.low(temp);
    if cold && fences.acc.low(acc) {
        return Category::NW;
    }
    if cold && fences.hr.low(hr) {
        return Category::LOC;
    }
    let is_active = match active {
        ActivePredicate::Both => fences.hr.high(hr) && fences.acc.high(acc),
        ActivePredicate::Either => fences.hr.high(hr) || fences.acc.high(acc),
    };
    if is_active {
        return Category::Active;
    }
    if fences.hr.inside(hr) && fences.temp.inside(temp) && fences.acc.inside(acc) {
        return Category::Wake;
    }
    Category::Other
}

/// Tree fences from the reference epochs (present, not flagged), pooled
/// over the whole record.
pub fn reference_fences(
    epochs: &EpochFeatureMatrix,
    abnormal_mask: &[bool],
    tree: &TreeFeatures,
) -> Result<TreeFences> {
    if abnormal_mask.len() != epochs.len() {
        return Err(Error::DimensionMismatch {
            expected: epochs.len(),
            got: abnormal_mask.len(),
        });
    }
    let fence = |name: &str| -> Result<Fences> {
        let j = epochs.require_feature(name)?;
        let values: Vec<f64> = epochs
            .epochs
            .iter()
            .zip(abnormal_mask)
            .filter(|(_, &flag)| !flag)
            .filter_map(|(e, _)| e.values[j])
            .collect();
        Fences::from_sample(&values)
    };
    Ok(TreeFences {
        hr: fence(&tree.hr)?,
        temp: fence(&tree.temp)?,
        acc: fence(&tree.acc)?,
    })
}

/// One verdict per flagged epoch, in epoch order.
pub fn classify_abnormal(
    epochs: &EpochFeatureMatrix,
    abnormal_mask: &[bool],
    tree: &TreeFeatures,
    active: ActivePredicate,
) -> Result<Vec<AbnormalityVerdict>> {
    let fences = reference_fences(epochs, abnormal_mask, tree)?;
    let (h, t, a) = (
        epochs.require_feature(&tree.hr)?,
        epochs.require_feature(&tree.temp)?,
        epochs.require_feature(&tree.acc)?,
    );
    Ok(abnormal_mask
        .iter()
        .enumerate()
        .filter(|(_, &flag)| flag)
        .map(|(i, _)| {
            let v = &epochs.epochs[i].values;
            let category = classify_values(v[h], v[t], v[a], &fences, active);
            AbnormalityVerdict {
                epoch_index: i,
                category,
                reinserted: category.reinserted(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityReport {
    pub region: NormalRegion,
    /// Absent when the record lacks a tree feature; flagged epochs then
    /// stay excluded unclassified.
    pub fences: Option<TreeFences>,
    /// Stage-1 flags.
    pub flagged: Vec<bool>,
    pub verdicts: Vec<AbnormalityVerdict>,
}

impl AbnormalityReport {
    /// Epochs that stay excluded after reinsertion.
    pub fn excluded(&self) -> Vec<bool> {
        let mut out = self.flagged.clone();
        for v in &self.verdicts {
            if v.reinserted {
                out[v.epoch_index] = false;
            }
        }
        out
    }

    pub fn category(&self, epoch: usize) -> Option<Category> {
        self.verdicts
            .iter()
            .find(|v| v.epoch_index == epoch)
            .map(|v| v.category)
    }

    /// Writes `epoch_start,flagged,category,reinserted`, one row per epoch.
    pub fn write_csv(&self, epochs: &EpochFeatureMatrix, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch_start", "flagged", "category", "reinserted"])?;
        let mut verdicts = self.verdicts.iter().peekable();
        for (i, e) in epochs.epochs.iter().enumerate() {
            let v = verdicts.next_if(|v| v.epoch_index == i);
            w.write_record([
                e.start.to_string(),
                self.flagged[i].to_string(),
                v.map(|v| v.category.as_str().to_string()).unwrap_or_default(),
                v.is_some_and(|v| v.reinserted).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Both stages with one configuration. Classification is skipped with a
/// warning when the record lacks a tree feature.
pub fn screen(epochs: &EpochFeatureMatrix, config: &AnomalyConfig) -> Result<AbnormalityReport> {
    config.validate()?;
    let fit = if config.joint {
        fit_normal_region_joint
    } else {
        fit_normal_region
    };
    let region = fit(epochs, &config.filtering_features, config.k, config.quantile)?;
    let flagged = filter_abnormal(epochs, &region)?;
    let t = &config.tree_features;
    let (fences, verdicts) = if [&t.hr, &t.temp, &t.acc].iter().all(|f| epochs.feature_index(f).is_some()) {
        (
            Some(reference_fences(epochs, &flagged, t)?),
            classify_abnormal(epochs, &flagged, t, config.active_predicate)?,
        )
    } else {
        log::warn!("{}: tree features absent; flagged epochs stay excluded", epochs.subject_id);
        (None, Vec::new())
    };
    Ok(AbnormalityReport {
        region,
        fences,
        flagged,
        verdicts,
    })
}
