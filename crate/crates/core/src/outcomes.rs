//! Outcome prediction from session features: logistic and
//! continuation-ratio regression, AUC, leave-one-out evaluation and SMOTE.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::mix_seed;
use crate::sessions::SessionFeatureTable;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    /// Outcomes 0 and 1.
    Binary,
    /// Ordered levels `1..=levels`, earliest first.
    Ordinal { levels: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Logistic,
    ContinuationRatio,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "LR",
            ModelKind::ContinuationRatio => "CR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDataset {
    pub kind: OutcomeKind,
    pub feature_names: Vec<String>,
    pub subjects: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub outcomes: Vec<u8>,
}

/// Complete-case rows for a feature subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub kind: OutcomeKind,
    pub features: Vec<String>,
    pub subjects: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    /// Rows dropped for a missing modeled feature.
    pub dropped: usize,
}

impl OutcomeDataset {
    /// Rows of `table` on `day`, joined to per-subject outcomes. Subjects
    /// without an outcome are skipped.
    pub fn from_feature_table(
        table: &SessionFeatureTable,
        day: i64,
        outcomes: &HashMap<String, u8>,
        kind: OutcomeKind,
    ) -> Result<Self> {
        let mut ds = Self {
            kind,
            feature_names: table.columns.clone(),
            subjects: Vec::new(),
            values: Vec::new(),
            outcomes: Vec::new(),
        };
        for row in table.rows.iter().filter(|r| r.day == day) {
            if let Some(&y) = outcomes.get(&row.subject) {
                ds.subjects.push(row.subject.clone());
                ds.values.push(row.values.clone());
                ds.outcomes.push(y);
            }
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.subjects.len();
        if self.values.len() != n || self.outcomes.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.values.len().min(self.outcomes.len()),
            });
        }
        let ok = |y: u8| match self.kind {
            OutcomeKind::Binary => y <= 1,
            OutcomeKind::Ordinal { levels } => (1..=levels).contains(&y),
        };
        if let Some(y) = self.outcomes.iter().find(|&&y| !ok(y)) {
            return Err(Error::Validation(format!("outcome {y} outside {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn design(&self, features: &[String]) -> Result<Design> {
        let idx: Vec<usize> = features
            .iter()
            .map(|f| {
                self.feature_names
                    .iter()
                    .position(|n| n == f)
                    .ok_or_else(|| Error::Config(format!("unknown feature `{f}`")))
            })
            .collect::<Result<_>>()?;
        let mut d = Design {
            kind: self.kind,
            features: features.to_vec(),
            subjects: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
            dropped: 0,
        };
        for i in 0..self.subjects.len() {
            match idx.iter().map(|&j| self.values[i][j]).collect::<Option<Vec<f64>>>() {
                Some(row) if row.iter().all(|v| v.is_finite()) => {
                    d.subjects.push(self.subjects[i].clone());
                    d.x.push(row);
                    d.y.push(self.outcomes[i]);
                }
                _ => d.dropped += 1,
            }
        }
        if d.dropped > 0 {
            log::info!("{features:?}: dropped {} rows with missing values", d.dropped);
        }
        Ok(d)
    }
}

/// Reads `subject,outcome`. Binary outcomes accept `0`/`1`; ordinal ones
/// accept `1..=3` or `early`/`late`/`none`.
pub fn read_outcomes_csv(path: &Path, kind: OutcomeKind) -> Result<HashMap<String, u8>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        if rec.len() < 2 {
            return Err(bad("expected `subject,outcome`".into()));
        }
        let raw = rec[1].trim().to_ascii_lowercase();
        let y = match (kind, raw.as_str()) {
            (OutcomeKind::Ordinal { .. }, "early") => 1,
            (OutcomeKind::Ordinal { .. }, "late") => 2,
            (OutcomeKind::Ordinal { .. }, "none") => 3,
            _ => raw.parse::<u8>().map_err(|_| bad(format!("bad outcome `{}`", &rec[1])))?,
        };
        out.insert(rec[0].to_string(), y);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmOptions {
    pub max_iter: usize,
    /// Stop when the largest coefficient change falls below this.
    pub tol: f64,
    /// A standardized coefficient beyond this marks separation.
    pub separation_bound: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            separation_bound: 30.0,
        }
    }
}

/// Coefficients are on the raw feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGlm {
    pub kind: ModelKind,
    /// One for logistic; one per continuation level for CR.
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Standard errors of the slopes, when the information matrix inverts.
    pub slope_se: Option<Vec<f64>>,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    /// CR levels whose conditioning set was empty.
    pub unidentified_levels: Vec<u8>,
}

impl FittedGlm {
    /// Logistic: `[P(Y=0), P(Y=1)]`. CR: `[P(Y=1), ..., P(Y=L)]`.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let lin: f64 = self.slopes.iter().zip(x).map(|(b, v)| b * v).sum();
        match self.kind {
            ModelKind::Logistic => {
                let p = sigmoid(self.intercepts[0] + lin);
                vec![1.0 - p, p]
            }
            ModelKind::ContinuationRatio => {
                let mut out = Vec::with_capacity(self.intercepts.len() + 1);
                let mut survive = 1.0;
                for &a in &self.intercepts {
                    let h = sigmoid(a + lin);
                    out.push(survive * h);
                    survive *= 1.0 - h;
                }
                out.push(survive);
                out
            }
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let p = x.first().map_or(0, Vec::len);
        let mut mean = Vec::with_capacity(p);
        let mut sd = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            let s = stats::sample_sd(&col).unwrap_or(0.0);
            if !(s > 0.0) {
                return Err(Error::InsufficientData(format!("feature {j} is constant")));
            }
            mean.push(stats::mean(&col).unwrap_or(0.0));
            sd.push(s);
        }
        Ok(Self { mean, sd })
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Raw-scale intercepts and slopes from standardized ones.
    fn back(&self, intercepts: &[f64], slopes: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let raw: Vec<f64> = slopes.iter().zip(&self.sd).map(|(b, s)| b / s).collect();
        let shift: f64 = raw.iter().zip(&self.mean).map(|(b, m)| b * m).sum();
        (intercepts.iter().map(|a| a - shift).collect(), raw)
    }
}

struct Irls {
    beta: DVector<f64>,
    cov: Option<DMatrix<f64>>,
    converged: bool,
    separated: bool,
    iterations: usize,
}

/// Newton-Raphson on the Bernoulli log-likelihood, which is IRLS for the
/// canonical logit link.
fn irls(z: &DMatrix<f64>, y: &DVector<f64>, opts: &GlmOptions) -> Irls {
    let q = z.ncols();
    let mut beta = DVector::zeros(q);
    let mut out = Irls {
        beta: beta.clone(),
        cov: None,
        converged: false,
        separated: false,
        iterations: 0,
    };
    for it in 1..=opts.max_iter {
        out.iterations = it;
        let eta = z * &beta;
        let p = eta.map(sigmoid);
        let w = p.map(|pi| (pi * (1.0 - pi)).max(1e-12));
        let zw = DMatrix::from_fn(z.nrows(), q, |i, j| z[(i, j)] * w[i]);
        let info = z.transpose() * zw;
        let grad = z.transpose() * (y - &p);
        let Some(chol) = info.clone().cholesky() else {
            out.separated = true;
            break;
        };
        let step = chol.solve(&grad);
        beta += &step;
        out.beta = beta.clone();
        if beta.iter().any(|b| !b.is_finite() || b.abs() > opts.separation_bound) {
            out.separated = true;
            break;
        }
        if step.amax() < opts.tol {
            out.converged = true;
            break;
        }
    }
    if !out.separated {
        let eta = z * &out.beta;
        let w = eta.map(|e| {
            let pi = sigmoid(e);
            (pi * (1.0 - pi)).max(1e-12)
        });
        let zw = DMatrix::from_fn(z.nrows(), q, |i, j| z[(i, j)] * w[i]);
        out.cov = (z.transpose() * zw).cholesky().map(|c| c.inverse());
    }
    out
}

fn slope_se(cov: &Option<DMatrix<f64>>, first_slope: usize, sd: &[f64]) -> Option<Vec<f64>> {
    cov.as_ref().map(|c| {
        sd.iter()
            .enumerate()
            .map(|(j, s)| c[(first_slope + j, first_slope + j)].max(0.0).sqrt() / s)
            .collect()
    })
}

/// Maximum-likelihood logistic regression of `y ∈ {0,1}` on the rows of `x`.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], opts: &GlmOptions) -> Result<FittedGlm> {
    check_rows(x, y)?;
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::SingleClass(format!("{} rows, {ones} positive", y.len())));
    }
    let st = Standardizer::fit(x)?;
    let p = st.mean.len();
    let z = DMatrix::from_fn(x.len(), p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x[i][j - 1] - st.mean[j - 1]) / st.sd[j - 1]
        }
    });
    let yv = DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64));
    let fit = irls(&z, &yv, opts);
    let (intercepts, slopes) = st.back(&fit.beta.as_slice()[..1], &fit.beta.as_slice()[1..]);
    Ok(FittedGlm {
        kind: ModelKind::Logistic,
        intercepts,
        slopes,
        slope_se: slope_se(&fit.cov, 1, &st.sd),
        converged: fit.converged,
        separated: fit.separated,
        iterations: fit.iterations,
        unidentified_levels: Vec::new(),
    })
}

/// Continuation-ratio model `logit P(Y=j | Y>=j) = a_j + b·x` for
/// `j = 1..levels-1`, with outcomes in `1..=levels`. Each row expands into
/// its conditional Bernoulli trials, which share the slopes.
pub fn fit_continuation_ratio(
    x: &[Vec<f64>],
    y: &[u8],
    levels: u8,
    opts: &GlmOptions,
) -> Result<FittedGlm> {
    check_rows(x, y)?;
    if levels < 2 {
        return Err(Error::Config(format!("continuation ratio needs 2+ levels, got {levels}")));
    }
    if let Some(v) = y.iter().find(|&&v| v < 1 || v > levels) {
        return Err(Error::Validation(format!("ordinal outcome {v} outside 1..={levels}")));
    }
    let mut populated: Vec<u8> = y.to_vec();
    populated.sort_unstable();
    populated.dedup();
    if populated.len() < 2 {
        return Err(Error::SingleClass(format!("only level {} present", populated[0])));
    }
    let st = Standardizer::fit(x)?;
    let p = st.mean.len();
    let cuts = (levels - 1) as usize;

    let reach: Vec<usize> = (1..=cuts as u8)
        .map(|j| y.iter().filter(|&&v| v >= j).count())
        .collect();
    let unidentified: Vec<u8> = (0..cuts).filter(|&j| reach[j] == 0).map(|j| j as u8 + 1).collect();
    let live: Vec<usize> = (0..cuts).filter(|&j| reach[j] > 0).collect();
    let col_of: HashMap<usize, usize> = live.iter().enumerate().map(|(c, &j)| (j, c)).collect();

    let mut rows: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    for (xi, &yi) in x.iter().zip(y) {
        let zi = st.apply(xi);
        for j in 0..cuts.min(yi as usize) {
            rows.push((j, zi.clone(), if yi as usize == j + 1 { 1.0 } else { 0.0 }));
        }
    }
    let q = live.len() + p;
    let z = DMatrix::from_fn(rows.len(), q, |i, c| {
        let (j, ref zi, _) = rows[i];
        if c < live.len() {
            if col_of[&j] == c { 1.0 } else { 0.0 }
        } else {
            zi[c - live.len()]
        }
    });
    let yv = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let fit = irls(&z, &yv, opts);

    let mut std_intercepts = vec![0.0; cuts];
    for (c, &j) in live.iter().enumerate() {
        std_intercepts[j] = fit.beta[c];
    }
    let (mut intercepts, slopes) = st.back(&std_intercepts, &fit.beta.as_slice()[live.len()..]);
    for &l in &unidentified {
        intercepts[l as usize - 1] = 0.0;
    }
    if !unidentified.is_empty() {
        log::warn!("continuation levels {unidentified:?} have empty conditioning sets");
    }
    Ok(FittedGlm {
        kind: ModelKind::ContinuationRatio,
        intercepts,
        slopes,
        slope_se: slope_se(&fit.cov, live.len(), &st.sd),
        converged: fit.converged,
        separated: fit.separated,
        iterations: fit.iterations,
        unidentified_levels: unidentified,
    })
}

fn check_rows(x: &[Vec<f64>], y: &[u8]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InsufficientData("no rows".into()));
    }
    let p = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: r.len(),
        });
    }
    Ok(())
}

/// Area under the ROC curve from mid-ranks (normalized Mann-Whitney U);
/// tied scores get half credit.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!("{n_pos} positive, {n_neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmotePoint {
    pub base: usize,
    pub neighbor: usize,
}

/// Synthetic minority rows `s = x + U·(x_R − x)`, with `x` drawn uniformly
/// from the minority rows and `x_R` one of its `k` nearest minority
/// neighbours. Returns each point with the pair it was drawn between.
pub fn smote<R: Rng>(
    minority: &[Vec<f64>],
    k: usize,
    target_n: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, SmotePoint)>> {
    if minority.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "SMOTE needs 2+ minority rows, got {}",
            minority.len()
        )));
    }
    if k == 0 || k >= minority.len() {
        return Err(Error::Config(format!(
            "SMOTE k must lie in 1..{}, got {k}",
            minority.len()
        )));
    }
    let neighbours: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| (dist(&minority[i], &minority[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    Ok((0..target_n)
        .map(|_| {
            let base = rng.random_range(0..minority.len());
            let neighbor = neighbours[base][rng.random_range(0..k)];
            let u: f64 = rng.random();
            (
                interpolate(&minority[base], &minority[neighbor], u),
                SmotePoint { base, neighbor },
            )
        })
        .collect())
}

pub fn interpolate(x: &[f64], xr: &[f64], u: f64) -> Vec<f64> {
    x.iter().zip(xr).map(|(a, b)| a + u * (b - a)).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Neighbour count for a minority class: 3, or 1 for classes of 3 or fewer.
pub fn default_smote_k(minority_size: usize) -> usize {
    if minority_size <= 3 { 1 } else { 3 }
}

/// Oversamples every class up to the majority size. Classes with fewer
/// than two rows are left as they are.
pub fn rebalance<R: Rng>(x: &[Vec<f64>], y: &[u8], rng: &mut R) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut classes: Vec<u8> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let count = |c: u8| y.iter().filter(|&&v| v == c).count();
    let majority = classes.iter().map(|&c| count(c)).max().unwrap_or(0);
    let (mut xo, mut yo) = (x.to_vec(), y.to_vec());
    for c in classes {
        let members: Vec<Vec<f64>> = x.iter().zip(y).filter(|(_, &v)| v == c).map(|(r, _)| r.clone()).collect();
        let need = majority - members.len();
        if need == 0 {
            continue;
        }
        if members.len() < 2 {
            log::warn!("class {c} has {} rows; not oversampled", members.len());
            continue;
        }
        for (row, _) in smote(&members, default_smote_k(members.len()), need, rng)? {
            xo.push(row);
            yo.push(c);
        }
    }
    Ok((xo, yo))
}

fn fit_kind(design_kind: OutcomeKind, x: &[Vec<f64>], y: &[u8], opts: &GlmOptions) -> Result<FittedGlm> {
    match design_kind {
        OutcomeKind::Binary => fit_logistic(x, y, opts),
        OutcomeKind::Ordinal { levels } => fit_continuation_ratio(x, y, levels, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    /// Binary: one AUC. Ordinal: one-vs-rest AUC per level, absent when a
    /// level has no held-out member or every held-out row has it.
    pub aucs: Vec<Option<f64>>,
    pub accuracy: f64,
    /// Held-out class probabilities per row; absent for skipped folds.
    pub probabilities: Vec<Option<Vec<f64>>>,
    pub skipped_folds: usize,
    pub non_converged: usize,
}

impl LoocvResult {
    /// The binary AUC, or the smallest per-level AUC.
    pub fn summary_auc(&self) -> Option<f64> {
        let present: Vec<f64> = self.aucs.iter().flatten().copied().collect();
        if present.len() != self.aucs.len() {
            return None;
        }
        present.into_iter().reduce(f64::min)
    }
}

/// Leave-one-out evaluation. With `smote_seed`, each training fold is
/// rebalanced before fitting; the held-out row never takes part.
pub fn loocv(design: &Design, opts: &GlmOptions, smote_seed: Option<u64>) -> Result<LoocvResult> {
    let n = design.x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("leave-one-out needs 3+ rows, got {n}")));
    }
    let mut probabilities = Vec::with_capacity(n);
    let (mut skipped, mut non_converged) = (0, 0);
    for i in 0..n {
        let mut x: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
        let mut y: Vec<u8> = Vec::with_capacity(n - 1);
        for j in (0..n).filter(|&j| j != i) {
            x.push(design.x[j].clone());
            y.push(design.y[j]);
        }
        if let Some(seed) = smote_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64, 0));
            (x, y) = rebalance(&x, &y, &mut rng)?;
        }
        match fit_kind(design.kind, &x, &y, opts) {
            Ok(fit) => {
                if !fit.converged {
                    non_converged += 1;
                }
                probabilities.push(Some(fit.probabilities(&design.x[i])));
            }
            Err(Error::SingleClass(_)) | Err(Error::InsufficientData(_)) => {
                skipped += 1;
                probabilities.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let scored: Vec<(usize, &Vec<f64>)> = probabilities
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
        .collect();
    let level_of = |c: usize| -> u8 {
        match design.kind {
            OutcomeKind::Binary => c as u8,
            OutcomeKind::Ordinal { .. } => c as u8 + 1,
        }
    };
    let argmax = |p: &Vec<f64>| {
        (0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b })
    };
    let correct = scored.iter().filter(|(i, p)| level_of(argmax(p)) == design.y[*i]).count();
    let accuracy = if scored.is_empty() { f64::NAN } else { correct as f64 / scored.len() as f64 };

    let auc_for = |c: usize| -> Option<f64> {
        let scores: Vec<f64> = scored.iter().map(|(_, p)| p[c]).collect();
        let labels: Vec<bool> = scored.iter().map(|(i, _)| design.y[*i] == level_of(c)).collect();
        auc(&scores, &labels).ok()
    };
    let aucs = match design.kind {
        OutcomeKind::Binary => vec![auc_for(1)],
        OutcomeKind::Ordinal { levels } => (0..levels as usize).map(auc_for).collect(),
    };
    Ok(LoocvResult {
        aucs,
        accuracy,
        probabilities,
        skipped_folds: skipped,
        non_converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteSummary {
    pub runs: Vec<LoocvResult>,
    pub mean_aucs: Vec<Option<f64>>,
    pub mean_accuracy: f64,
}

/// Repeats SMOTE-rebalanced leave-one-out evaluation `runs` times with
/// independent seeds and averages the results.
pub fn smote_loocv(design: &Design, opts: &GlmOptions, runs: usize, seed: u64) -> Result<SmoteSummary> {
    let results: Vec<LoocvResult> = (0..runs)
        .into_par_iter()
        .map(|r| loocv(design, opts, Some(mix_seed(seed, r as u64, u64::MAX))))
        .collect::<Result<_>>()?;
    let levels = results.first().map_or(0, |r| r.aucs.len());
    let mean_aucs = (0..levels)
        .map(|c| {
            let v: Vec<f64> = results.iter().filter_map(|r| r.aucs[c]).collect();
            stats::mean(&v)
        })
        .collect();
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).filter(|a| a.is_finite()).collect();
    Ok(SmoteSummary {
        mean_aucs,
        mean_accuracy: stats::mean(&acc).unwrap_or(f64::NAN),
        runs: results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    pub feature: String,
    pub model: ModelKind,
    /// Slope on the raw feature scale, fitted on all rows.
    pub coef: Option<f64>,
    pub accuracy: f64,
    pub aucs: Vec<Option<f64>>,
    pub rows: usize,
}

/// Univariate leave-one-out screen of every feature, best first: binary
/// outcomes rank by AUC, ordinal ones by their smallest per-level AUC.
/// `smote` is `(runs, seed)`: accuracy and AUCs are then averaged over that
/// many rebalanced evaluations.
pub fn rank_features(
    dataset: &OutcomeDataset,
    features: &[String],
    opts: &GlmOptions,
    smote: Option<(usize, u64)>,
) -> Vec<FeatureResult> {
    let model = match dataset.kind {
        OutcomeKind::Binary => ModelKind::Logistic,
        OutcomeKind::Ordinal { .. } => ModelKind::ContinuationRatio,
    };
    let mut out: Vec<FeatureResult> = features
        .par_iter()
        .filter_map(|f| {
            let design = dataset.design(std::slice::from_ref(f)).ok()?;
            let cv = match smote {
                None => loocv(&design, opts, None).map(|cv| (cv.accuracy, cv.aucs)),
                Some((runs, seed)) => smote_loocv(&design, opts, runs, seed).map(|s| (s.mean_accuracy, s.mean_aucs)),
            };
            let (accuracy, aucs) = match cv {
                Ok(cv) => cv,
                Err(e) => {
                    log::debug!("{f}: {e}");
                    return None;
                }
            };
            let coef = fit_kind(design.kind, &design.x, &design.y, opts).ok().map(|m| m.slopes[0]);
            Some(FeatureResult {
                feature: f.clone(),
                model,
                coef,
                accuracy,
                aucs,
                rows: design.x.len(),
            })
        })
        .collect();
    let key = |r: &FeatureResult| {
        r.aucs.iter().map(|a| a.unwrap_or(f64::NEG_INFINITY)).fold(f64::INFINITY, f64::min)
    };
    out.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.feature.cmp(&b.feature)));
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `feature,model,coef,accuracy,auc` for binary results and
/// `feature,model,coef,auc_early,auc_late,auc_none` for three-level ones.
pub fn write_results_csv(path: &Path, kind: OutcomeKind, results: &[FeatureResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    match kind {
        OutcomeKind::Binary => {
            w.write_record(["feature", "model", "coef", "accuracy", "auc"])?;
            for r in results {
                w.write_record([
                    r.feature.clone(),
                    r.model.as_str().into(),
                    fmt_opt(r.coef),
                    r.accuracy.to_string(),
                    fmt_opt(r.aucs[0]),
                ])?;
            }
        }
        OutcomeKind::Ordinal { levels } => {
            let mut header = vec!["feature".to_string(), "model".into(), "coef".into()];
            if levels == 3 {
                header.extend(["auc_early", "auc_late", "auc_none"].map(String::from));
            } else {
                header.extend((1..=levels).map(|l| format!("auc_{l}")));
            }
            w.write_record(&header)?;
            for r in results {
                let mut rec = vec![r.feature.clone(), r.model.as_str().into(), fmt_opt(r.coef)];
                rec.extend(r.aucs.iter().map(|a| fmt_opt(*a)));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
