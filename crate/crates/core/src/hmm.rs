//! Gaussian hidden Markov model: EM fitting, scaled forward-backward,
//! posterior and Viterbi decoding.

use std::path::Path;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

/// `K`-state HMM with multivariate normal emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pub initial: Vec<f64>,
    /// Row-stochastic `K×K`, `transition[i][j] = P(y_t = j | y_{t-1} = i)`.
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl GaussianHmm {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states();
        let p = self.dim();
        if k == 0 || p == 0 {
            return Err(Error::Validation("model has no states or no dimensions".into()));
        }
        if self.transition.len() != k
            || self.transition.iter().any(|r| r.len() != k)
            || self.means.len() != k
            || self.means.iter().any(|m| m.len() != p)
            || self.covariances.len() != k
            || self
                .covariances
                .iter()
                .any(|c| c.len() != p || c.iter().any(|r| r.len() != p))
        {
            return Err(Error::Validation("model parameter shapes disagree".into()));
        }
        for row in &self.transition {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-10 || row.iter().any(|a| *a < 0.0) {
                return Err(Error::Validation("transition rows must be distributions".into()));
            }
        }
        if (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Validation("initial probabilities must sum to 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// `log N(x_t; μ_k, Σ_k)` for every observation and state.
    pub fn log_emissions(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let p = self.dim();
        if let Some(bad) = obs.iter().find(|x| x.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: bad.len(),
            });
        }
        let mut factors = Vec::with_capacity(self.states());
        for cov in &self.covariances {
            let m = to_matrix(cov);
            let chol = Cholesky::new(m)
                .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            factors.push((chol, log_det));
        }
        let mut out = vec![vec![0.0; self.states()]; obs.len()];
        let mut diff = DVector::zeros(p);
        for (t, x) in obs.iter().enumerate() {
            for (k, (chol, log_det)) in factors.iter().enumerate() {
                for i in 0..p {
                    diff[i] = x[i] - self.means[k][i];
                }
                let z = chol.l().solve_lower_triangular(&diff).expect("nonsingular factor");
                out[t][k] = -0.5 * (p as f64 * LN_2PI + log_det + z.norm_squared());
            }
        }
        Ok(out)
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Smoothed quantities of one observation segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    /// `γ_t(k) = P(y_t = k | x_{1:N})`.
    pub posteriors: Vec<Vec<f64>>,
    /// `Σ_t P(y_{t-1} = i, y_t = j | x_{1:N})`.
    pub transition_counts: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// Scaled forward-backward on precomputed log emissions.
///
/// Emissions are shifted by their per-time maximum before exponentiation,
/// and each forward step is normalized; the shifts and normalizers add back
/// into the log-likelihood.
pub fn forward_backward_log(model: &GaussianHmm, log_b: &[Vec<f64>]) -> ForwardBackward {
    let n = log_b.len();
    let k = model.states();
    if n == 0 {
        return ForwardBackward {
            posteriors: Vec::new(),
            transition_counts: vec![vec![0.0; k]; k],
            log_likelihood: 0.0,
        };
    }
    let a = &model.transition;
    let mut b = vec![vec![0.0; k]; n];
    let mut shift = vec![0.0; n];
    for t in 0..n {
        let m = log_b[t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift[t] = m;
        for j in 0..k {
            b[t][j] = (log_b[t][j] - m).exp();
        }
    }

    let mut alpha = vec![vec![0.0; k]; n];
    let mut scale = vec![0.0; n];
    for j in 0..k {
        alpha[0][j] = model.initial[j] * b[0][j];
    }
    scale[0] = normalize(&mut alpha[0]);
    for t in 1..n {
        for j in 0..k {
            let s: f64 = (0..k).map(|i| alpha[t - 1][i] * a[i][j]).sum();
            alpha[t][j] = s * b[t][j];
        }
        scale[t] = normalize(&mut alpha[t]);
    }
    let log_likelihood = scale.iter().map(|c| c.ln()).sum::<f64>() + shift.iter().sum::<f64>();

    let mut beta = vec![vec![1.0; k]; n];
    for t in (0..n - 1).rev() {
        for i in 0..k {
            let s: f64 = (0..k).map(|j| a[i][j] * b[t + 1][j] * beta[t + 1][j]).sum();
            beta[t][i] = s / scale[t + 1];
        }
    }

    let mut posteriors = vec![vec![0.0; k]; n];
    for t in 0..n {
        for j in 0..k {
            posteriors[t][j] = alpha[t][j] * beta[t][j];
        }
        normalize(&mut posteriors[t]);
    }

    let mut counts = vec![vec![0.0; k]; k];
    for t in 1..n {
        for i in 0..k {
            for j in 0..k {
                counts[i][j] +=
                    alpha[t - 1][i] * a[i][j] * b[t][j] * beta[t][j] / scale[t];
            }
        }
    }

    ForwardBackward {
        posteriors,
        transition_counts: counts,
        log_likelihood,
    }
}

pub fn forward_backward(model: &GaussianHmm, obs: &[Vec<f64>]) -> Result<ForwardBackward> {
    let log_b = model.log_emissions(obs)?;
    Ok(forward_backward_log(model, &log_b))
}

fn normalize(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStates {
    pub states: Vec<usize>,
    pub posteriors: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// Posterior decoding: each epoch takes its most probable state.
pub fn decode(model: &GaussianHmm, obs: &[Vec<f64>]) -> Result<DecodedStates> {
    let fb = forward_backward(model, obs)?;
    let states = fb.posteriors.iter().map(|g| argmax(g)).collect();
    Ok(DecodedStates {
        states,
        posteriors: fb.posteriors,
        log_likelihood: fb.log_likelihood,
    })
}

/// Posterior decoding of independent segments sharing one model.
pub fn decode_segments(model: &GaussianHmm, segments: &[&[Vec<f64>]]) -> Result<DecodedStates> {
    let mut out = DecodedStates {
        states: Vec::new(),
        posteriors: Vec::new(),
        log_likelihood: 0.0,
    };
    for seg in segments {
        let d = decode(model, seg)?;
        out.states.extend(d.states);
        out.posteriors.extend(d.posteriors);
        out.log_likelihood += d.log_likelihood;
    }
    Ok(out)
}

/// Most probable state path.
pub fn viterbi(model: &GaussianHmm, obs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let log_b = model.log_emissions(obs)?;
    let n = obs.len();
    let k = model.states();
    if n == 0 {
        return Ok(Vec::new());
    }
    let log_a: Vec<Vec<f64>> = model
        .transition
        .iter()
        .map(|r| r.iter().map(|a| a.ln()).collect())
        .collect();
    let mut delta: Vec<f64> = (0..k).map(|j| model.initial[j].ln() + log_b[0][j]).collect();
    let mut back = vec![vec![0usize; k]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        for j in 0..k {
            for i in 0..k {
                let v = delta[i] + log_a[i][j];
                if v > next[j] {
                    next[j] = v;
                    back[t][j] = i;
                }
            }
            next[j] += log_b[t][j];
        }
        delta = next;
    }
    let mut path = vec![argmax(&delta); n];
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmConfig {
    pub states: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    pub covariance: CovarianceKind,
    /// Initial self-transition probability.
    pub self_transition: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            states: 2,
            tol: 1e-6,
            max_iter: 500,
            restarts: 3,
            seed: 0,
            covariance: CovarianceKind::Full,
            self_transition: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: GaussianHmm,
    /// Log-likelihood of every parameter set visited by the winning restart;
    /// the last entry belongs to the returned model.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub restart: usize,
}

impl FitResult {
    pub fn log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }
}

/// EM fit on one contiguous sequence.
pub fn fit_em(obs: &[Vec<f64>], config: &HmmConfig) -> Result<FitResult> {
    fit_em_segments(&[obs], config)
}

/// EM fit on independent segments sharing parameters.
pub fn fit_em_segments(segments: &[&[Vec<f64>]], config: &HmmConfig) -> Result<FitResult> {
    let k = config.states;
    if k == 0 {
        return Err(Error::Config("state count must be positive".into()));
    }
    let all: Vec<&Vec<f64>> = segments.iter().flat_map(|s| s.iter()).collect();
    let n = all.len();
    let p = all.first().map_or(0, |x| x.len());
    if p == 0 {
        return Err(Error::InsufficientData("no observations to fit".into()));
    }
    if let Some(bad) = all.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.len(),
        });
    }
    if n <= k * (p + 2) {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {k} states in {p} dimensions (need more than {})",
            k * (p + 2)
        )));
    }
    let floor = covariance_floor(&all, p);

    let mut best: Option<FitResult> = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
        let init = initialize(&all, k, p, floor, config, &mut rng);
        let fit = run_em(init, segments, floor, config, r)?;
        let better = best
            .as_ref()
            .is_none_or(|b| fit.log_likelihood() > b.log_likelihood());
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `1e-6` times the mean per-feature variance, or `1e-6` outright when the
/// data have no spread at all.
fn covariance_floor(obs: &[&Vec<f64>], p: usize) -> f64 {
    let n = obs.len() as f64;
    let mut total = 0.0;
    for j in 0..p {
        let m = obs.iter().map(|x| x[j]).sum::<f64>() / n;
        total += obs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n;
    }
    let mean_var = total / p as f64;
    if mean_var > 0.0 {
        1e-6 * mean_var
    } else {
        1e-6
    }
}

fn initialize<R: Rng>(
    obs: &[&Vec<f64>],
    k: usize,
    p: usize,
    floor: f64,
    config: &HmmConfig,
    rng: &mut R,
) -> GaussianHmm {
    let (centroids, assignment) = kmeans(obs, k, rng);
    let mut pooled = DMatrix::zeros(p, p);
    for (x, &c) in obs.iter().zip(&assignment) {
        let d = DVector::from_fn(p, |i, _| x[i] - centroids[c][i]);
        pooled += &d * d.transpose();
    }
    pooled /= obs.len() as f64;
    let cov = constrain(pooled, floor, config.covariance);
    let transition = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if k == 1 {
                        1.0
                    } else if i == j {
                        config.self_transition
                    } else {
                        (1.0 - config.self_transition) / (k - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    GaussianHmm {
        initial: vec![1.0 / k as f64; k],
        transition,
        means: centroids,
        covariances: vec![from_matrix(&cov); k],
    }
}

/// Lloyd's algorithm with k-means++ seeding.
fn kmeans<R: Rng>(obs: &[&Vec<f64>], k: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = obs.len();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centroids: Vec<Vec<f64>> = vec![obs[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = obs
            .iter()
            .map(|x| {
                centroids
                    .iter()
                    .map(|c| dist2(x, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(obs[pick].clone());
    }
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, x) in obs.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist2(x, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&&Vec<f64>> =
                obs.iter().zip(&assignment).filter(|(_, a)| **a == c).map(|(x, _)| x).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|x| x[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    (centroids, assignment)
}

/// Nearest covariance with every eigenvalue at least `floor`. Clamping the
/// spectrum is the exact maximizer of the Gaussian likelihood over that
/// constraint set, so EM stays monotone.
fn constrain(cov: DMatrix<f64>, floor: f64, kind: CovarianceKind) -> DMatrix<f64> {
    let p = cov.nrows();
    match kind {
        CovarianceKind::Diagonal => {
            DMatrix::from_fn(p, p, |i, j| if i == j { cov[(i, i)].max(floor) } else { 0.0 })
        }
        CovarianceKind::Full => {
            let sym = (&cov + cov.transpose()) * 0.5;
            let eig = SymmetricEigen::<f64, Dyn>::new(sym);
            let clamped = eig.eigenvalues.map(|l| l.max(floor));
            let out = &eig.eigenvectors
                * DMatrix::from_diagonal(&clamped)
                * eig.eigenvectors.transpose();
            (&out + out.transpose()) * 0.5
        }
    }
}

fn run_em(
    mut model: GaussianHmm,
    segments: &[&[Vec<f64>]],
    floor: f64,
    config: &HmmConfig,
    restart: usize,
) -> Result<FitResult> {
    let k = model.states();
    let p = model.dim();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let mut ll = 0.0;
        let mut first = vec![0.0; k];
        let mut counts = vec![vec![0.0; k]; k];
        let mut weight = vec![0.0; k];
        let mut sum_x = vec![DVector::<f64>::zeros(p); k];
        let mut stats = Vec::with_capacity(segments.len());
        for seg in segments {
            if seg.is_empty() {
                continue;
            }
            let fb = forward_backward(&model, seg)?;
            ll += fb.log_likelihood;
            for j in 0..k {
                first[j] += fb.posteriors[0][j];
                for i in 0..k {
                    counts[i][j] += fb.transition_counts[i][j];
                }
            }
            for (x, g) in seg.iter().zip(&fb.posteriors) {
                for j in 0..k {
                    weight[j] += g[j];
                    for d in 0..p {
                        sum_x[j][d] += g[j] * x[d];
                    }
                }
            }
            stats.push((seg, fb.posteriors));
        }
        if !ll.is_finite() {
            return Err(Error::Numerical("log-likelihood is not finite".into()));
        }
        if let Some(&prev) = trace.last() {
            let improvement = ll - prev;
            trace.push(ll);
            if improvement < config.tol * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }

        // M-step.
        let n_first: f64 = first.iter().sum();
        let initial: Vec<f64> = first.iter().map(|f| f / n_first).collect();
        let mut transition = model.transition.clone();
        for i in 0..k {
            let row: f64 = counts[i].iter().sum();
            if row > 0.0 {
                transition[i] = counts[i].iter().map(|c| c / row).collect();
            }
        }
        let mut means = model.means.clone();
        for j in 0..k {
            if weight[j] > 0.0 {
                means[j] = sum_x[j].iter().map(|s| s / weight[j]).collect();
            }
        }
        let mut scatter = vec![DMatrix::<f64>::zeros(p, p); k];
        for (seg, posteriors) in &stats {
            for (x, g) in seg.iter().zip(posteriors) {
                for j in 0..k {
                    let d = DVector::from_fn(p, |i, _| x[i] - means[j][i]);
                    scatter[j] += (&d * d.transpose()) * g[j];
                }
            }
        }
        let mut covariances = model.covariances.clone();
        for j in 0..k {
            if weight[j] <= 0.0 {
                warn!("state {j} received no posterior mass; keeping its parameters");
                continue;
            }
            if weight[j] < (p + 1) as f64 {
                warn!(
                    "state {j} owns {:.2} effective points; covariance regularized",
                    weight[j]
                );
            }
            let cov = constrain(&scatter[j] / weight[j], floor, config.covariance);
            covariances[j] = from_matrix(&cov);
        }
        model = GaussianHmm {
            initial,
            transition,
            means,
            covariances,
        };
    }
    if !converged {
        // The loop exhausted max_iter after an M-step; score the final model.
        let ll: f64 = segments
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| forward_backward(&model, s).map(|f| f.log_likelihood))
            .sum::<Result<f64>>()?;
        trace.push(ll);
        warn!("EM stopped at max_iter={} without converging", config.max_iter);
    }
    Ok(FitResult {
        model,
        log_likelihood_trace: trace,
        converged,
        restart,
    })
}

/// Which state is sleep: the one whose mean on `channel` is lower (or
/// higher, when `lower_is_sleep` is false).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepRule {
    pub channel: usize,
    pub lower_is_sleep: bool,
}

impl Default for SleepRule {
    fn default() -> Self {
        Self {
            channel: 0,
            lower_is_sleep: true,
        }
    }
}

/// Event label (0 wake, 1 sleep) of each state of a two-state model.
pub fn state_events(model: &GaussianHmm, rule: SleepRule) -> Result<Vec<u8>> {
    if model.states() != 2 {
        return Err(Error::Config(format!(
            "sleep/wake mapping needs 2 states, model has {}",
            model.states()
        )));
    }
    if rule.channel >= model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: rule.channel + 1,
        });
    }
    let a = model.means[0][rule.channel];
    let b = model.means[1][rule.channel];
    if a == b {
        return Err(Error::AmbiguousMapping(format!(
            "both states have mean {a} on channel {}",
            rule.channel
        )));
    }
    let sleep = if (a < b) == rule.lower_is_sleep { 0 } else { 1 };
    Ok((0..2).map(|s| u8::from(s == sleep)).collect())
}

/// Maps decoded states to event labels.
pub fn map_states_to_events(
    model: &GaussianHmm,
    decoded: &DecodedStates,
    rule: SleepRule,
) -> Result<Vec<u8>> {
    let events = state_events(model, rule)?;
    Ok(decoded.states.iter().map(|&s| events[s]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn two_state() -> GaussianHmm {
        GaussianHmm {
            initial: vec![0.6, 0.4],
            transition: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            means: vec![vec![0.0], vec![1.5]],
            covariances: vec![vec![vec![1.0]], vec![vec![0.5]]],
        }
    }

    fn three_state_2d() -> GaussianHmm {
        GaussianHmm {
            initial: vec![0.5, 0.3, 0.2],
            transition: vec![
                vec![0.7, 0.2, 0.1],
                vec![0.1, 0.6, 0.3],
                vec![0.25, 0.25, 0.5],
            ],
            means: vec![vec![0.0, 0.0], vec![1.0, -1.0], vec![-0.5, 2.0]],
            covariances: vec![
                vec![vec![1.0, 0.3], vec![0.3, 0.8]],
                vec![vec![0.6, -0.1], vec![-0.1, 1.2]],
                vec![vec![2.0, 0.0], vec![0.0, 0.4]],
            ],
        }
    }

    /// Sum over all K^N paths of the joint density, plus per-time marginals.
    fn enumerate(model: &GaussianHmm, obs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let k = model.states();
        let n = obs.len();
        let b: Vec<Vec<f64>> = model
            .log_emissions(obs)
            .unwrap()
            .into_iter()
            .map(|r| r.into_iter().map(f64::exp).collect())
            .collect();
        let mut total = 0.0;
        let mut marg = vec![vec![0.0; k]; n];
        let mut path = vec![0usize; n];
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            for s in path.iter_mut() {
                *s = c % k;
                c /= k;
            }
            let mut pr = model.initial[path[0]] * b[0][path[0]];
            for t in 1..n {
                pr *= model.transition[path[t - 1]][path[t]] * b[t][path[t]];
            }
            total += pr;
            for t in 0..n {
                marg[t][path[t]] += pr;
            }
        }
        for row in marg.iter_mut() {
            row.iter_mut().for_each(|m| *m /= total);
        }
        (total, marg)
    }

    #[test]
    fn forward_matches_path_enumeration() {
        let model = two_state();
        let obs: Vec<Vec<f64>> = [0.2, 1.9, 1.1].iter().map(|x| vec![*x]).collect();
        let (total, marg) = enumerate(&model, &obs);
        let fb = forward_backward(&model, &obs).unwrap();
        assert_relative_eq!(fb.log_likelihood, total.ln(), max_relative = 1e-12);
        for t in 0..3 {
            for k in 0..2 {
                assert_relative_eq!(fb.posteriors[t][k], marg[t][k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn three_state_enumeration() {
        let model = three_state_2d();
        let obs: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let (total, _) = enumerate(&model, &obs);
        let fb = forward_backward(&model, &obs).unwrap();
        assert_relative_eq!(fb.log_likelihood.exp(), total, max_relative = 1e-10);
    }

    #[test]
    fn posteriors_are_distributions_and_decode_is_argmax() {
        let model = three_state_2d();
        let obs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.1 - 2.0, 0.5]).collect();
        let d = decode(&model, &obs).unwrap();
        for (g, s) in d.posteriors.iter().zip(&d.states) {
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(g.iter().all(|x| *x <= g[*s]));
        }
    }

    #[test]
    fn no_underflow_on_long_sequences() {
        let model = two_state();
        let obs: Vec<Vec<f64>> = (0..200_000).map(|i| vec![(i % 7) as f64 * 0.3]).collect();
        let fb = forward_backward(&model, &obs).unwrap();
        assert!(fb.log_likelihood.is_finite());
        assert!(fb.posteriors.iter().all(|g| g.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn far_observations_decode_to_near_state() {
        let model = GaussianHmm {
            initial: vec![0.5, 0.5],
            transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            means: vec![vec![0.0], vec![10.0]],
            covariances: vec![vec![vec![1.0]], vec![vec![1.0]]],
        };
        let d = decode(&model, &[vec![0.0]]).unwrap();
        assert_eq!(d.states, vec![0]);
        let obs = vec![vec![0.1]; 20];
        let d = decode(&model, &obs).unwrap();
        assert!(d.states.iter().all(|&s| s == 0));
        assert!(d.posteriors.iter().all(|g| g[0] > 0.999));
    }

    #[test]
    fn dimension_mismatch() {
        let err = decode(&two_state(), &[vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, got: 2 }));
    }

    fn sample_hmm(model: &GaussianHmm, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let pick = |probs: &[f64], rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        };
        let mut s = pick(&model.initial, &mut rng);
        let mut obs = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let l = Cholesky::new(to_matrix(&model.covariances[s])).unwrap().l();
            let e = DVector::from_fn(model.dim(), |_, _| z.sample(&mut rng));
            let x = &l * e;
            obs.push((0..model.dim()).map(|i| model.means[s][i] + x[i]).collect());
            states.push(s);
            s = pick(&model.transition[s], &mut rng);
        }
        (obs, states)
    }

    #[test]
    fn em_is_monotone_and_recovers_parameters() {
        let truth = GaussianHmm {
            initial: vec![0.5, 0.5],
            transition: vec![vec![0.95, 0.05], vec![0.1, 0.9]],
            means: vec![vec![0.0, 0.0], vec![6.0, 3.0]],
            covariances: vec![
                vec![vec![1.0, 0.2], vec![0.2, 0.5]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
        };
        let (obs, _) = sample_hmm(&truth, 1000, 4);
        let fit = fit_em(&obs, &HmmConfig::default()).unwrap();
        assert!(fit.converged);
        for w in fit.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let events = [0usize, 1usize];
        // Match fitted states to truth by the first coordinate.
        let order: Vec<usize> = if fit.model.means[0][0] < fit.model.means[1][0] {
            events.to_vec()
        } else {
            vec![1, 0]
        };
        for (t, &f) in order.iter().enumerate() {
            for d in 0..2 {
                assert!((fit.model.means[f][d] - truth.means[t][d]).abs() < 0.1);
            }
            for (u, &g) in order.iter().enumerate() {
                assert!((fit.model.transition[f][g] - truth.transition[t][u]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn single_state_is_sample_moments() {
        let obs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), i as f64 / 10.0]).collect();
        let cfg = HmmConfig {
            states: 1,
            ..Default::default()
        };
        let fit = fit_em(&obs, &cfg).unwrap();
        assert_eq!(fit.model.transition, vec![vec![1.0]]);
        let n = obs.len() as f64;
        let m0 = obs.iter().map(|x| x[0]).sum::<f64>() / n;
        let m1 = obs.iter().map(|x| x[1]).sum::<f64>() / n;
        assert_relative_eq!(fit.model.means[0][0], m0, epsilon = 1e-12);
        assert_relative_eq!(fit.model.means[0][1], m1, epsilon = 1e-12);
        let c01 = obs.iter().map(|x| (x[0] - m0) * (x[1] - m1)).sum::<f64>() / n;
        assert_relative_eq!(fit.model.covariances[0][0][1], c01, epsilon = 1e-10);
    }

    #[test]
    fn identical_observations_floor_covariance() {
        let obs = vec![vec![3.0, 3.0]; 40];
        let fit = fit_em(&obs, &HmmConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.log_likelihood_trace.len() <= 3);
        for cov in &fit.model.covariances {
            let eig = SymmetricEigen::new(to_matrix(cov));
            assert!(eig.eigenvalues.iter().all(|l| *l >= 1e-6 * (1.0 - 1e-9)));
        }
    }

    #[test]
    fn refit_is_bit_reproducible() {
        let (obs, _) = sample_hmm(&three_state_2d(), 300, 8);
        let cfg = HmmConfig {
            states: 3,
            ..Default::default()
        };
        assert_eq!(fit_em(&obs, &cfg).unwrap(), fit_em(&obs, &cfg).unwrap());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (obs, _) = sample_hmm(&three_state_2d(), 300, 2);
        let model = fit_em(&obs, &HmmConfig { states: 3, ..Default::default() })
            .unwrap()
            .model;
        let back = GaussianHmm::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn viterbi_matches_brute_force_best_path() {
        let model = two_state();
        let obs: Vec<Vec<f64>> = [0.1, 1.4, 1.6, -0.2, 0.9].iter().map(|x| vec![*x]).collect();
        let log_b = model.log_emissions(&obs).unwrap();
        let mut best = (f64::NEG_INFINITY, vec![]);
        for code in 0..32usize {
            let path: Vec<usize> = (0..5).map(|t| (code >> t) & 1).collect();
            let mut lp = model.initial[path[0]].ln() + log_b[0][path[0]];
            for t in 1..5 {
                lp += model.transition[path[t - 1]][path[t]].ln() + log_b[t][path[t]];
            }
            if lp > best.0 {
                best = (lp, path);
            }
        }
        assert_eq!(viterbi(&model, &obs).unwrap(), best.1);
    }

    #[test]
    fn sleep_mapping_follows_lower_mean() {
        let mut model = GaussianHmm {
            initial: vec![0.5, 0.5],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            means: vec![vec![75.0], vec![55.0]],
            covariances: vec![vec![vec![1.0]], vec![vec![1.0]]],
        };
        assert_eq!(state_events(&model, SleepRule::default()).unwrap(), vec![0, 1]);
        model.means[1][0] = 75.0;
        assert!(matches!(
            state_events(&model, SleepRule::default()),
            Err(Error::AmbiguousMapping(_))
        ));
    }
}
