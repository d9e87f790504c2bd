//! Small descriptive-statistics helpers shared across the pipeline.

use nalgebra::{DMatrix, DVector};

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample variance with the n-1 denominator.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some(ss / (values.len() - 1) as f64)
}

pub fn sample_sd(values: &[f64]) -> Option<f64> {
    sample_variance(values).map(f64::sqrt)
}

/// Median; even-sized samples average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7, the R default).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = mean(a)?;
    let mb = mean(b)?;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Ordinary least squares polynomial fit `y ~ c0 + c1 x + ... + c_d x^d`.
///
/// Returns `None` when there are fewer distinct abscissae than coefficients.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return None;
    }
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return None;
    }
    let design = DMatrix::from_fn(n, degree + 1, |i, j| x[i].powi(j as i32));
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let coef = svd.solve(&rhs, 1e-14).ok()?;
    Some(coef.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn median_even_averages_middle_pair() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn sd_uses_n_minus_one() {
        let sd = sample_sd(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(sd, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_eq!(sample_sd(&[1.0]), None);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.25), Some(2.0));
        assert_eq!(quantile(&v, 0.5), Some(3.0));
        assert_abs_diff_eq!(quantile(&[1.0, 2.0], 0.25).unwrap(), 1.25);
    }

    #[test]
    fn polyfit_recovers_exact_line_and_parabola() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let line: Vec<f64> = x.iter().map(|t| 2.0 - 3.0 * t).collect();
        let c = polyfit(&x, &line, 1).unwrap();
        assert_abs_diff_eq!(c[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c[1], -3.0, epsilon = 1e-10);
        let q = polyfit(&x, &line, 2).unwrap();
        assert_abs_diff_eq!(q[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(q[1], -3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(q[2], 0.0, epsilon = 1e-8);
        assert!(polyfit(&[0.5, 0.5], &[1.0, 2.0], 1).is_none());
    }
}
