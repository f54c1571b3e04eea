//! Summation and small-sample statistics shared by the estimators and the
//! harness.

use rand::Rng;

use crate::linalg::Mat;

const PAIRWISE_LEAF: usize = 8;

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how the caller computed them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Entrywise [`pairwise_sum`] over equally shaped matrices.
pub fn pairwise_sum_matrices(values: &[Mat]) -> Option<Mat> {
    match values.len() {
        0 => None,
        1 => Some(values[0].clone()),
        _ => {
            let mid = values.len() / 2;
            let left = pairwise_sum_matrices(&values[..mid])?;
            let right = pairwise_sum_matrices(&values[mid..])?;
            Some(left + right)
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = mean(values);
    if values.len() < 2 {
        return (mu, f64::INFINITY);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mu).powi(2)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mu, (var / n).sqrt())
}

/// Linear-interpolated quantile (type 7) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        return v[lo];
    }
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "linear fit needs two points");
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile bootstrap of `stat(numerator) / stat(denominator)`, resampling
/// the two groups independently.
pub fn bootstrap_ratio<R, F>(
    numerator: &[f64],
    denominator: &[f64],
    stat: F,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Interval
where
    R: Rng,
    F: Fn(&[f64]) -> f64,
{
    let estimate = stat(numerator) / stat(denominator);
    let mut ratios = Vec::with_capacity(resamples);
    let mut a = vec![0.0; numerator.len()];
    let mut b = vec![0.0; denominator.len()];
    for _ in 0..resamples {
        for slot in a.iter_mut() {
            *slot = numerator[rng.random_range(0..numerator.len())];
        }
        for slot in b.iter_mut() {
            *slot = denominator[rng.random_range(0..denominator.len())];
        }
        ratios.push(stat(&a) / stat(&b));
    }
    let alpha = (1.0 - level) / 2.0;
    Interval {
        estimate,
        lower: quantile(&ratios, alpha),
        upper: quantile(&ratios, 1.0 - alpha),
    }
}

/// Percentile bootstrap of `stat(a) - stat(b)`.
pub fn bootstrap_difference<R, F>(
    a: &[f64],
    b: &[f64],
    stat: F,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Interval
where
    R: Rng,
    F: Fn(&[f64]) -> f64,
{
    let estimate = stat(a) - stat(b);
    let mut diffs = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..resamples {
        for slot in ra.iter_mut() {
            *slot = a[rng.random_range(0..a.len())];
        }
        for slot in rb.iter_mut() {
            *slot = b[rng.random_range(0..b.len())];
        }
        diffs.push(stat(&ra) - stat(&rb));
    }
    let alpha = (1.0 - level) / 2.0;
    Interval {
        estimate,
        lower: quantile(&diffs, alpha),
        upper: quantile(&diffs, 1.0 - alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }

    #[test]
    fn fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, se) = mean_and_stderr(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    proptest! {
        #[test]
        fn pairwise_matches_naive(values in proptest::collection::vec(-1e3f64..1e3, 0..200)) {
            let naive: f64 = values.iter().sum();
            let pw = pairwise_sum(&values);
            prop_assert!((naive - pw).abs() <= 1e-9 * (1.0 + values.iter().map(|v| v.abs()).sum::<f64>()));
        }
    }
}
