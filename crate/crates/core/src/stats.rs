//! Run aggregation on a log scale, and rank correlation.

use crate::error::{Error, Result};

/// Mean and population standard deviation of `log10(values)`.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "run {i} has non-positive value {v}; cannot take a logarithm"
        )));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.log10()).collect();
    Ok(mean_std(&logs))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standard deviation pooled from two equal-sized groups.
pub fn pooled_std(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / 2.0).sqrt()
}

/// Whether each mean exceeds its predecessor by at most the pooled std of
/// the two. `summary` holds `(mean, std)` pairs in order.
pub fn non_increasing_within_pooled_std(summary: &[(f64, f64)]) -> bool {
    summary
        .windows(2)
        .all(|w| w[1].0 <= w[0].0 + pooled_std(w[0].1, w[1].1))
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_std(a);
    let (mb, _) = mean_std(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(
            "rank correlation needs two equal-length samples of size >= 2".into(),
        ));
    }
    let rho = pearson(&ranks(a), &ranks(b));
    if !rho.is_finite() {
        return Err(Error::InvalidArgument("constant sample has no rank correlation".into()));
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_tolerates_one_pooled_std() {
        assert!(non_increasing_within_pooled_std(&[(-1.0, 0.1), (-1.05, 0.1), (-1.2, 0.0)]));
        assert!(non_increasing_within_pooled_std(&[(-1.0, 0.3), (-0.8, 0.4)]));
        assert!(!non_increasing_within_pooled_std(&[(-1.0, 0.1), (-0.8, 0.1)]));
        assert!(non_increasing_within_pooled_std(&[(0.0, 0.0)]));
        assert!((pooled_std(3.0, 4.0) - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_decades() {
        let (m, s) = aggregate(&[1e-2, 1e-4]).unwrap();
        assert!((m + 3.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_value() {
        let (m, s) = aggregate(&[0.37]).unwrap();
        assert_eq!(m, 0.37f64.log10());
        assert_eq!(s, 0.0);
    }

    #[test]
    fn non_positive_values_name_the_run() {
        let err = aggregate(&[1.0, 0.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("run 1"), "{err}");
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let delta = [0.1, 0.5, 0.3, 0.9];
        assert!((spearman(&delta, &delta).unwrap() - 1.0).abs() < 1e-12);
        let flipped: Vec<f64> = delta.iter().map(|d| -2.0 * d + 5.0).collect();
        assert!((spearman(&flipped, &delta).unwrap() + 1.0).abs() < 1e-12);
        // monotone but non-linear
        let cubed: Vec<f64> = delta.iter().map(|d| d * d * d).collect();
        assert!((spearman(&cubed, &delta).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
