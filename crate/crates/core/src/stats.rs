//! Percentiles, medians and a rank-sum utility used by the assessment
//! protocols and acceptance checks.

/// Percentile with linear interpolation between order statistics
/// (the NumPy "linear" convention). `p` is in `[0, 100]`.
///
/// Panics on an empty slice; callers guard that case.
pub fn percentile_linear(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&p), "percentile p out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Median via `percentile_linear(_, 50)`.
pub fn median(values: &[f64]) -> f64 {
    percentile_linear(values, 50.0)
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty slice");
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean (population-variance based); 0 for n < 2.
pub fn sem(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    (var / n as f64).sqrt()
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error below 1.5e-7, plenty for rank-sum p-values).
pub fn normal_cdf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x / 2.0).exp();
    if x >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test with the normal
/// approximation, average ranks for ties and a tie-corrected variance.
///
/// Returns `(u_statistic_for_a, two_sided_p)`. Small-sample exactness is not
/// needed here; sample sizes in the protocols are 30 per side or more.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n1 = a.len();
    let n2 = b.len();
    assert!(n1 > 0 && n2 > 0, "rank-sum needs nonempty samples");
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0usize))
        .chain(b.iter().map(|&v| (v, 1usize)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("non-finite value in rank-sum"));

    let n = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // ranks are 1-based; tied values share the average rank
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in pooled.iter().take(j + 1).skip(i) {
            if item.1 == 0 {
                rank_sum_a += avg_rank;
            }
        }
        i = j + 1;
    }

    let n1f = n1 as f64;
    let n2f = n2 as f64;
    let nf = n as f64;
    let u = rank_sum_a - n1f * (n1f + 1.0) / 2.0;
    let mu = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        // all pooled values identical
        return (u, 1.0);
    }
    let z = (u - mu - 0.5 * (u - mu).signum()) / var.sqrt();
    let p = 2.0 * (1.0 - normal_cdf(z.abs()));
    (u, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        // rank = 0.99 over {3, 4} -> 3.99
        let p = percentile_linear(&[3.0, 4.0], 99.0);
        assert!((p - 3.99).abs() < 1e-12);
        assert_eq!(percentile_linear(&[5.0], 99.0), 5.0);
        assert_eq!(percentile_linear(&[1.0, 2.0, 3.0], 50.0), 2.0);
    }

    #[test]
    fn percentile_matches_brute_force_definition() {
        // independent check: for sorted x, p maps to x[lo] + frac*(x[lo+1]-x[lo])
        let values: Vec<f64> = (1..=200).map(|v| v as f64).collect();
        let p = percentile_linear(&values, 99.0);
        let rank: f64 = 0.99 * 199.0;
        let lo = rank.floor() as usize;
        let expect = values[lo] + (rank - lo as f64) * (values[lo + 1] - values[lo]);
        assert!((p - expect).abs() < 1e-12);
        assert!((p - 198.01).abs() < 1e-9);
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[0.0, 1.0, 2.0]), 1.0);
        assert_eq!(median(&[0.0, 1.0, 2.0, 3.0]), 1.5);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96) - 0.9750021).abs() < 1e-4);
        assert!((normal_cdf(-1.0) - 0.15865525).abs() < 1e-5);
    }

    #[test]
    fn rank_sum_separated_samples_significant() {
        let a: Vec<f64> = (0..30).map(|i| 10.0 + i as f64 * 0.01).collect();
        let b: Vec<f64> = (0..30).map(|i| 1.0 + i as f64 * 0.01).collect();
        let (_, p) = rank_sum_test(&a, &b);
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn rank_sum_identical_samples_not_significant() {
        let a = vec![1.0; 20];
        let b = vec![1.0; 20];
        let (_, p) = rank_sum_test(&a, &b);
        assert!(p > 0.9);
    }

    #[test]
    fn rank_sum_symmetry() {
        let a: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..25).map(|i| (i as f64 * 0.41).cos() * 0.5).collect();
        let (_, pab) = rank_sum_test(&a, &b);
        let (_, pba) = rank_sum_test(&b, &a);
        assert!((pab - pba).abs() < 1e-12);
    }
}
