//! Small summary-statistic helpers shared across modules.

/// Running mean. Exact for constant inputs, which keeps oracle biases at
/// exactly zero for homogeneous effects.
pub fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut m = 0.0;
    let mut k = 0usize;
    for x in xs {
        k += 1;
        m += (x - m) / k as f64;
    }
    (k > 0).then_some(m)
}

/// Mean and unbiased standard deviation (Welford). The deviation is `None`
/// with fewer than two values.
pub fn mean_sd(xs: impl IntoIterator<Item = f64>) -> (usize, Option<f64>, Option<f64>) {
    let mut n = 0usize;
    let mut m = 0.0;
    let mut s = 0.0;
    for x in xs {
        n += 1;
        let delta = x - m;
        m += delta / n as f64;
        s += delta * (x - m);
    }
    match n {
        0 => (0, None, None),
        1 => (1, Some(m), None),
        _ => (n, Some(m), Some((s / (n - 1) as f64).max(0.0).sqrt())),
    }
}

/// Unbiased sample variance; `None` below two values.
pub fn variance(xs: &[f64]) -> Option<f64> {
    let (_, _, sd) = mean_sd(xs.iter().copied());
    sd.map(|s| s * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_mean_is_exact_on_constants() {
        let xs = vec![0.3; 1001];
        assert_eq!(mean(xs), Some(0.3));
    }

    #[test]
    fn mean_sd_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let (k, mm, sd) = mean_sd(xs);
        assert_eq!(k, 5);
        assert!((mm.unwrap() - m).abs() < 1e-14);
        assert!((sd.unwrap() - v.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn degenerate_sizes() {
        assert_eq!(mean_sd(std::iter::empty()), (0, None, None));
        assert_eq!(mean_sd([2.0]), (1, Some(2.0), None));
        assert_eq!(mean(std::iter::empty()), None);
    }
}
