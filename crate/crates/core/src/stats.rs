//! Summation and summary statistics that do not depend on evaluation order.

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    // Shifting by the first value keeps constant inputs exact.
    let x0 = xs[0];
    let dev: Vec<f64> = xs.iter().map(|x| x - x0).collect();
    x0 + pairwise_sum(&dev) / xs.len() as f64
}

/// Unbiased sample standard deviation (0 for fewer than two values).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&dev) / (xs.len() - 1) as f64).sqrt()
}

/// Weighted mean with weights normalised to sum one.
pub fn weighted_mean(xs: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => mean(xs),
        Some(w) => {
            let Some(&x0) = xs.first() else { return f64::NAN };
            let prod: Vec<f64> = xs.iter().zip(w).map(|(x, w)| (x - x0) * w).collect();
            x0 + pairwise_sum(&prod) / pairwise_sum(w)
        }
    }
}

/// Standard error of a (possibly weighted) mean; weights are treated as
/// frequency weights rescaled to `n` records.
pub fn std_error(xs: &[f64], weights: Option<&[f64]>) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    match weights {
        None => sample_std(xs) / (n as f64).sqrt(),
        Some(w) => {
            let m = weighted_mean(xs, Some(w));
            let total = pairwise_sum(w);
            let dev: Vec<f64> = xs.iter().zip(w).map(|(x, w)| w * (x - m) * (x - m)).collect();
            let var = pairwise_sum(&dev) / total * n as f64 / (n - 1) as f64;
            (var / n as f64).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_sum_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn constant_values_have_zero_spread() {
        assert_eq!(sample_std(&[3.0; 10]), 0.0);
        assert_eq!(std_error(&[3.0; 10], Some(&[0.1; 10])), 0.0);
        assert_eq!(std_error(&[0.1 + 0.2; 7], None), 0.0);
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let xs = [1.0, 4.0, -2.0, 7.5];
        let w = [1.0; 4];
        assert!((weighted_mean(&xs, Some(&w)) - mean(&xs)).abs() < 1e-15);
        assert!((std_error(&xs, Some(&w)) - std_error(&xs, None)).abs() < 1e-15);
    }
}
