//! Small univariate helpers.

use crate::scalar::Real;

/// Median; the mean of the two central values for even lengths.
pub fn median<T: Real>(values: &[T]) -> T {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v: Vec<T> = values.to_vec();
    v.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / T::lit(2.0)
    }
}

/// Median absolute deviation scaled by 1.4826 for consistency at the normal.
pub fn mad<T: Real>(values: &[T]) -> T {
    let med = median(values);
    let dev: Vec<T> = values.iter().map(|&v| (v - med).abs()).collect();
    median(&dev) * T::lit(1.482_602_218_505_602)
}

/// Ranks `1..=n` with ties given their average rank.
pub fn ranks<T: Real>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].as_f64().total_cmp(&values[b].as_f64()));
    let mut out = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = T::lit((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Sample skewness `m₃ / m₂^{3/2}` (population moments).
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}
