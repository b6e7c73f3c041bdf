//! Small statistics helpers shared by the Monte Carlo harnesses.

/// Sample mean and standard error of the mean.
///
/// Returns `(mean, None)` for samples of size < 2, matching the
/// degenerate-sample convention used throughout the diagnostics.
pub fn mean_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

/// Sample covariance of two equally long series.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1) as f64
}

/// Ordinary least squares line fit `y = a + b x`.
///
/// Returns `(intercept, slope, slope_se)`. `slope_se` is `None` with fewer
/// than three points.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, Option<f64>) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if xs.len() >= 3 {
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        Some((ss_res / (n - 2.0) / sxx).sqrt())
    } else {
        None
    };
    (intercept, slope, se)
}

/// Bin edges for `n_bins` equal-probability bins of `values`.
///
/// Returns the interior edges (length `n_bins - 1`), so bin `b` holds values
/// in `(edge[b-1], edge[b]]` with open ends at the extremes.
pub fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..n_bins)
        .map(|b| {
            let q = b as f64 / n_bins as f64;
            let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
            sorted[idx]
        })
        .collect()
}

/// Index of the bin `value` falls into, given interior `edges`.
pub fn bin_of(value: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| value > e).count()
}
