/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` at `params` with central
/// differences `(f(p + eps) - f(p - eps)) / 2 eps`, one coordinate at a time.
/// Returns the largest relative error.
pub fn grad_check<F>(mut f: F, params: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let plus = f(&theta).0;
        theta[i] = orig - eps;
        let minus = f(&theta).0;
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
