use crate::error::{domain, Result};

/// Least-squares slope of `log(gap)` against `log(n)`.
///
/// Needs at least four grid points spanning two decades and strictly
/// positive gaps.
pub fn fit_rate(ns: &[f64], gaps: &[f64]) -> Result<f64> {
    if ns.len() != gaps.len() {
        return Err(domain("grid and gaps differ in length"));
    }
    if ns.len() < 4 {
        return Err(domain("need at least four grid points"));
    }
    if ns.iter().chain(gaps).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(domain("grid points and gaps must be positive and finite"));
    }
    let (lo, hi) = ns
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &n| (a.min(n), b.max(n)));
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(domain("grid must span at least two decades"));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
