use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradientCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares the gradient returned by `f` at `point` with central differences
/// of step `h`.
///
/// The error for coordinate `i` is `|a_i - n_i| / max(|a_i|, |n_i|, s)` where
/// `s = 1e-3 · max_j |n_j|` (or `1e-12` for an all-zero gradient). The floor
/// keeps coordinates whose true derivative is essentially zero from turning
/// round-off into a huge relative error.
pub fn check_gradients<F>(mut f: F, point: &[f64], h: f64) -> Result<GradientCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("finite-difference step {h} must be > 0")));
    }
    let (v0, analytic) = f(point)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite(format!("function value {v0} at the check point")));
    }
    if analytic.len() != point.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            point.len()
        )));
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient entry {i}")));
    }
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x)?.0;
        x[i] = point[i] - h;
        let fm = f(&x)?.0;
        x[i] = point[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("function value while perturbing coordinate {i}")));
        }
        numeric.push((fp - fm) / (2.0 * h));
    }
    let scale = numeric.iter().fold(0.0_f64, |m, n| m.max(n.abs()));
    let floor = if scale > 0.0 { 1e-3 * scale } else { 1e-12 };
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    })
}
