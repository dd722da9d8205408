use super::AutodiffError;

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>, AutodiffError> {
    if x.is_empty() {
        return Err(AutodiffError::Domain("softmax of an empty vector".into()));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFinite(format!(
            "softmax input contains {bad}"
        )));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Jacobian `dy_j / dx_i` of softmax expressed through its output `y`:
/// `y_i - y_i^2` on the diagonal and `-y_i y_j` elsewhere.
pub fn softmax_jacobian(y: &[f64]) -> Result<Vec<Vec<f64>>, AutodiffError> {
    if y.is_empty() {
        return Err(AutodiffError::Domain("empty distribution".into()));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(AutodiffError::Domain(format!(
            "entries must lie in [0, 1]: {y:?}"
        )));
    }
    let total: f64 = y.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AutodiffError::Domain(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            y.iter()
                .enumerate()
                .map(|(j, &yj)| if i == j { yi - yi * yi } else { -yi * yj })
                .collect()
        })
        .collect())
}
