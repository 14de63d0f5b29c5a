use crate::error::{ensure_finite, MrisError, Result};

/// Divisor applied to target images (≈ 95th percentile of raw target values).
pub const TARGET_SCALE: f64 = 3.0;

/// Linear-interpolation order statistic at fraction `q ∈ [0, 1]`: position
/// `q·(n − 1)` in the sorted values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MrisError::Empty("percentile input"));
    }
    ensure_finite(values, "percentile input")?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Maps the minimum to 0 and the 99th percentile to 0.99. Values above the
/// percentile land above 0.99 unless `clip` is set.
pub fn normalize_query(x: &[f64], clip: bool) -> Result<Vec<f64>> {
    let p = percentile(x, 0.99)?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    if p <= lo {
        return Err(MrisError::Degenerate(
            "cannot normalize a query whose 99th percentile equals its minimum".into(),
        ));
    }
    let scale = 0.99 / (p - lo);
    Ok(x.iter()
        .map(|&v| {
            let n = (v - lo) * scale;
            if clip {
                n.min(0.99)
            } else {
                n
            }
        })
        .collect())
}

pub fn normalize_target(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v / TARGET_SCALE).collect()
}

pub fn denormalize_target(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v * TARGET_SCALE).collect()
}
