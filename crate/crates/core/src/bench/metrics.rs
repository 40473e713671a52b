//! Comparison metrics against a reference planner.

use super::BenchError;

/// Percent of the reference search area saved: `100·(A* - A)/A*`.
pub fn exp_metric(area_ref: usize, area: usize) -> Result<f64, BenchError> {
    if area_ref == 0 {
        return Err(BenchError::ZeroReference("area"));
    }
    Ok(100.0 * (area_ref as f64 - area as f64) / area_ref as f64)
}

/// Percent of the reference runtime saved: `100·(t* - t)/t*`.
pub fn rt_metric(t_ref: f64, t: f64) -> Result<f64, BenchError> {
    if !(t_ref > 0.0) {
        return Err(BenchError::ZeroReference("time"));
    }
    Ok(100.0 * (t_ref - t) / t_ref)
}

/// `sqrt(area) + length`, with `area` the count of extra visited cells.
pub fn al_metric(area: usize, length: f64) -> f64 {
    (area as f64).sqrt() + length
}

/// Mean and population standard deviation; NaN for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_cases() {
        assert_eq!(exp_metric(40, 40).unwrap(), 0.0);
        assert_eq!(exp_metric(100, 150).unwrap(), -50.0);
        assert!(exp_metric(0, 3).is_err());
    }

    #[test]
    fn rt_cases() {
        assert_eq!(rt_metric(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(rt_metric(1.5, 3.0).unwrap(), -100.0);
        assert!(rt_metric(0.0, 1.0).is_err());
    }

    #[test]
    fn al_cases() {
        assert_eq!(al_metric(0, 10.0), 10.0);
        assert_eq!(al_metric(100, 73.0), 83.0);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
