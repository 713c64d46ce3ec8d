//! Gaussian kernel density estimation over flattened trajectories: the
//! likelihood fallback for models without a closed-form density.

use super::ModelError;

/// Bandwidth floor in meters; also the spike width for degenerate fits.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    points: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    /// All samples identical: the fit is a spike at the common point.
    pub degenerate: bool,
}

/// Fits a product-kernel Gaussian KDE with per-dimension Silverman
/// bandwidths, floored at [`BANDWIDTH_FLOOR`]. Needs at least two samples.
pub fn fit_density_estimator(samples: &[Vec<f64>]) -> Result<KernelDensity, ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::Degenerate(format!(
            "kde needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(ModelError::Shape("inconsistent kde sample dimensions".into()));
    }
    let n = samples.len() as f64;
    let d = dim as f64;
    // Silverman's rule per dimension
    let factor = (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0));
    let mut bandwidth = Vec::with_capacity(dim);
    let mut all_zero = true;
    for j in 0..dim {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
        let sigma = var.sqrt();
        if sigma > 0.0 {
            all_zero = false;
        }
        bandwidth.push((factor * sigma).max(BANDWIDTH_FLOOR));
    }
    Ok(KernelDensity { points: samples.to_vec(), bandwidth, degenerate: all_zero })
}

impl KernelDensity {
    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    /// Log-density at `y`; finite everywhere.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.dim(), "kde evaluation dimension mismatch");
        let log_norm: f64 = self
            .bandwidth
            .iter()
            .map(|h| h.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum();
        // logsumexp over kernel contributions
        let exponents: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                -0.5 * p
                    .iter()
                    .zip(y)
                    .zip(&self.bandwidth)
                    .map(|((xi, yi), h)| ((yi - xi) / h).powi(2))
                    .sum::<f64>()
            })
            .collect();
        let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
        max + sum.ln() - (self.points.len() as f64).ln() - log_norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn identical_samples_flagged_degenerate_with_peak_at_sample() {
        let kde = fit_density_estimator(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(kde.degenerate);
        let at_sample = kde.log_density(&[1.0, 2.0]);
        let nearby = kde.log_density(&[1.001, 2.0]);
        assert!(at_sample > nearby);
        assert!(at_sample.is_finite());
    }

    #[test]
    fn far_away_evaluation_is_finite_and_tiny() {
        let kde = fit_density_estimator(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let far = kde.log_density(&[1e6]);
        assert!(far.is_finite());
        assert!(far < -1e6);
    }

    #[test]
    fn mean_log_density_approaches_negative_entropy() {
        // standard 2d Gaussian: entropy H = log(2 pi e); with 10^4 samples
        // the mean KDE log-density at fresh draws sits within 5% of -H
        let mut rng = DetRng::new(99);
        let samples: Vec<Vec<f64>> =
            (0..10_000).map(|_| vec![rng.gauss(), rng.gauss()]).collect();
        let kde = fit_density_estimator(&samples).unwrap();
        assert!(!kde.degenerate);
        let n_eval = 2000;
        let mean_ld: f64 = (0..n_eval)
            .map(|_| kde.log_density(&[rng.gauss(), rng.gauss()]))
            .sum::<f64>()
            / n_eval as f64;
        let neg_entropy = -(2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let rel = (mean_ld - neg_entropy).abs() / neg_entropy.abs();
        assert!(rel < 0.05, "mean {mean_ld} vs {neg_entropy} (rel {rel})");
    }

    #[test]
    fn too_few_samples_rejected() {
        let err = fit_density_estimator(&[vec![0.0]]).unwrap_err();
        assert!(matches!(err, ModelError::Degenerate(_)));
    }
}
