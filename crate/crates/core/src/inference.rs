//! Normal-approximation intervals and the cross-fitted estimation result.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided standard-normal critical value at the 95% level.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Two-sided critical value `Φ⁻¹((1 + level) / 2)`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg(format!("confidence level {level} outside (0, 1)")));
    }
    if level == 0.95 {
        return Ok(Z_95);
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// `beta_hat ± q(level) · sqrt(sigma2_hat / n)`.
pub fn make_ci(beta_hat: f64, sigma2_hat: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    let q = normal_quantile(level)?;
    if !(sigma2_hat >= 0.0) {
        return Err(Error::arg("variance must be non-negative"));
    }
    if n == 0 {
        return Err(Error::arg("n must be positive"));
    }
    let half = q * (sigma2_hat / n as f64).sqrt();
    Ok((beta_hat - half, beta_hat + half))
}

/// Output of a cross-fitted estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub beta_hat: f64,
    pub sigma2_hat: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub fold_betas: Vec<f64>,
    pub method: String,
    pub n: usize,
}

impl EstimationResult {
    /// Pool per-fold estimates: the point estimate is their mean and the
    /// interval uses the supplied pooled variance at the 95% level.
    pub fn from_folds(
        fold_betas: Vec<f64>,
        sigma2_hat: f64,
        n: usize,
        method: impl Into<String>,
    ) -> Result<Self> {
        if fold_betas.is_empty() {
            return Err(Error::EmptyFold);
        }
        let beta_hat = fold_betas.iter().sum::<f64>() / fold_betas.len() as f64;
        let (ci_low, ci_high) = make_ci(beta_hat, sigma2_hat, n, 0.95)?;
        Ok(Self {
            beta_hat,
            sigma2_hat,
            std_err: (sigma2_hat / n as f64).sqrt(),
            ci_low,
            ci_high,
            fold_betas,
            method: method.into(),
            n,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}
