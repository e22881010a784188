use serde::{Deserialize, Serialize};

use super::TrainError;

/// Affine target standardization fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YNormalizer {
    pub mu: f64,
    pub sigma: f64,
}

impl YNormalizer {
    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mu) / self.sigma
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.sigma + self.mu
    }

    pub fn normalize_all(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().map(|&y| self.normalize(y)).collect()
    }

    pub fn denormalize_all(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.denormalize(z)).collect()
    }
}

/// Mean and population standard deviation; a standard deviation below
/// `1e-12` is replaced by 1.
pub fn fit_normalizer(train_y: &[f64]) -> Result<YNormalizer, TrainError> {
    if train_y.len() < 2 {
        return Err(TrainError::EmptyData(format!(
            "need at least 2 targets to fit a normalizer, got {}",
            train_y.len()
        )));
    }
    if train_y.iter().any(|y| !y.is_finite()) {
        return Err(TrainError::NonFinite("training target".into()));
    }
    let n = train_y.len() as f64;
    let mu = train_y.iter().sum::<f64>() / n;
    let var = train_y.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    Ok(YNormalizer {
        mu,
        sigma: if sigma < 1e-12 { 1.0 } else { sigma },
    })
}
