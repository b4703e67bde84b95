//! Magnitude scaling of generated cold-item embeddings.
//!
//! Each nonzero cold vector `x` is rescaled by `gamma` so that
//! `|gamma x| - mu_w = (|x| - mu_w) / (1 + alpha)`, where `mu_w` is the mean
//! warm item magnitude. Directions are untouched, the magnitude map is affine
//! and increasing, and the spread of magnitudes shrinks by `1 + alpha`. As
//! `alpha` grows every vector approaches magnitude `mu_w`.

use serde::{Deserialize, Serialize};

use crate::data::{norm, FeatureMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_SWEEP: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub alpha: f64,
    pub sweep: Vec<f64>,
    pub mu_source: MuSource,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            sweep: DEFAULT_SWEEP.to_vec(),
            mu_source: MuSource::WarmEmbeddings,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be a finite value >= 0".into()));
        }
        if self.sweep.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Config("sweep values must be positive".into()));
        }
        Ok(())
    }
}

/// Where the reference magnitude `mu_w` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSource {
    /// The pre-trained warm item embeddings used at serving time.
    WarmEmbeddings,
    /// The cold encoder's outputs for the warm items' content.
    GeneratedWarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeStats {
    pub mu_w: f64,
    pub cold_magnitudes: Vec<f64>,
    pub cold_mean: f64,
    pub cold_std: f64,
}

impl MagnitudeStats {
    pub fn compute(warm: &FeatureMatrix, cold: &FeatureMatrix) -> Result<Self> {
        let mu_w = warm_mean_magnitude(warm)?;
        let cold_magnitudes = cold.row_norms();
        let (cold_mean, cold_std) = mean_std(&cold_magnitudes);
        Ok(Self {
            mu_w,
            cold_magnitudes,
            cold_mean,
            cold_std,
        })
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean row L2 norm.
pub fn warm_mean_magnitude(warm: &FeatureMatrix) -> Result<f64> {
    if warm.rows() == 0 {
        return Err(Error::Empty("no warm embeddings".into()));
    }
    let mu = warm.row_norms().iter().sum::<f64>() / warm.rows() as f64;
    if !mu.is_finite() {
        return Err(Error::NonFinite("warm embedding magnitudes".into()));
    }
    if mu <= 0.0 {
        return Err(Error::Empty("all warm embeddings are zero".into()));
    }
    Ok(mu)
}

/// `gamma = (m + alpha mu_w) / (m (1 + alpha))`; 1 for a zero magnitude.
pub fn scaling_factor(magnitude: f64, mu_w: f64, alpha: f64) -> f64 {
    if magnitude == 0.0 {
        return 1.0;
    }
    (magnitude + alpha * mu_w) / (magnitude * (1.0 + alpha))
}

/// Magnitude after scaling, `mu_w + (m - mu_w) / (1 + alpha)`.
pub fn scaled_magnitude(magnitude: f64, mu_w: f64, alpha: f64) -> f64 {
    if magnitude == 0.0 {
        return 0.0;
    }
    mu_w + (magnitude - mu_w) / (1.0 + alpha)
}

pub fn scale_embeddings(cold: &FeatureMatrix, mu_w: f64, alpha: f64) -> Result<FeatureMatrix> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if !(mu_w > 0.0) || !mu_w.is_finite() {
        return Err(Error::Config(format!("mu_w must be finite and > 0, got {mu_w}")));
    }
    cold.ensure_finite("cold embeddings")?;
    let mut out = cold.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let gamma = scaling_factor(norm(row), mu_w, alpha);
        row.iter_mut().for_each(|v| *v *= gamma);
    }
    Ok(out)
}

/// Every nonzero row replaced by `mu_w * x / |x|`; the `alpha -> inf` limit.
pub fn normalize_to(cold: &FeatureMatrix, mu_w: f64) -> FeatureMatrix {
    let mut out = cold.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v *= mu_w / n);
        }
    }
    out
}
