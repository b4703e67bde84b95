//! Content-based cold-item encoders supervised by warm embeddings, and the
//! content-similarity KNN baseline.

mod knn;
mod mlp;
mod ridge;

use serde::{Deserialize, Serialize};

pub use knn::{knn_scores, KnnConfig, KnnScorer};
pub use mlp::{mlp_loss_and_gradient, train_mlp, Activation, MlpConfig, MlpParams};
pub use ridge::ridge_solve;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    Ridge { lambda: f64 },
    Mlp(MlpConfig),
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Ridge { lambda: 3.0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::Ridge { lambda } if !(*lambda >= 0.0) || !lambda.is_finite() => {
                Err(Error::Config("ridge lambda must be finite and >= 0".into()))
            }
            EncoderConfig::Ridge { .. } => Ok(()),
            EncoderConfig::Mlp(c) => c.validate(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            EncoderConfig::Ridge { .. } => "ridge",
            EncoderConfig::Mlp(_) => "mlp",
        }
    }
}

/// Maps content vectors to the warm model's embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColdEncoder {
    Linear { weights: FeatureMatrix, lambda: f64 },
    Mlp { params: MlpParams, cfg: MlpConfig },
}

impl ColdEncoder {
    pub fn input_dim(&self) -> usize {
        match self {
            ColdEncoder::Linear { weights, .. } => weights.rows(),
            ColdEncoder::Mlp { params, .. } => params.w1.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ColdEncoder::Linear { weights, .. } => weights.cols(),
            ColdEncoder::Mlp { params, .. } => params.w2.cols(),
        }
    }
}

pub fn fit_encoder(
    features_warm: &FeatureMatrix,
    embeddings_warm: &FeatureMatrix,
    cfg: &EncoderConfig,
) -> Result<ColdEncoder> {
    cfg.validate()?;
    match cfg {
        EncoderConfig::Ridge { lambda } => Ok(ColdEncoder::Linear {
            weights: ridge_solve(features_warm, embeddings_warm, *lambda)?,
            lambda: *lambda,
        }),
        EncoderConfig::Mlp(c) => Ok(ColdEncoder::Mlp {
            params: train_mlp(features_warm, embeddings_warm, c)?,
            cfg: c.clone(),
        }),
    }
}

/// One embedding row per content row.
pub fn generate_cold(encoder: &ColdEncoder, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.cols() != encoder.input_dim() {
        return Err(Error::Dimension(format!(
            "features have {} columns, encoder expects {}",
            features.cols(),
            encoder.input_dim()
        )));
    }
    let out = match encoder {
        ColdEncoder::Linear { weights, .. } => {
            let d = weights.cols();
            let mut out = FeatureMatrix::zeros(features.rows(), d);
            for r in 0..features.rows() {
                let orow = out.row_mut(r);
                for (f, &x) in features.row(r).iter().enumerate() {
                    if x != 0.0 {
                        orow.iter_mut()
                            .zip(weights.row(f))
                            .for_each(|(o, w)| *o += x * w);
                    }
                }
            }
            out
        }
        ColdEncoder::Mlp { params, .. } => params.forward(features),
    };
    out.ensure_finite("generated embeddings")?;
    Ok(out)
}
