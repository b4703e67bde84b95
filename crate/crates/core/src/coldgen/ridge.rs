use nalgebra::DMatrix;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

fn to_na(m: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> FeatureMatrix {
    let mut out = FeatureMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

/// Solves `(F^T F + lambda I) W = F^T E` for `W` (feature_dim x embedding_dim).
pub fn ridge_solve(features: &FeatureMatrix, targets: &FeatureMatrix, lambda: f64) -> Result<FeatureMatrix> {
    if features.rows() != targets.rows() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} embedding rows",
            features.rows(),
            targets.rows()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    features.ensure_finite("warm features")?;
    targets.ensure_finite("warm embeddings")?;
    let f = to_na(features);
    let e = to_na(targets);
    let ft = f.transpose();
    let mut gram = &ft * &f;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = &ft * &e;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "normal equations are not positive definite at lambda = {lambda}; use lambda > 0"
        ))
    })?;
    let w = chol.solve(&rhs);
    let w = from_na(&w);
    w.ensure_finite("ridge weights")?;
    Ok(w)
}
