use serde::{Deserialize, Serialize};

use crate::data::{dot, normalize_row, FeatureMatrix, InteractionTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    /// Sum over the `m` most similar interacted items; `None` sums over all.
    pub neighbors: Option<usize>,
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == Some(0) {
            return Err(Error::Config("knn neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Content-similarity scorer over row-normalized features.
#[derive(Debug, Clone)]
pub struct KnnScorer {
    unit: FeatureMatrix,
    cfg: KnnConfig,
}

impl KnnScorer {
    pub fn new(features: &FeatureMatrix, cfg: KnnConfig) -> Result<Self> {
        cfg.validate()?;
        features.ensure_finite("knn features")?;
        let mut unit = features.clone();
        for r in 0..unit.rows() {
            normalize_row(unit.row_mut(r));
        }
        Ok(Self { unit, cfg })
    }

    /// Score of every `pool` item for a user who interacted with `history`.
    pub fn scores(&self, history: &[usize], pool: &[usize]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::Empty("user has no training interactions".into()));
        }
        let n = self.unit.rows();
        if let Some(&i) = history.iter().chain(pool).find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        let mut sims = Vec::with_capacity(history.len());
        Ok(pool
            .iter()
            .map(|&c| {
                let fc = self.unit.row(c);
                sims.clear();
                sims.extend(history.iter().map(|&i| dot(fc, self.unit.row(i))));
                match self.cfg.neighbors {
                    Some(m) if m < sims.len() => {
                        sims.sort_unstable_by(|a, b| b.total_cmp(a));
                        sims[..m].iter().sum()
                    }
                    _ => sims.iter().sum(),
                }
            })
            .collect())
    }
}

/// Sum of cosine similarities between each `cold_pool` item and the user's
/// training items (or the `m` most similar of them).
pub fn knn_scores(
    user: usize,
    train: &InteractionTable,
    features: &FeatureMatrix,
    cold_pool: &[usize],
    cfg: &KnnConfig,
) -> Result<Vec<f64>> {
    if user >= train.num_users() {
        return Err(Error::IndexOutOfRange {
            index: user,
            len: train.num_users(),
        });
    }
    let history: Vec<usize> = train
        .pairs()
        .iter()
        .filter(|&&(u, _)| u == user)
        .map(|&(_, i)| i)
        .collect();
    KnnScorer::new(features, *cfg)?.scores(&history, cold_pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_item_scores_one() {
        let f = feats(&[vec![0.3, 0.4], vec![0.6, 0.8]]);
        let t = InteractionTable::new(1, 2, vec![(0, 0)]).unwrap();
        let s = knn_scores(0, &t, &f, &[1], &KnnConfig::default()).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_items_score_zero() {
        let f = feats(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let t = InteractionTable::new(1, 3, vec![(0, 0), (0, 1)]).unwrap();
        let s = knn_scores(0, &t, &f, &[2], &KnnConfig::default()).unwrap();
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn sums_cosines() {
        // candidate e0; history items at cosine 0.5 and 0.25
        let c = vec![1.0, 0.0];
        let a = vec![0.5, (1.0f64 - 0.25).sqrt()];
        let b = vec![0.25, (1.0f64 - 0.0625).sqrt()];
        let f = feats(&[a, b, c]);
        let t = InteractionTable::new(1, 3, vec![(0, 0), (0, 1)]).unwrap();
        let s = knn_scores(0, &t, &f, &[2], &KnnConfig::default()).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-12);
        let top1 = knn_scores(0, &t, &f, &[2], &KnnConfig { neighbors: Some(1) }).unwrap();
        assert!((top1[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_feature_rows_contribute_nothing() {
        let f = feats(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let t = InteractionTable::new(1, 2, vec![(0, 0)]).unwrap();
        assert_eq!(knn_scores(0, &t, &f, &[1], &KnnConfig::default()).unwrap(), vec![0.0]);
    }

    #[test]
    fn user_without_history() {
        let f = feats(&[vec![1.0]]);
        let t = InteractionTable::new(2, 1, vec![(0, 0)]).unwrap();
        assert!(matches!(
            knn_scores(1, &t, &f, &[0], &KnnConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
