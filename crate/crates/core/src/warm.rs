//! Reference warm collaborative-filtering model: matrix factorization trained
//! with the BPR pairwise objective. Scores are pure dot products (no bias
//! terms), so any popularity signal the model learns has to live in the
//! embedding magnitudes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{dot, FeatureMatrix, InteractionTable};
use crate::error::{Error, Result};
use crate::metrics::recall_at_k;
use crate::ranking::{rank_topk, Exclusions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BprConfig {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Stop when warm-validation Recall@20 has not improved for this many
    /// epochs. `None` trains for the full epoch budget.
    pub early_stopping_patience: Option<usize>,
}

impl Default for BprConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            learning_rate: 0.05,
            l2_lambda: 0.0001,
            epochs: 30,
            negatives_per_positive: 1,
            init_scale: 0.1,
            seed: 0,
            early_stopping_patience: None,
        }
    }
}

impl BprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "latent_dim and negatives_per_positive must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::Config(
                "learning_rate and init_scale must be positive".into(),
            ));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("l2_lambda must be >= 0".into()));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(Error::Config("early stopping patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub user_embeddings: FeatureMatrix,
    pub item_embeddings: FeatureMatrix,
}

impl FactorModel {
    pub fn latent_dim(&self) -> usize {
        self.item_embeddings.cols()
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(score_pos - score_neg) + l2_lambda * l2_term`.
pub fn bpr_loss(score_pos: f64, score_neg: f64, l2_term: f64, l2_lambda: f64) -> f64 {
    softplus(score_neg - score_pos) + l2_lambda * l2_term
}

/// A `(user, positive item, negative item)` training triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Loss of one triple, with the L2 term taken over the three vectors involved.
pub fn triple_loss(u: &[f64], i: &[f64], j: &[f64], l2_lambda: f64) -> f64 {
    let l2 = dot(u, u) + dot(i, i) + dot(j, j);
    bpr_loss(dot(u, i), dot(u, j), l2, l2_lambda)
}

/// Gradient of [`triple_loss`] with respect to `u`, `i` and `j`, written into
/// the output slices.
pub fn triple_gradient(
    u: &[f64],
    i: &[f64],
    j: &[f64],
    l2_lambda: f64,
    gu: &mut [f64],
    gi: &mut [f64],
    gj: &mut [f64],
) {
    let x = dot(u, i) - dot(u, j);
    let g = sigmoid(-x);
    let two_l = 2.0 * l2_lambda;
    for f in 0..u.len() {
        gu[f] = -g * (i[f] - j[f]) + two_l * u[f];
        gi[f] = -g * u[f] + two_l * i[f];
        gj[f] = g * u[f] + two_l * j[f];
    }
}

/// Summed loss over `triples`.
pub fn bpr_objective(model: &FactorModel, triples: &[Triple], l2_lambda: f64) -> f64 {
    triples
        .iter()
        .map(|t| {
            triple_loss(
                model.user_embeddings.row(t.user),
                model.item_embeddings.row(t.pos),
                model.item_embeddings.row(t.neg),
                l2_lambda,
            )
        })
        .sum()
}

/// Gradient of [`bpr_objective`] as `(d users, d items)`.
pub fn bpr_gradient(
    model: &FactorModel,
    triples: &[Triple],
    l2_lambda: f64,
) -> (FeatureMatrix, FeatureMatrix) {
    let d = model.latent_dim();
    let mut gu_all = FeatureMatrix::zeros(model.user_embeddings.rows(), d);
    let mut gi_all = FeatureMatrix::zeros(model.item_embeddings.rows(), d);
    let (mut gu, mut gi, mut gj) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for t in triples {
        triple_gradient(
            model.user_embeddings.row(t.user),
            model.item_embeddings.row(t.pos),
            model.item_embeddings.row(t.neg),
            l2_lambda,
            &mut gu,
            &mut gi,
            &mut gj,
        );
        add(gu_all.row_mut(t.user), &gu);
        add(gi_all.row_mut(t.pos), &gi);
        add(gi_all.row_mut(t.neg), &gj);
    }
    (gu_all, gi_all)
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Gaussian(0, init_scale) initialization drawn from the config seed.
pub fn init_model(num_users: usize, num_items: usize, cfg: &BprConfig) -> Result<FactorModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_scale)
        .map_err(|e| Error::Config(format!("init_scale: {e}")))?;
    let mut draw = |rows: usize| {
        let v = (0..rows * cfg.latent_dim).map(|_| normal.sample(&mut rng)).collect();
        FeatureMatrix::from_vec(rows, cfg.latent_dim, v).expect("shape")
    };
    let user_embeddings = draw(num_users);
    let item_embeddings = draw(num_items);
    Ok(FactorModel {
        user_embeddings,
        item_embeddings,
    })
}

/// Trains on `train` for the configured number of epochs.
pub fn train_warm(train: &InteractionTable, cfg: &BprConfig) -> Result<FactorModel> {
    train_warm_with_validation(train, None, cfg)
}

/// Like [`train_warm`], optionally early-stopping on Recall@20 over `val`
/// (training items excluded from the candidates).
pub fn train_warm_with_validation(
    train: &InteractionTable,
    val: Option<&InteractionTable>,
    cfg: &BprConfig,
) -> Result<FactorModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("warm training set has no interactions".into()));
    }
    let mut model = init_model(train.num_users(), train.num_items(), cfg)?;
    // Separate stream so changing the init scheme does not reshuffle training.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_b9b5_0000_0001);
    let user_items = train.user_items();
    let num_items = train.num_items();
    let mut order: Vec<(usize, usize)> = train.pairs().to_vec();
    let d = cfg.latent_dim;
    let (mut gu, mut gi, mut gj) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    let stopping = match (cfg.early_stopping_patience, val) {
        (Some(p), Some(v)) => Some((p, v, Exclusions::from_table(train))),
        _ => None,
    };
    let mut best: Option<(f64, FactorModel)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (step, &(u, i)) in order.iter().enumerate() {
            let seen = &user_items[u];
            if seen.len() >= num_items {
                continue;
            }
            for _ in 0..cfg.negatives_per_positive {
                let j = loop {
                    let c = rng.random_range(0..num_items);
                    if seen.binary_search(&c).is_err() {
                        break c;
                    }
                };
                triple_gradient(
                    model.user_embeddings.row(u),
                    model.item_embeddings.row(i),
                    model.item_embeddings.row(j),
                    cfg.l2_lambda,
                    &mut gu,
                    &mut gi,
                    &mut gj,
                );
                let lr = cfg.learning_rate;
                let urow = model.user_embeddings.row_mut(u);
                urow.iter_mut().zip(&gu).for_each(|(p, g)| *p -= lr * g);
                let ok_u = urow.iter().all(|v| v.is_finite());
                let irow = model.item_embeddings.row_mut(i);
                irow.iter_mut().zip(&gi).for_each(|(p, g)| *p -= lr * g);
                let ok_i = irow.iter().all(|v| v.is_finite());
                let jrow = model.item_embeddings.row_mut(j);
                jrow.iter_mut().zip(&gj).for_each(|(p, g)| *p -= lr * g);
                let ok_j = jrow.iter().all(|v| v.is_finite());
                if !(ok_u && ok_i && ok_j) {
                    return Err(Error::Divergence { epoch, step });
                }
            }
        }

        if let Some((patience, val, excl)) = &stopping {
            let recall = validation_recall(&model, val, excl, 20)?;
            log::debug!("epoch {epoch}: warm validation recall@20 = {recall:.5}");
            match &best {
                Some((r, _)) if recall <= *r => {
                    since_best += 1;
                    if since_best >= *patience {
                        log::info!("early stop after epoch {epoch}");
                        break;
                    }
                }
                _ => {
                    best = Some((recall, model.clone()));
                    since_best = 0;
                }
            }
        }
    }
    Ok(best.map_or(model, |(_, m)| m))
}

fn validation_recall(
    model: &FactorModel,
    val: &InteractionTable,
    excl: &Exclusions,
    k: usize,
) -> Result<f64> {
    let relevant = val.user_items();
    let users: Vec<usize> = (0..val.num_users())
        .filter(|&u| !relevant[u].is_empty())
        .collect();
    if users.is_empty() {
        return Ok(0.0);
    }
    let pool: Vec<usize> = (0..model.item_embeddings.rows()).collect();
    let log = rank_topk(
        &model.user_embeddings,
        &model.item_embeddings,
        &pool,
        &users,
        k,
        Some(excl),
    )?;
    let total: f64 = log
        .users()
        .iter()
        .zip(log.lists())
        .map(|(&u, list)| recall_at_k(&list.items(), &relevant[u], k))
        .sum();
    Ok(total / users.len() as f64)
}

/// Dot-product scores of `user` against `items`.
pub fn score_warm(model: &FactorModel, user: usize, items: &[usize]) -> Result<Vec<f64>> {
    let nu = model.user_embeddings.rows();
    let ni = model.item_embeddings.rows();
    if user >= nu {
        return Err(Error::IndexOutOfRange {
            index: user,
            len: nu,
        });
    }
    let urow = model.user_embeddings.row(user);
    items
        .iter()
        .map(|&i| {
            if i >= ni {
                Err(Error::IndexOutOfRange { index: i, len: ni })
            } else {
                Ok(dot(urow, model.item_embeddings.row(i)))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_equal_scores_is_ln2() {
        assert!((bpr_loss(0.3, 0.3, 0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_saturates_to_zero() {
        let l = bpr_loss(1e6, -1e6, 0.0, 0.0);
        assert_eq!(l, 0.0);
        let l = bpr_loss(-1e6, 1e6, 0.0, 0.0);
        assert!(l.is_finite() && (l - 2e6).abs() < 1e-6);
    }

    #[test]
    fn loss_with_l2() {
        // -ln(sigmoid(1)) = ln(1 + e^-1)
        let expected = (1.0 + (-1.0f64).exp()).ln() + 1.0;
        let l = bpr_loss(1.0, 0.0, 2.0, 0.5);
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 1.313262).abs() < 1e-6);
    }

    fn toy() -> InteractionTable {
        InteractionTable::new(3, 4, vec![(0, 0), (0, 1), (1, 1), (2, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn zero_epochs_returns_init() {
        let cfg = BprConfig {
            epochs: 0,
            latent_dim: 4,
            ..Default::default()
        };
        let m = train_warm(&toy(), &cfg).unwrap();
        assert_eq!(m, init_model(3, 4, &cfg).unwrap());
    }

    #[test]
    fn deterministic() {
        let cfg = BprConfig {
            epochs: 5,
            latent_dim: 4,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(train_warm(&toy(), &cfg).unwrap(), train_warm(&toy(), &cfg).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = BprConfig {
            epochs: 200,
            latent_dim: 4,
            learning_rate: 1e150,
            init_scale: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            train_warm(&toy(), &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn score_by_hand() {
        let m = FactorModel {
            user_embeddings: FeatureMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            item_embeddings: FeatureMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 1.0]]).unwrap(),
        };
        assert_eq!(score_warm(&m, 0, &[0, 1]).unwrap(), vec![2.0, 0.0]);
        assert!(score_warm(&m, 1, &[0]).is_err());
        assert!(score_warm(&m, 0, &[2]).is_err());
    }

    #[test]
    fn early_stopping_keeps_a_model() {
        let cfg = BprConfig {
            epochs: 50,
            latent_dim: 4,
            early_stopping_patience: Some(2),
            ..Default::default()
        };
        let val = InteractionTable::new(3, 4, vec![(0, 2), (1, 0)]).unwrap();
        let m = train_warm_with_validation(&toy(), Some(&val), &cfg).unwrap();
        assert_eq!(m.item_embeddings.rows(), 4);
    }
}
