//! Desk-scale synthetic datasets with Zipf-skewed popularity.
//!
//! Item latents are standard normal. Each item's popularity rank comes from an
//! appeal score that mixes the first latent coordinate with independent noise,
//! so content similar to a popular item tends to belong to a popular item too.
//! Users pick `interactions_per_user` distinct items with probability
//! proportional to `exp(affinity * z_u . z_i + beta * ln p_i)`; content vectors
//! are a random linear image of the latents plus Gaussian noise, row-normalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::normalize_row;
use super::{FeatureMatrix, InteractionTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub zipf_exponent: f64,
    pub popularity_weight: f64,
    pub feature_noise: f64,
    pub interactions_per_user: usize,
    /// Scale of the user-item latent affinity term; 0 makes choices depend on
    /// popularity alone.
    pub affinity_scale: f64,
    /// Weight of the first latent coordinate in the appeal score that orders
    /// popularity ranks, in [0, 1].
    pub popularity_content_corr: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 1400,
            latent_dim: 16,
            feature_dim: 64,
            zipf_exponent: 1.2,
            popularity_weight: 1.0,
            feature_noise: 0.1,
            interactions_per_user: 20,
            affinity_scale: 1.25,
            popularity_content_corr: 0.95,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0
            || self.num_items == 0
            || self.latent_dim == 0
            || self.feature_dim == 0
            || self.interactions_per_user == 0
        {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("zipf_exponent must be > 0".into()));
        }
        if !(self.feature_noise >= 0.0) || !(self.affinity_scale >= 0.0) {
            return Err(Error::Config(
                "feature_noise and affinity_scale must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.popularity_content_corr) {
            return Err(Error::Config(
                "popularity_content_corr must lie in [0, 1]".into(),
            ));
        }
        if self.interactions_per_user >= self.num_items {
            return Err(Error::Config(format!(
                "interactions_per_user ({}) must be < num_items ({})",
                self.interactions_per_user, self.num_items
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub interactions: InteractionTable,
    pub features: FeatureMatrix,
    /// Normalized Zipf weight `p_i` of every item.
    pub popularity: Vec<f64>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> FeatureMatrix {
    let values = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            scale * v
        })
        .collect::<Vec<f64>>();
    FeatureMatrix::from_vec(rows, cols, values).expect("shape")
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.latent_dim;
    let n = cfg.num_items;

    let items = normal_matrix(&mut rng, n, d, 1.0);
    let users = normal_matrix(
        &mut rng,
        cfg.num_users,
        d,
        cfg.affinity_scale / (d as f64).sqrt(),
    );

    let rho = cfg.popularity_content_corr;
    let mix = (1.0 - rho * rho).sqrt();
    let appeal: Vec<f64> = (0..n)
        .map(|i| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            rho * items.row(i)[0] + mix * eta
        })
        .collect();
    let mut by_appeal: Vec<usize> = (0..n).collect();
    by_appeal.sort_by(|&a, &b| appeal[b].total_cmp(&appeal[a]).then(a.cmp(&b)));
    let mut popularity = vec![0.0; n];
    for (rank0, &i) in by_appeal.iter().enumerate() {
        popularity[i] = ((rank0 + 1) as f64).powf(-cfg.zipf_exponent);
    }
    let total: f64 = popularity.iter().sum();
    popularity.iter_mut().for_each(|p| *p /= total);
    let log_pop: Vec<f64> = popularity.iter().map(|p| cfg.popularity_weight * p.ln()).collect();

    // Gumbel-top-k draws distinct items with successive-sampling probabilities.
    let mut pairs = Vec::with_capacity(cfg.num_users * cfg.interactions_per_user);
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(n);
    for u in 0..cfg.num_users {
        let zu = users.row(u);
        keys.clear();
        for i in 0..n {
            let logit = super::features::dot(zu, items.row(i)) + log_pop[i];
            let uniform: f64 = rng.random::<f64>();
            let gumbel = -(-(uniform.max(f64::MIN_POSITIVE)).ln()).ln();
            keys.push((logit + gumbel, i));
        }
        let k = cfg.interactions_per_user;
        keys.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = keys[..k].iter().map(|&(_, i)| i).collect();
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }
    let interactions = InteractionTable::new(cfg.num_users, n, pairs)?;

    let projection = normal_matrix(&mut rng, cfg.feature_dim, d, 1.0 / (d as f64).sqrt());
    let mut features = FeatureMatrix::zeros(n, cfg.feature_dim);
    for i in 0..n {
        let zi = items.row(i);
        let row = features.row_mut(i);
        for (r, out) in row.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *out = super::features::dot(projection.row(r), zi) + cfg.feature_noise * noise;
        }
        normalize_row(row);
    }

    Ok(SyntheticData {
        interactions,
        features,
        popularity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let cfg = SyntheticConfig {
            num_users: 2000,
            num_items: 1400,
            latent_dim: 16,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.interactions.num_users(), 2000);
        assert_eq!(d.interactions.num_items(), 1400);
        assert_eq!(d.interactions.len(), 2000 * cfg.interactions_per_user);
        assert_eq!(d.features.rows(), 1400);
        assert_eq!(d.features.cols(), cfg.feature_dim);
        assert!((d.popularity.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bit_identical_for_same_seed() {
        let cfg = SyntheticConfig {
            num_users: 100,
            num_items: 80,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_interactions_per_user() {
        let cfg = SyntheticConfig {
            num_items: 20,
            interactions_per_user: 20,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn features_are_unit_rows() {
        let cfg = SyntheticConfig {
            num_users: 50,
            num_items: 60,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        for n in d.features.row_norms() {
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
