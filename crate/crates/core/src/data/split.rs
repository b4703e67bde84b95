use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, InteractionTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub warm_frac: f64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            warm_frac: 0.8,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.warm_frac) || !unit(self.train_frac) || !unit(self.val_frac) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if self.train_frac + self.val_frac >= 1.0 {
            return Err(Error::Config("train_frac + val_frac must be < 1".into()));
        }
        Ok(())
    }
}

/// Item partition into warm / cold-validation / cold-test pools, and the
/// interactions that fall into each part. All tables keep global indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub warm_items: Vec<usize>,
    pub cold_val_items: Vec<usize>,
    pub cold_test_items: Vec<usize>,
    pub warm_train: InteractionTable,
    pub warm_val: InteractionTable,
    pub warm_test: InteractionTable,
    pub cold_val: InteractionTable,
    pub cold_test: InteractionTable,
}

/// Pool sizes for `num_items`: warm count rounds half up, and an odd cold
/// remainder puts the extra item in validation.
pub fn pool_sizes(num_items: usize, warm_frac: f64) -> (usize, usize, usize) {
    let warm = ((num_items as f64 * warm_frac) + 0.5).floor() as usize;
    let warm = warm.min(num_items);
    let cold = num_items - warm;
    let cold_test = cold / 2;
    (warm, cold - cold_test, cold_test)
}

pub fn split_dataset(
    table: &InteractionTable,
    features: &FeatureMatrix,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<DatasetSplits> {
    cfg.validate()?;
    let n = table.num_items();
    if features.rows() != n {
        return Err(Error::Dimension(format!(
            "{} feature rows for {n} items",
            features.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let (n_warm, n_val, _) = pool_sizes(n, cfg.warm_frac);
    let mut warm_items = order[..n_warm].to_vec();
    let mut cold_val_items = order[n_warm..n_warm + n_val].to_vec();
    let mut cold_test_items = order[n_warm + n_val..].to_vec();
    warm_items.sort_unstable();
    cold_val_items.sort_unstable();
    cold_test_items.sort_unstable();

    // 0 = warm, 1 = cold val, 2 = cold test
    let mut pool_of = vec![0u8; n];
    cold_val_items.iter().for_each(|&i| pool_of[i] = 1);
    cold_test_items.iter().for_each(|&i| pool_of[i] = 2);

    let mut parts: [Vec<(usize, usize)>; 5] = Default::default();
    for &(u, i) in table.pairs() {
        let slot = match pool_of[i] {
            1 => 3,
            2 => 4,
            _ => {
                let r: f64 = rng.random();
                if r < cfg.train_frac {
                    0
                } else if r < cfg.train_frac + cfg.val_frac {
                    1
                } else {
                    2
                }
            }
        };
        parts[slot].push((u, i));
    }

    let names = ["warm_train", "warm_val", "warm_test", "cold_val", "cold_test"];
    for (name, p) in names.iter().zip(&parts) {
        if p.is_empty() {
            return Err(Error::Empty(format!("split `{name}` has no interactions")));
        }
    }
    for (name, p) in [
        ("warm items", &warm_items),
        ("cold validation items", &cold_val_items),
        ("cold test items", &cold_test_items),
    ] {
        if p.is_empty() {
            return Err(Error::Empty(format!("split has no {name}")));
        }
    }

    let nu = table.num_users();
    let [train, val, test, cval, ctest] = parts;
    let t = |p| InteractionTable::from_parts_unchecked(nu, n, p);
    Ok(DatasetSplits {
        warm_items,
        cold_val_items,
        cold_test_items,
        warm_train: t(train),
        warm_val: t(val),
        warm_test: t(test),
        cold_val: t(cval),
        cold_test: t(ctest),
    })
}
