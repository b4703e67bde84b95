//! Item-oriented accuracy (MDG) and exposure diversity.

use serde::{Deserialize, Serialize};

use super::accuracy::discount;
use crate::error::{Error, Result};

/// Mean discounted gain of one item over its target users, given each user's
/// 1-based rank for the item. Ranks beyond `k` contribute nothing.
pub fn mdg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("item has no target users".into()));
    }
    // fold from +0.0: `sum` starts at -0.0, which would leak into the CSVs
    let gain = ranks
        .iter()
        .filter(|&&r| r >= 1 && r <= k)
        .map(|&r| discount(r))
        .fold(0.0, |acc, g| acc + g);
    Ok(gain / ranks.len() as f64)
}

/// Per-item MDG for items with at least one target user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemMdgTable {
    pub items: Vec<usize>,
    pub target_users: Vec<usize>,
    pub mdg: Vec<f64>,
}

impl ItemMdgTable {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdgAggregates {
    pub min80: f64,
    pub max5: f64,
    pub all: f64,
}

/// Mean MDG of the worst-served 80% of items, the best-served 5%, and all.
///
/// Items are ordered by ascending MDG then ascending index; both cut sizes
/// round up.
pub fn mdg_aggregates(table: &ItemMdgTable) -> Result<MdgAggregates> {
    let n = table.len();
    if n == 0 {
        return Err(Error::Empty("no items with target users".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        table.mdg[a]
            .total_cmp(&table.mdg[b])
            .then(table.items[a].cmp(&table.items[b]))
    });
    let sorted: Vec<f64> = order.iter().map(|&p| table.mdg[p]).collect();
    let bottom = (8 * n).div_ceil(10);
    let top = n.div_ceil(20);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(MdgAggregates {
        min80: mean(&sorted[..bottom]),
        max5: mean(&sorted[n - top..]),
        all: mean(&sorted),
    })
}

/// One minus the Gini coefficient of the counts, zero counts included.
pub fn gini_diversity(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("all prediction counts are zero".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| (2.0 * (i + 1) as f64 - n - 1.0) * c as f64)
        .sum();
    Ok(1.0 - weighted / (n * total as f64))
}
