//! Accuracy, item fairness and exposure metrics, and run-level significance.

mod accuracy;
mod fairness;
mod significance;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use accuracy::{ndcg_at_k, recall_at_k};
pub use fairness::{gini_diversity, mdg_aggregates, mdg_at_k, ItemMdgTable, MdgAggregates};
pub use significance::{welch_t_test, WelchTest};

use crate::data::InteractionTable;
use crate::error::{Error, Result};
use crate::ranking::{prediction_counts, PredictionCounts, RankingLog};

/// The six reported metric values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub ndcg: f64,
    pub recall: f64,
    pub mdg_min80: f64,
    pub mdg_max5: f64,
    pub mdg_all: f64,
    pub gini_div: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 6] = [
        "ndcg",
        "recall",
        "mdg_min80",
        "mdg_max5",
        "mdg_all",
        "gini_div",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "ndcg" => self.ndcg,
            "recall" => self.recall,
            "mdg_min80" => self.mdg_min80,
            "mdg_max5" => self.mdg_max5,
            "mdg_all" => self.mdg_all,
            "gini_div" => self.gini_div,
            _ => return None,
        })
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.ndcg,
            self.recall,
            self.mdg_min80,
            self.mdg_max5,
            self.mdg_all,
            self.gini_div,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            ndcg: v[0],
            recall: v[1],
            mdg_min80: v[2],
            mdg_max5: v[3],
            mdg_all: v[4],
            gini_div: v[5],
        }
    }
}

/// Metric values plus the run metadata that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub pool: String,
    pub alpha: f64,
    pub k: usize,
    pub run: usize,
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub values: MetricValues,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "model,pool,alpha,k,run,seed,num_users,num_items,ndcg,recall,mdg_min80,mdg_max5,mdg_all,gini_div";

    pub fn csv_row(&self) -> String {
        let v = self.values;
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.model,
            self.pool,
            self.alpha,
            self.k,
            self.run,
            self.seed,
            self.num_users,
            self.num_items,
            v.ndcg,
            v.recall,
            v.mdg_min80,
            v.mdg_max5,
            v.mdg_all,
            v.gini_div
        )
    }
}

/// Everything derived from one ranking log and its holdout interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub values: MetricValues,
    pub item_mdg: ItemMdgTable,
    pub counts: PredictionCounts,
    pub num_users: usize,
}

/// Evaluates the first `k` entries of every list in `log` against `holdout`,
/// whose item indices live in the same space as the log's items.
///
/// Users without holdout interactions are ignored; NDCG and Recall average
/// over the rest. MDG covers pool items with at least one target user among
/// the ranked users, and Gini-Diversity covers the whole pool.
pub fn evaluate(log: &RankingLog, holdout: &InteractionTable, k: usize) -> Result<Evaluation> {
    let log = log.truncated(k);
    let relevant = holdout.user_items();
    let pool = log.pool();
    let mut slot = vec![usize::MAX; holdout.num_items()];
    for (p, &i) in pool.iter().enumerate() {
        if i < slot.len() {
            slot[i] = p;
        }
    }

    let mut ndcg = 0.0;
    let mut recall = 0.0;
    let mut evaluated = 0usize;
    let mut ranks: Vec<Vec<usize>> = vec![Vec::new(); pool.len()];
    for (&u, list) in log.users().iter().zip(log.lists()) {
        let rel = match relevant.get(u) {
            Some(r) if !r.is_empty() => r,
            _ => continue,
        };
        let items = list.items();
        ndcg += ndcg_at_k(&items, rel, k);
        recall += recall_at_k(&items, rel, k);
        evaluated += 1;
        for &i in rel {
            let p = slot[i];
            if p == usize::MAX {
                return Err(Error::Dimension(format!(
                    "holdout item {i} is not in the candidate pool"
                )));
            }
            ranks[p].push(list.position(i).unwrap_or(usize::MAX));
        }
    }
    if evaluated == 0 {
        return Err(Error::Empty("no ranked user has holdout interactions".into()));
    }

    let mut item_mdg = ItemMdgTable::default();
    for (p, r) in ranks.iter().enumerate() {
        if r.is_empty() {
            continue;
        }
        item_mdg.items.push(pool[p]);
        item_mdg.target_users.push(r.len());
        item_mdg.mdg.push(mdg_at_k(r, k)?);
    }
    let agg = mdg_aggregates(&item_mdg)?;
    let counts = prediction_counts(&log);
    let gini_div = gini_diversity(&counts.counts)?;

    Ok(Evaluation {
        values: MetricValues {
            ndcg: ndcg / evaluated as f64,
            recall: recall / evaluated as f64,
            mdg_min80: agg.min80,
            mdg_max5: agg.max5,
            mdg_all: agg.all,
            gini_div,
        },
        item_mdg,
        counts,
        num_users: evaluated,
    })
}

pub fn write_reports_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_item_mdg_csv(path: &Path, table: &ItemMdgTable, item_labels: &[String]) -> Result<()> {
    let mut out = String::from("item_id,num_target_users,mdg\n");
    for ((&i, &n), &m) in table.items.iter().zip(&table.target_users).zip(&table.mdg) {
        writeln!(out, "{},{n},{m:.6}", item_labels[i]).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
