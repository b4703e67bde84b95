use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{welch_t_test, MetricReport, MetricValues};

pub const SELECT_K: usize = 20;
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

/// [`select_alpha_at`] with the default cutoff of 20.
pub fn select_alpha(val_reports: &[MetricReport], user_acc_budget: f64) -> f64 {
    select_alpha_at(val_reports, user_acc_budget, SELECT_K)
}

/// Among alphas whose validation NDCG@k stays within `budget` (relative) of
/// the unscaled NDCG@k, the one with the highest MDG-Min80%@k; ties go to the
/// smaller alpha. Falls back to 0 when nothing qualifies.
pub fn select_alpha_at(val_reports: &[MetricReport], user_acc_budget: f64, k: usize) -> f64 {
    let at_k: Vec<&MetricReport> = val_reports.iter().filter(|r| r.k == k).collect();
    let Some(base) = at_k.iter().find(|r| r.alpha == 0.0) else {
        log::warn!("no unscaled validation report at k={k}; keeping alpha = 0");
        return 0.0;
    };
    let threshold = if user_acc_budget.is_infinite() {
        f64::NEG_INFINITY
    } else {
        (1.0 - user_acc_budget) * base.values.ndcg
    };
    let mut best: Option<(f64, f64)> = None;
    for r in at_k.iter().filter(|r| r.values.ndcg >= threshold) {
        let score = r.values.mdg_min80;
        best = match best {
            None => Some((r.alpha, score)),
            Some((a, s)) if score > s || (score == s && r.alpha < a) => Some((r.alpha, score)),
            keep => keep,
        };
    }
    match best {
        Some((a, _)) => a,
        None => {
            log::warn!("no alpha within the accuracy budget; keeping alpha = 0");
            0.0
        }
    }
}

/// One metric compared across two sets of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub base_mean: f64,
    pub treated_mean: f64,
    pub delta: f64,
    pub p_value: f64,
    pub significant_gain: bool,
    pub significant_loss: bool,
    /// Relative change of at least 10% against the base mean.
    pub large_change: bool,
}

/// Per-metric mean difference and Welch p-value between two report sets, one
/// report per run on each side.
pub fn compare_runs(base: &[MetricReport], treated: &[MetricReport]) -> Result<Vec<ComparisonRow>> {
    if base.len() != treated.len() {
        return Err(Error::Dimension(format!(
            "{} base runs vs {} treated runs",
            base.len(),
            treated.len()
        )));
    }
    if base.len() < 2 {
        return Err(Error::InsufficientSample(
            "at least 2 runs per side are needed for a significance test".into(),
        ));
    }
    let k = base[0].k;
    if base.iter().chain(treated).any(|r| r.k != k) {
        return Err(Error::Dimension("reports mix different cutoffs".into()));
    }
    let column = |set: &[MetricReport], name: &str| -> Vec<f64> {
        set.iter().map(|r| r.values.get(name).unwrap()).collect()
    };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    MetricValues::NAMES
        .iter()
        .map(|&name| {
            let a = column(base, name);
            let b = column(treated, name);
            let test = welch_t_test(&b, &a)?;
            let (ma, mb) = (mean(&a), mean(&b));
            let delta = mb - ma;
            let significant = test.is_significant(SIGNIFICANCE_LEVEL);
            Ok(ComparisonRow {
                metric: name.to_string(),
                base_mean: ma,
                treated_mean: mb,
                delta,
                p_value: test.p_value,
                significant_gain: significant && delta > 0.0,
                significant_loss: significant && delta < 0.0,
                large_change: if ma != 0.0 {
                    delta.abs() >= 0.1 * ma.abs()
                } else {
                    delta != 0.0
                },
            })
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("metric,base_mean,treated_mean,delta,p_value,flags\n");
    for r in rows {
        let mut flags = Vec::new();
        if r.significant_gain {
            flags.push("significant_gain");
        }
        if r.significant_loss {
            flags.push("significant_loss");
        }
        if r.large_change {
            flags.push("change_ge_10pct");
        }
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.metric,
            r.base_mean,
            r.treated_mean,
            r.delta,
            r.p_value,
            flags.join("|")
        ));
    }
    out
}
