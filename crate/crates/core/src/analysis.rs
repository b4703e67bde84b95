//! Plot-ready diagnostic tables for exposure bias, and rank correlation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{dot, normalize_row, FeatureMatrix, InteractionTable};
use crate::error::{Error, Result};
use crate::ranking::PredictionCounts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    /// Item indices; printed through the label table when one is given.
    Item(Vec<usize>),
    Count(Vec<u64>),
    Real(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Item(v) => v.len(),
            ColumnData::Count(v) => v.len(),
            ColumnData::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// Named per-item columns of equal length, tagged with the figure they back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTable {
    pub figure: String,
    pub columns: Vec<Column>,
}

impl DiagnosticTable {
    fn new(figure: &str, columns: Vec<(&str, ColumnData)>) -> Self {
        let columns: Vec<Column> = columns
            .into_iter()
            .map(|(n, data)| Column {
                name: n.to_string(),
                data,
            })
            .collect();
        debug_assert!(columns.windows(2).all(|w| w[0].data.len() == w[1].data.len()));
        Self {
            figure: figure.to_string(),
            columns,
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn items(&self) -> Option<&[usize]> {
        match self.column("item_id") {
            Some(ColumnData::Item(v)) => Some(v),
            _ => None,
        }
    }

    pub fn counts(&self, name: &str) -> Option<&[u64]> {
        match self.column(name) {
            Some(ColumnData::Count(v)) => Some(v),
            _ => None,
        }
    }

    pub fn reals(&self, name: &str) -> Option<&[f64]> {
        match self.column(name) {
            Some(ColumnData::Real(v)) => Some(v),
            _ => None,
        }
    }

    /// CSV with a `# <figure>` comment line ahead of the column header.
    pub fn to_csv(&self, item_labels: Option<&[String]>) -> String {
        let mut out = format!("# {}\n", self.figure);
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for r in 0..self.len() {
            let fields: Vec<String> = self
                .columns
                .iter()
                .map(|c| match &c.data {
                    ColumnData::Item(v) => match item_labels {
                        Some(l) => l[v[r]].clone(),
                        None => v[r].to_string(),
                    },
                    ColumnData::Count(v) => v[r].to_string(),
                    ColumnData::Real(v) => format!("{:.6}", v[r]),
                })
                .collect();
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path, item_labels: Option<&[String]>) -> Result<()> {
        fs::write(path, self.to_csv(item_labels)).map_err(|e| Error::io(path, e))
    }
}

fn slot_map(items: &[usize], space: usize) -> Result<Vec<usize>> {
    let mut slot = vec![usize::MAX; space];
    for (p, &i) in items.iter().enumerate() {
        if i >= space {
            return Err(Error::Dimension(format!(
                "pool item {i} outside an item space of {space}"
            )));
        }
        slot[i] = p;
    }
    Ok(slot)
}

/// Prediction count against number of holdout (target) users, for items with
/// at least one holdout interaction.
pub fn fig1_table(counts: &PredictionCounts, holdout: &InteractionTable) -> Result<DiagnosticTable> {
    let slot = slot_map(&counts.items, holdout.num_items().max(
        counts.items.iter().max().map_or(0, |m| m + 1),
    ))?;
    let pop = holdout.popularity();
    for (i, &p) in pop.iter().enumerate() {
        if p > 0 && slot.get(i).is_none_or(|&s| s == usize::MAX) {
            return Err(Error::Dimension(format!(
                "holdout item {i} is not part of the counted pool"
            )));
        }
    }
    let (mut items, mut targets, mut preds) = (Vec::new(), Vec::new(), Vec::new());
    for (&i, &c) in counts.items.iter().zip(&counts.counts) {
        let t = pop.get(i).copied().unwrap_or(0);
        if t > 0 {
            items.push(i);
            targets.push(t);
            preds.push(c);
        }
    }
    Ok(DiagnosticTable::new(
        "fig1: prediction count vs target users",
        vec![
            ("item_id", ColumnData::Item(items)),
            ("target_users", ColumnData::Count(targets)),
            ("pred_count", ColumnData::Count(preds)),
        ],
    ))
}

/// The `ceil(frac * n)` most predicted items, by descending count then
/// ascending index.
pub fn most_predicted(counts: &PredictionCounts, frac: f64) -> Vec<usize> {
    let n = counts.items.len();
    let take = ((n as f64 * frac).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        counts.counts[b]
            .cmp(&counts.counts[a])
            .then(counts.items[a].cmp(&counts.items[b]))
    });
    order[..take].iter().map(|&p| counts.items[p]).collect()
}

/// Maximum training popularity among each cold item's `n_neighbors` most
/// cosine-similar warm items (ties to the lower index).
pub fn neighbor_popularity(
    cold_subset: &[usize],
    features: &FeatureMatrix,
    warm_items: &[usize],
    warm_popularity: &[u64],
    n_neighbors: usize,
) -> Result<DiagnosticTable> {
    if warm_items.is_empty() {
        return Err(Error::Empty("no warm items to search".into()));
    }
    if warm_popularity.len() != warm_items.len() {
        return Err(Error::Dimension(format!(
            "{} popularity values for {} warm items",
            warm_popularity.len(),
            warm_items.len()
        )));
    }
    if n_neighbors == 0 || n_neighbors > warm_items.len() {
        return Err(Error::Config(format!(
            "n_neighbors must lie in 1..={}",
            warm_items.len()
        )));
    }
    if let Some(&i) = cold_subset
        .iter()
        .chain(warm_items)
        .find(|&&i| i >= features.rows())
    {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: features.rows(),
        });
    }
    let mut warm_unit = features.select_rows(warm_items)?;
    for r in 0..warm_unit.rows() {
        normalize_row(warm_unit.row_mut(r));
    }
    let mut out_pop = Vec::with_capacity(cold_subset.len());
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(warm_items.len());
    for &c in cold_subset {
        let mut fc = features.row(c).to_vec();
        normalize_row(&mut fc);
        sims.clear();
        sims.extend((0..warm_items.len()).map(|p| (dot(&fc, warm_unit.row(p)), p)));
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.total_cmp(&a.0).then(warm_items[a.1].cmp(&warm_items[b.1]))
        };
        if sims.len() > n_neighbors {
            sims.select_nth_unstable_by(n_neighbors - 1, order);
        }
        let max_pop = sims[..n_neighbors]
            .iter()
            .map(|&(_, p)| warm_popularity[p])
            .max()
            .unwrap_or(0);
        out_pop.push(max_pop);
    }
    Ok(DiagnosticTable::new(
        "fig2: max popularity among nearest warm neighbors",
        vec![
            ("item_id", ColumnData::Item(cold_subset.to_vec())),
            ("neighbor_max_pop", ColumnData::Count(out_pop)),
        ],
    ))
}

/// Prediction count against embedding magnitude. `counts.items` index rows of
/// `cold_embeddings`.
pub fn fig3_table(counts: &PredictionCounts, cold_embeddings: &FeatureMatrix) -> Result<DiagnosticTable> {
    if let Some(&i) = counts.items.iter().find(|&&i| i >= cold_embeddings.rows()) {
        return Err(Error::Dimension(format!(
            "pool item {i} has no embedding row ({} rows)",
            cold_embeddings.rows()
        )));
    }
    let mags = counts
        .items
        .iter()
        .map(|&i| crate::data::norm(cold_embeddings.row(i)))
        .collect();
    Ok(DiagnosticTable::new(
        "fig3: prediction count vs embedding magnitude",
        vec![
            ("item_id", ColumnData::Item(counts.items.clone())),
            ("magnitude", ColumnData::Real(mags)),
            ("pred_count", ColumnData::Count(counts.counts.clone())),
        ],
    ))
}

/// Nonzero prediction counts sorted descending against their percentile
/// position `100 i / n_nonzero`.
pub fn percentile_curve(counts: &PredictionCounts) -> Result<DiagnosticTable> {
    let mut nz: Vec<u64> = counts.counts.iter().copied().filter(|&c| c > 0).collect();
    if nz.is_empty() {
        return Err(Error::Empty("all prediction counts are zero".into()));
    }
    nz.sort_unstable_by(|a, b| b.cmp(a));
    let n = nz.len() as f64;
    let pct = (1..=nz.len()).map(|i| 100.0 * i as f64 / n).collect();
    Ok(DiagnosticTable::new(
        "fig4: prediction count vs prediction count percentile",
        vec![
            ("percentile", ColumnData::Real(pct)),
            ("pred_count", ColumnData::Count(nz)),
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationStats {
    pub top_n: usize,
    pub top_n_share: f64,
    pub zero_pred_items: usize,
    pub pool_size: usize,
    /// `num_users * min(k, pool size)`, the number of top-k slots handed out.
    pub total_slots: u64,
}

pub fn concentration(
    counts: &PredictionCounts,
    top_n: usize,
    k: usize,
    num_users: usize,
) -> Result<ConcentrationStats> {
    let pool = counts.counts.len();
    if top_n > pool {
        return Err(Error::Config(format!("top_n {top_n} exceeds pool size {pool}")));
    }
    let total: u64 = counts.total();
    if total == 0 {
        return Err(Error::Empty("all prediction counts are zero".into()));
    }
    let mut sorted = counts.counts.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let top: u64 = sorted[..top_n].iter().sum();
    Ok(ConcentrationStats {
        top_n,
        top_n_share: top as f64 / total as f64,
        zero_pred_items: counts.counts.iter().filter(|&&c| c == 0).count(),
        pool_size: pool,
        total_slots: (num_users * k.min(pool)) as u64,
    })
}

/// Average ranks (1-based, ties share their mean rank).
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &order[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of midranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientSample("need at least 2 pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let rx = midranks(xs);
    let ry = midranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InsufficientSample("zero variance in a ranking".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
