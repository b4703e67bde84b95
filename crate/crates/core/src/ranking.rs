//! Exact batch top-k scoring over a candidate pool.
//!
//! Scores are dot products accumulated in `f64`. Every list is ordered by
//! descending score with ties broken by ascending item index, which makes the
//! output independent of pool order and of thread count.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dot, FeatureMatrix, InteractionTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList(pub Vec<ScoredItem>);

impl RankedList {
    pub fn items(&self) -> Vec<usize> {
        self.0.iter().map(|s| s.item).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based position of `item`, if present.
    pub fn position(&self, item: usize) -> Option<usize> {
        self.0.iter().position(|s| s.item == item).map(|p| p + 1)
    }
}

/// Per-user top-k lists over one candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingLog {
    k: usize,
    pool: Vec<usize>,
    users: Vec<usize>,
    lists: Vec<RankedList>,
}

impl RankingLog {
    pub fn new(k: usize, pool: Vec<usize>, users: Vec<usize>, lists: Vec<RankedList>) -> Result<Self> {
        if users.len() != lists.len() {
            return Err(Error::Dimension(format!(
                "{} users but {} lists",
                users.len(),
                lists.len()
            )));
        }
        Ok(Self {
            k,
            pool,
            users,
            lists,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn users(&self) -> &[usize] {
        &self.users
    }

    pub fn lists(&self) -> &[RankedList] {
        &self.lists
    }

    /// The same log cut down to the first `k` entries of every list.
    pub fn truncated(&self, k: usize) -> Self {
        let lists = self
            .lists
            .iter()
            .map(|l| RankedList(l.0.iter().take(k).copied().collect()))
            .collect();
        Self {
            k: k.min(self.k),
            pool: self.pool.clone(),
            users: self.users.clone(),
            lists,
        }
    }
}

/// Items to leave out of each user's candidates, as sorted per-user lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exclusions(Vec<Vec<usize>>);

impl Exclusions {
    pub fn from_table(table: &InteractionTable) -> Self {
        Self(table.user_items())
    }

    pub fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        lists.iter_mut().for_each(|l| {
            l.sort_unstable();
            l.dedup();
        });
        Self(lists)
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.0
            .get(user)
            .is_some_and(|l| l.binary_search(&item).is_ok())
    }
}

/// Descending score, then ascending index. `-0.0` and `0.0` count as a tie.
#[inline]
fn ranking_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or_else(|| b.score.total_cmp(&a.score))
        .then(a.item.cmp(&b.item))
}

fn check_inputs(
    user_vectors: &FeatureMatrix,
    item_vectors: &FeatureMatrix,
    pool: &[usize],
    users: &[usize],
    k: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if user_vectors.cols() != item_vectors.cols() {
        return Err(Error::Dimension(format!(
            "user dim {} vs item dim {}",
            user_vectors.cols(),
            item_vectors.cols()
        )));
    }
    if let Some(&i) = pool.iter().find(|&&i| i >= item_vectors.rows()) {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: item_vectors.rows(),
        });
    }
    if let Some(&u) = users.iter().find(|&&u| u >= user_vectors.rows()) {
        return Err(Error::IndexOutOfRange {
            index: u,
            len: user_vectors.rows(),
        });
    }
    Ok(())
}

fn top_k_for_user(
    user: usize,
    user_vectors: &FeatureMatrix,
    item_vectors: &FeatureMatrix,
    pool: &[usize],
    k: usize,
    exclusions: Option<&Exclusions>,
) -> Result<RankedList> {
    let uvec = user_vectors.row(user);
    let mut scored: Vec<ScoredItem> = pool
        .iter()
        .filter(|&&i| !exclusions.is_some_and(|e| e.contains(user, i)))
        .map(|&i| ScoredItem {
            item: i,
            score: dot(uvec, item_vectors.row(i)),
        })
        .collect();
    if scored.is_empty() {
        return Err(Error::Empty(format!(
            "candidate pool is empty for user {user} after exclusions"
        )));
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, ranking_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(ranking_order);
    Ok(RankedList(scored))
}

/// Top-k of precomputed `scores`, aligned with `pool`.
pub fn top_k_of(pool: &[usize], scores: &[f64], k: usize) -> RankedList {
    let mut scored: Vec<ScoredItem> = pool
        .iter()
        .zip(scores)
        .map(|(&item, &score)| ScoredItem { item, score })
        .collect();
    if k > 0 && scored.len() > k {
        scored.select_nth_unstable_by(k - 1, ranking_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(ranking_order);
    scored.truncate(k);
    RankedList(scored)
}

/// Top-k lists for `users` over `pool`, computed in parallel over users.
pub fn rank_topk(
    user_vectors: &FeatureMatrix,
    item_vectors: &FeatureMatrix,
    pool: &[usize],
    users: &[usize],
    k: usize,
    exclusions: Option<&Exclusions>,
) -> Result<RankingLog> {
    check_inputs(user_vectors, item_vectors, pool, users, k)?;
    let lists = users
        .par_iter()
        .map(|&u| top_k_for_user(u, user_vectors, item_vectors, pool, k, exclusions))
        .collect::<Result<Vec<_>>>()?;
    RankingLog::new(k, pool.to_vec(), users.to_vec(), lists)
}

/// Single-threaded [`rank_topk`].
pub fn rank_topk_serial(
    user_vectors: &FeatureMatrix,
    item_vectors: &FeatureMatrix,
    pool: &[usize],
    users: &[usize],
    k: usize,
    exclusions: Option<&Exclusions>,
) -> Result<RankingLog> {
    check_inputs(user_vectors, item_vectors, pool, users, k)?;
    let lists = users
        .iter()
        .map(|&u| top_k_for_user(u, user_vectors, item_vectors, pool, k, exclusions))
        .collect::<Result<Vec<_>>>()?;
    RankingLog::new(k, pool.to_vec(), users.to_vec(), lists)
}

/// 1-based rank of `target` among `pool`: one plus the number of items
/// scoring strictly higher, plus the number of equal-scored items with a
/// smaller index.
pub fn rank_of_item(
    user_vector: &[f64],
    item_vectors: &FeatureMatrix,
    pool: &[usize],
    target: usize,
) -> Result<usize> {
    if !pool.contains(&target) {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: pool.len(),
        });
    }
    if let Some(&i) = pool.iter().find(|&&i| i >= item_vectors.rows()) {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: item_vectors.rows(),
        });
    }
    let t = ScoredItem {
        item: target,
        score: dot(user_vector, item_vectors.row(target)),
    };
    let ahead = pool
        .iter()
        .filter(|&&i| i != target)
        .filter(|&&i| {
            let s = ScoredItem {
                item: i,
                score: dot(user_vector, item_vectors.row(i)),
            };
            ranking_order(&s, &t) == Ordering::Less
        })
        .count();
    Ok(ahead + 1)
}

/// Number of evaluated users whose top-k list contains each pool item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCounts {
    pub items: Vec<usize>,
    pub counts: Vec<u64>,
    pub num_users: usize,
}

impl PredictionCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, item: usize) -> Option<u64> {
        self.items.iter().position(|&i| i == item).map(|p| self.counts[p])
    }
}

pub fn prediction_counts(log: &RankingLog) -> PredictionCounts {
    let mut slot: HashMap<usize, usize> = HashMap::with_capacity(log.pool.len());
    for (p, &i) in log.pool.iter().enumerate() {
        slot.entry(i).or_insert(p);
    }
    let mut counts = vec![0u64; log.pool.len()];
    for list in &log.lists {
        for s in &list.0 {
            if let Some(&p) = slot.get(&s.item) {
                counts[p] += 1;
            }
        }
    }
    PredictionCounts {
        items: log.pool.clone(),
        counts,
        num_users: log.users.len(),
    }
}

/// Writes `user_id,rank,item_id,score` rows; `item_labels` is indexed by the
/// item indices stored in the log.
pub fn write_ranking_csv(
    path: &Path,
    log: &RankingLog,
    user_labels: &[String],
    item_labels: &[String],
) -> Result<()> {
    let mut out = String::from("user_id,rank,item_id,score\n");
    for (&u, list) in log.users.iter().zip(&log.lists) {
        for (r, s) in list.0.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.6}",
                user_labels[u],
                r + 1,
                item_labels[s.item],
                s.score
            )
            .unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a ranking CSV back, mapping labels to indices. The log's pool is
/// `pool`; `k` is the longest list found.
pub fn read_ranking_csv(
    path: &Path,
    user_index: &HashMap<String, usize>,
    item_index: &HashMap<String, usize>,
    pool: Vec<usize>,
) -> Result<RankingLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "user_id,rank,item_id,score" => {}
        _ => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: "expected header `user_id,rank,item_id,score`".into(),
            })
        }
    }
    let mut users: Vec<usize> = Vec::new();
    let mut lists: Vec<RankedList> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.into(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let u = *user_index.get(f[0]).ok_or_else(|| bad("unknown user"))?;
        let rank: usize = f[1].parse().map_err(|_| bad("bad rank"))?;
        let item = *item_index.get(f[2]).ok_or_else(|| bad("unknown item"))?;
        let score: f64 = f[3].parse().map_err(|_| bad("bad score"))?;
        if users.last() != Some(&u) {
            users.push(u);
            lists.push(RankedList::default());
        }
        let list = lists.last_mut().unwrap();
        if rank != list.len() + 1 {
            return Err(bad("ranks must be consecutive from 1 for each user"));
        }
        list.0.push(ScoredItem { item, score });
    }
    let k = lists.iter().map(RankedList::len).max().unwrap_or(0);
    RankingLog::new(k, pool, users, lists)
}

pub fn write_counts_csv(path: &Path, counts: &PredictionCounts, item_labels: &[String]) -> Result<()> {
    let mut out = String::from("item_id,count\n");
    for (&i, &c) in counts.items.iter().zip(&counts.counts) {
        writeln!(out, "{},{c}", item_labels[i]).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(scores: &[f64]) -> (FeatureMatrix, FeatureMatrix) {
        let users = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        let items = FeatureMatrix::from_rows(&scores.iter().map(|&s| vec![s]).collect::<Vec<_>>())
            .unwrap();
        (users, items)
    }

    #[test]
    fn picks_highest_scores() {
        let (u, it) = column(&[0.9, 0.1, 0.5]);
        let log = rank_topk(&u, &it, &[0, 1, 2], &[0], 2, None).unwrap();
        assert_eq!(log.lists()[0].items(), vec![0, 2]);
    }

    #[test]
    fn ties_break_by_index() {
        let (u, it) = column(&[0.5, 0.5, 0.5]);
        let log = rank_topk(&u, &it, &[2, 1, 0], &[0], 2, None).unwrap();
        assert_eq!(log.lists()[0].items(), vec![0, 1]);
    }

    #[test]
    fn short_pool_gives_short_list() {
        let (u, it) = column(&[0.1, 0.2]);
        let log = rank_topk(&u, &it, &[0, 1], &[0], 5, None).unwrap();
        assert_eq!(log.lists()[0].items(), vec![1, 0]);
    }

    #[test]
    fn exclusions_remove_candidates() {
        let (u, it) = column(&[0.9, 0.1, 0.5]);
        let ex = Exclusions::from_lists(vec![vec![0]]);
        let log = rank_topk(&u, &it, &[0, 1, 2], &[0], 2, Some(&ex)).unwrap();
        assert_eq!(log.lists()[0].items(), vec![2, 1]);

        let ex = Exclusions::from_lists(vec![vec![0, 1, 2]]);
        assert!(matches!(
            rank_topk(&u, &it, &[0, 1, 2], &[0], 2, Some(&ex)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn rank_of_item_cases() {
        let (u, it) = column(&[0.2, 0.9, 0.5]);
        assert_eq!(rank_of_item(u.row(0), &it, &[0, 1, 2], 1).unwrap(), 1);
        let (u, it) = column(&[0.5, 0.5, 0.1]);
        assert_eq!(rank_of_item(u.row(0), &it, &[0, 1, 2], 1).unwrap(), 2);
        assert!(rank_of_item(u.row(0), &it, &[0, 1], 2).is_err());
    }

    #[test]
    fn counts() {
        let log = RankingLog::new(
            2,
            vec![3, 7, 9],
            vec![0, 1],
            vec![
                RankedList(vec![ScoredItem { item: 7, score: 1.0 }, ScoredItem { item: 3, score: 0.5 }]),
                RankedList(vec![ScoredItem { item: 7, score: 1.0 }, ScoredItem { item: 9, score: 0.5 }]),
            ],
        )
        .unwrap();
        let c = prediction_counts(&log);
        assert_eq!(c.get(7), Some(2));
        assert_eq!(c.get(3), Some(1));
        assert_eq!(c.total(), 4);
        let t = prediction_counts(&log.truncated(1));
        assert_eq!(t.get(9), Some(0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let (u, it) = column(&[0.25, 0.75, 0.5]);
        let log = rank_topk(&u, &it, &[0, 1, 2], &[0], 3, None).unwrap();
        let ul = vec!["alice".to_string()];
        let il: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        write_ranking_csv(&p, &log, &ul, &il).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "user_id,rank,item_id,score\nalice,1,b,0.750000\nalice,2,c,0.500000\nalice,3,a,0.250000\n"
        );
        let ui: HashMap<String, usize> = [("alice".to_string(), 0)].into();
        let ii: HashMap<String, usize> = il.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let back = read_ranking_csv(&p, &ui, &ii, vec![0, 1, 2]).unwrap();
        assert_eq!(back.lists()[0].items(), log.lists()[0].items());
    }
}
