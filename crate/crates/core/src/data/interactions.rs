use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deduplicated implicit-feedback `(user, item)` pairs over contiguous indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionTable {
    num_users: usize,
    num_items: usize,
    pairs: Vec<(usize, usize)>,
}

impl InteractionTable {
    /// Builds a table, dropping repeated pairs (first occurrence wins).
    pub fn new(num_users: usize, num_items: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        let mut kept = Vec::with_capacity(pairs.len());
        for (u, i) in pairs {
            if u >= num_users {
                return Err(Error::IndexOutOfRange {
                    index: u,
                    len: num_users,
                });
            }
            if i >= num_items {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: num_items,
                });
            }
            if seen.insert((u, i)) {
                kept.push((u, i));
            }
        }
        Ok(Self {
            num_users,
            num_items,
            pairs: kept,
        })
    }

    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            pairs: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs per item.
    pub fn popularity(&self) -> Vec<u64> {
        let mut pop = vec![0u64; self.num_items];
        for &(_, i) in &self.pairs {
            pop[i] += 1;
        }
        pop
    }

    /// Items of each user, sorted ascending.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.pairs {
            out[u].push(i);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// Users of each item, sorted ascending.
    pub fn item_users(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_items];
        for &(u, i) in &self.pairs {
            out[i].push(u);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// Keeps only pairs whose item is in `pool`, re-indexing items to their
    /// position in `pool`.
    pub fn restrict_items(&self, pool: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.num_items];
        for (pos, &i) in pool.iter().enumerate() {
            if i >= self.num_items {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.num_items,
                });
            }
            local[i] = pos;
        }
        let pairs = self
            .pairs
            .iter()
            .filter(|&&(_, i)| local[i] != usize::MAX)
            .map(|&(u, i)| (u, local[i]))
            .collect();
        Ok(Self {
            num_users: self.num_users,
            num_items: pool.len(),
            pairs,
        })
    }

    pub(crate) fn from_parts_unchecked(
        num_users: usize,
        num_items: usize,
        pairs: Vec<(usize, usize)>,
    ) -> Self {
        Self {
            num_users,
            num_items,
            pairs,
        }
    }
}

/// A table read from disk together with the external ID of every index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadedInteractions {
    pub table: InteractionTable,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Reads `user<TAB>item` lines. Blank lines and `#` comments are skipped; IDs
/// get contiguous indices in first-seen order and duplicate pairs are dropped.
pub fn load_interactions(path: &Path) -> Result<LoadedInteractions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(path, &text)
}

pub(crate) fn parse_interactions(path: &Path, text: &str) -> Result<LoadedInteractions> {
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (u, i) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), None) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: n + 1,
                    msg: "expected `user_id<TAB>item_id`".into(),
                })
            }
        };
        let ui = *users.entry(u).or_insert_with(|| {
            user_ids.push(u.to_string());
            user_ids.len() - 1
        });
        let ii = *items.entry(i).or_insert_with(|| {
            item_ids.push(i.to_string());
            item_ids.len() - 1
        });
        pairs.push((ui, ii));
    }
    if pairs.is_empty() {
        return Err(Error::Empty(format!(
            "no interactions in {}",
            path.display()
        )));
    }
    let table = InteractionTable::new(user_ids.len(), item_ids.len(), pairs)?;
    Ok(LoadedInteractions {
        table,
        user_ids,
        item_ids,
    })
}

/// Writes pairs as `user<TAB>item` lines using the given external IDs.
pub fn write_interactions(
    path: &Path,
    table: &InteractionTable,
    user_ids: &[String],
    item_ids: &[String],
) -> Result<()> {
    let mut out = String::with_capacity(table.len() * 12);
    for &(u, i) in table.pairs() {
        out.push_str(&user_ids[u]);
        out.push('\t');
        out.push_str(&item_ids[i]);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
