use super::{top_k, IndexSet, PathType};
use crate::corpus::{ItemId, QueryId, UserId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// `[Type1, Score1, Type2, Score2, Type3, Score3]` for one candidate query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub types: [u8; 3],
    pub scores: [f64; 3],
}

impl CandidateFeatures {
    pub fn set(&mut self, path: PathType, score: f64) {
        debug_assert!(score > 0.0);
        self.types[path.slot()] = 1;
        self.scores[path.slot()] = score;
    }

    pub fn to_vector(&self) -> [f64; 6] {
        [
            self.types[0] as f64,
            self.scores[0],
            self.types[1] as f64,
            self.scores[1],
            self.types[2] as f64,
            self.scores[2],
        ]
    }

    pub fn total_score(&self) -> f64 {
        self.scores.iter().sum()
    }

    pub fn is_consistent(&self) -> bool {
        (0..3).all(|j| match self.types[j] {
            0 => self.scores[j] == 0.0,
            1 => self.scores[j] > 0.0,
            _ => false,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user: UserId,
    /// Sorted by ascending query id.
    pub entries: Vec<(QueryId, CandidateFeatures)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, query: QueryId) -> Option<&CandidateFeatures> {
        self.entries
            .binary_search_by_key(&query, |e| e.0)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Features of `query`, all zeros when it is not a candidate.
    pub fn features_of(&self, query: QueryId) -> CandidateFeatures {
        self.get(query).copied().unwrap_or_default()
    }
}

fn distinct_items(recent_items: &[ItemId]) -> Vec<ItemId> {
    let mut seen = HashSet::new();
    recent_items
        .iter()
        .copied()
        .filter(|i| seen.insert(*i))
        .collect()
}

/// Uncapped MetaScore per query for one path type: the sum over the user's
/// distinct consumed items of the indexed path weight. Items are visited in
/// first-occurrence order.
pub fn meta_scores(recent_items: &[ItemId], indexes: &IndexSet, path: PathType) -> HashMap<QueryId, f64> {
    let index = indexes.get(path);
    let mut scores: HashMap<QueryId, f64> = HashMap::new();
    for item in distinct_items(recent_items) {
        for &(q, s) in index.row(item.index()) {
            *scores.entry(q).or_default() += s;
        }
    }
    scores
}

/// Scores the user's candidate queries from their recently consumed items.
///
/// Each path type contributes its `per_path_cap` best queries by MetaScore;
/// contributions are merged per query. If the union exceeds `total_cap`, the
/// queries with the largest summed score are kept.
pub fn generate_candidates(
    user: UserId,
    recent_items: &[ItemId],
    indexes: &IndexSet,
    per_path_cap: usize,
    total_cap: usize,
) -> CandidateSet {
    let mut merged: BTreeMap<QueryId, CandidateFeatures> = BTreeMap::new();
    for path in PathType::ALL {
        let mut ranked: Vec<(QueryId, f64)> =
            meta_scores(recent_items, indexes, path).into_iter().collect();
        top_k(&mut ranked, per_path_cap);
        for (q, s) in ranked {
            merged.entry(q).or_default().set(path, s);
        }
    }
    let mut entries: Vec<(QueryId, CandidateFeatures)> = merged.into_iter().collect();
    if entries.len() > total_cap {
        entries.sort_by(|a, b| b.1.total_score().total_cmp(&a.1.total_score()).then(a.0.cmp(&b.0)));
        entries.truncate(total_cap);
        entries.sort_by_key(|e| e.0);
    }
    CandidateSet { user, entries }
}
