//! Canonical data model, log ingestion, instance splitting and the synthetic
//! corpus generator.
//!
//! Raw files address entities by string keys. Ingestion remaps every key to a
//! dense 0-based id per entity kind (in order of appearance in the entities
//! file) and keeps the keys in [`Dictionaries`] so the corpus can be written
//! back out unchanged.

mod io;
mod split;
mod synth;
mod types;

pub use io::{
    ingest, ingest_dir, read_instances, write_behavior_log, write_dir, write_entities,
    write_instances, write_search_log, BEHAVIOR_FILE, ENTITIES_FILE, INSTANCES_FILE, SEARCH_FILE,
};
pub(crate) use io::{instance_line, pad_by_repetition};
pub use split::split_instances;
pub use synth::{generate_synthetic, PlantedTruth, SynthConfig, Synthetic, SYNTH_EPOCH};
pub use types::*;

use std::collections::HashMap;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("unknown {kind} id `{key}`")]
    UnknownId { kind: &'static str, key: String },
    #[error("empty file {0}")]
    EmptyFile(PathBuf),
    #[error("empty input")]
    EmptyInput,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// String keys for every dense id, indexed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionaries {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub queries: Vec<String>,
    pub categories: Vec<String>,
    pub scenarios: Vec<String>,
    pub words: Vec<String>,
}

/// An immutable, fully-resolved corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub users: Vec<User>,
    pub items: Vec<Item>,
    pub queries: Vec<Query>,
    pub scenarios: Vec<Scenario>,
    pub events: Vec<BehaviorEvent>,
    pub search_log: Vec<SearchLogRecord>,
    pub dict: Dictionaries,
    /// Per user, indices into `events` sorted by timestamp (stable).
    events_by_user: Vec<Vec<usize>>,
    keys: KeyIndex,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct KeyIndex {
    users: HashMap<String, u32>,
    items: HashMap<String, u32>,
    queries: HashMap<String, u32>,
}

fn key_map(keys: &[String]) -> HashMap<String, u32> {
    keys.iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i as u32))
        .collect()
}

impl Corpus {
    /// Assembles a corpus from already-dense parts. Ids must be consistent.
    pub fn from_parts(
        users: Vec<User>,
        items: Vec<Item>,
        queries: Vec<Query>,
        scenarios: Vec<Scenario>,
        events: Vec<BehaviorEvent>,
        search_log: Vec<SearchLogRecord>,
        dict: Dictionaries,
    ) -> Self {
        let mut events_by_user = vec![Vec::new(); users.len()];
        for (idx, ev) in events.iter().enumerate() {
            events_by_user[ev.user.index()].push(idx);
        }
        for list in &mut events_by_user {
            list.sort_by_key(|&i| events[i].timestamp);
        }
        let keys = KeyIndex {
            users: key_map(&dict.users),
            items: key_map(&dict.items),
            queries: key_map(&dict.queries),
        };
        Corpus {
            keys,
            users,
            items,
            queries,
            scenarios,
            events,
            search_log,
            dict,
            events_by_user,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn n_categories(&self) -> usize {
        self.dict.categories.len()
    }

    pub fn n_words(&self) -> usize {
        self.dict.words.len()
    }

    /// Size of the shared discrete feature-value vocabulary (max value id + 1).
    pub fn n_feature_values(&self) -> usize {
        let items = self.items.iter().flat_map(|i| i.discrete_feats.iter());
        let queries = self.queries.iter().flat_map(|q| q.discrete_feats.iter());
        items
            .chain(queries)
            .map(|&(_, v)| v as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn user_cont_dim(&self) -> usize {
        self.users.first().map_or(0, |u| u.continuous_feats.len())
    }

    pub fn item_cont_dim(&self) -> usize {
        self.items.first().map_or(0, |i| i.continuous_feats.len())
    }

    pub fn query_cont_dim(&self) -> usize {
        self.queries.first().map_or(0, |q| q.continuous_feats.len())
    }

    pub fn user_events(&self, user: UserId) -> impl Iterator<Item = &BehaviorEvent> + '_ {
        self.events_by_user
            .get(user.index())
            .into_iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }

    /// The at most [`MAX_HISTORY`] most recent events of `user` strictly before
    /// `decision_time`, oldest first.
    pub fn history_before(&self, user: UserId, decision_time: Timestamp) -> Vec<BehaviorEvent> {
        let Some(list) = self.events_by_user.get(user.index()) else {
            return Vec::new();
        };
        let end = list.partition_point(|&i| self.events[i].timestamp < decision_time);
        let start = end.saturating_sub(MAX_HISTORY);
        list[start..end].iter().map(|&i| self.events[i]).collect()
    }

    pub fn user_by_key(&self, key: &str) -> Option<UserId> {
        self.keys.users.get(key).copied().map(UserId)
    }

    pub fn item_by_key(&self, key: &str) -> Option<ItemId> {
        self.keys.items.get(key).copied().map(ItemId)
    }

    pub fn query_by_key(&self, key: &str) -> Option<QueryId> {
        self.keys.queries.get(key).copied().map(QueryId)
    }

    pub fn query_text(&self, query: QueryId) -> String {
        self.queries[query.index()]
            .text_tokens
            .iter()
            .map(|w| self.dict.words[w.index()].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn item_title(&self, item: ItemId) -> String {
        self.items[item.index()]
            .title_tokens
            .iter()
            .map(|w| self.dict.words[w.index()].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Number of items per category.
    pub fn category_frequencies(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_categories()];
        for item in &self.items {
            counts[item.category.index()] += 1;
        }
        counts
    }
}
