//! Candidate generation over the heterogeneous item/query/scenario/category graph.
//!
//! Conditional-probability edge tables are estimated from the corpus, composed
//! offline along three linear meta paths into per-item top-k query indexes, and
//! summed per user at request time into a 6-dimensional feature vector per
//! candidate query.

mod candidates;
mod index;
mod snapshot;
mod tables;

pub use candidates::{generate_candidates, meta_scores, CandidateFeatures, CandidateSet};
pub use index::{build_index, IndexSet, MetaPathIndex, PathType};
pub use snapshot::{
    index_file_name, load_index, load_indexes, save_index, save_indexes, source_checksums, table_checksum, SnapshotHeader, SNAPSHOT_FORMAT,
    SNAPSHOT_VERSION,
};
pub use tables::{estimate_aux_tables, estimate_i2q, AuxTables, CondProbTable, EdgeKind, TableSet};

use crate::corpus::Corpus;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum MetaPathError {
    #[error("search log is empty")]
    EmptyLog,
    #[error("corpus defines no scenarios")]
    MissingScenarioConfig,
    #[error("table {0:?} required by this path type is missing")]
    MissingTable(EdgeKind),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("{path}:{line}: malformed index snapshot: {reason}")]
    MalformedSnapshot {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MetaPathError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaPathConfig {
    /// Targets kept per source row of every edge table.
    pub table_k: usize,
    /// Queries kept per item in every meta-path index.
    pub index_k: usize,
    pub per_path_cap: usize,
    pub total_cap: usize,
}

impl Default for MetaPathConfig {
    fn default() -> Self {
        MetaPathConfig {
            table_k: 2000,
            index_k: 1000,
            per_path_cap: 200,
            total_cap: 600,
        }
    }
}

/// Estimates every edge table and builds the three indexes.
pub fn build_all(corpus: &Corpus, config: &MetaPathConfig) -> Result<(TableSet, IndexSet)> {
    let i2q = estimate_i2q(&corpus.search_log, corpus.n_items(), config.table_k)?;
    let aux = estimate_aux_tables(corpus, &i2q, config.table_k)?;
    let tables = TableSet::new(i2q, aux);
    let indexes = IndexSet {
        u2i2q: build_index(PathType::U2I2Q, &tables, config.index_k)?,
        u2i2s2q: build_index(PathType::U2I2S2Q, &tables, config.index_k)?,
        u2i2c2q: build_index(PathType::U2I2C2Q, &tables, config.index_k)?,
    };
    Ok((tables, indexes))
}

/// Sorts `(id, score)` pairs by score descending, ties by ascending id, then truncates.
pub(crate) fn top_k<I: Ord + Copy>(entries: &mut Vec<(I, f64)>, k: usize) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(k);
}
