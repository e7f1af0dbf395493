use super::{top_k, EdgeKind, Result, TableSet};
use crate::corpus::QueryId;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathType {
    U2I2Q,
    U2I2S2Q,
    U2I2C2Q,
}

impl PathType {
    pub const ALL: [PathType; 3] = [PathType::U2I2Q, PathType::U2I2S2Q, PathType::U2I2C2Q];

    pub fn slot(self) -> usize {
        match self {
            PathType::U2I2Q => 0,
            PathType::U2I2S2Q => 1,
            PathType::U2I2C2Q => 2,
        }
    }

    pub fn required_tables(self) -> &'static [EdgeKind] {
        match self {
            PathType::U2I2Q => &[EdgeKind::I2Q],
            PathType::U2I2S2Q => &[EdgeKind::I2S, EdgeKind::S2Q],
            PathType::U2I2C2Q => &[EdgeKind::I2C, EdgeKind::C2Q],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PathType::U2I2Q => "u2i2q",
            PathType::U2I2S2Q => "u2i2s2q",
            PathType::U2I2C2Q => "u2i2c2q",
        }
    }
}

impl fmt::Display for PathType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PathType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "u2i2q" => Ok(PathType::U2I2Q),
            "u2i2s2q" => Ok(PathType::U2I2S2Q),
            "u2i2c2q" => Ok(PathType::U2I2C2Q),
            other => Err(format!("unknown path type `{other}`")),
        }
    }
}

/// Per item, the top-`index_k` queries reachable along one meta path.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathIndex {
    pub path_type: PathType,
    pub index_k: usize,
    pub rows: Vec<Vec<(QueryId, f64)>>,
}

impl MetaPathIndex {
    pub fn row(&self, item: usize) -> &[(QueryId, f64)] {
        self.rows.get(item).map_or(&[], Vec::as_slice)
    }

    pub fn n_items(&self) -> usize {
        self.rows.len()
    }
}

/// Composes the path's edge tables into an item-keyed index.
///
/// Two-hop paths keep, per `(item, query)`, the best single path: the maximum
/// over intermediate nodes of the product of edge probabilities.
pub fn build_index(path_type: PathType, tables: &TableSet, index_k: usize) -> Result<MetaPathIndex> {
    for &kind in path_type.required_tables() {
        tables.get(kind)?;
    }
    let rows: Vec<Vec<(QueryId, f64)>> = match path_type {
        PathType::U2I2Q => {
            let i2q = tables.get(EdgeKind::I2Q)?;
            i2q.rows
                .par_iter()
                .map(|row| {
                    let mut out: Vec<(QueryId, f64)> =
                        row.iter().map(|&(q, p)| (QueryId(q), p)).collect();
                    top_k(&mut out, index_k);
                    out
                })
                .collect()
        }
        PathType::U2I2S2Q | PathType::U2I2C2Q => {
            let (first, second) = match path_type {
                PathType::U2I2S2Q => (EdgeKind::I2S, EdgeKind::S2Q),
                _ => (EdgeKind::I2C, EdgeKind::C2Q),
            };
            let first = tables.get(first)?;
            let second = tables.get(second)?;
            first
                .rows
                .par_iter()
                .map(|row| {
                    let mut best: HashMap<u32, f64> = HashMap::new();
                    for &(mid, p_mid) in row {
                        for &(q, p_q) in second.row(mid as usize) {
                            let score = p_mid * p_q;
                            let slot = best.entry(q).or_insert(0.0);
                            if score > *slot {
                                *slot = score;
                            }
                        }
                    }
                    let mut out: Vec<(QueryId, f64)> =
                        best.into_iter().map(|(q, s)| (QueryId(q), s)).collect();
                    top_k(&mut out, index_k);
                    out
                })
                .collect()
        }
    };
    Ok(MetaPathIndex {
        path_type,
        index_k,
        rows,
    })
}

/// The three indexes used by candidate generation.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    pub u2i2q: MetaPathIndex,
    pub u2i2s2q: MetaPathIndex,
    pub u2i2c2q: MetaPathIndex,
}

impl IndexSet {
    pub fn get(&self, path_type: PathType) -> &MetaPathIndex {
        match path_type {
            PathType::U2I2Q => &self.u2i2q,
            PathType::U2I2S2Q => &self.u2i2s2q,
            PathType::U2I2C2Q => &self.u2i2c2q,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetaPathIndex> {
        [&self.u2i2q, &self.u2i2s2q, &self.u2i2c2q].into_iter()
    }
}
