//! JSON-lines index snapshots.
//!
//! Line 1 is a [`SnapshotHeader`]; every following line is one non-empty row
//! `{"item": i, "queries": [[q, score], ...]}`. The header carries a SHA-256 of
//! the row lines and of each source table, both verified on load.

use super::{
    CondProbTable, EdgeKind, IndexSet, MetaPathError, MetaPathIndex, PathType, Result, TableSet,
};
use crate::corpus::QueryId;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const SNAPSHOT_FORMAT: &str = "qsuggest-index";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub path_type: PathType,
    pub index_k: usize,
    pub n_items: usize,
    pub source_checksums: BTreeMap<EdgeKind, String>,
    pub rows_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RowLine {
    item: usize,
    queries: Vec<(u32, f64)>,
}

/// SHA-256 over the table's kind and the exact bits of every entry.
pub fn table_checksum(table: &CondProbTable) -> String {
    let mut h = Sha256::new();
    h.update(format!("{:?}", table.edge_kind).as_bytes());
    for (src, row) in table.rows.iter().enumerate() {
        h.update((src as u64).to_le_bytes());
        h.update((row.len() as u64).to_le_bytes());
        for &(t, p) in row {
            h.update(t.to_le_bytes());
            h.update(p.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Checksums of the tables `path_type` is composed from.
pub fn source_checksums(path_type: PathType, tables: &TableSet) -> Result<BTreeMap<EdgeKind, String>> {
    path_type
        .required_tables()
        .iter()
        .map(|&k| Ok((k, table_checksum(tables.get(k)?))))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetaPathError + '_ {
    move |source| MetaPathError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn row_lines(index: &MetaPathIndex) -> Vec<String> {
    index
        .rows
        .iter()
        .enumerate()
        .filter(|(_, row)| !row.is_empty())
        .map(|(item, row)| {
            let line = RowLine {
                item,
                queries: row.iter().map(|&(q, s)| (q.0, s)).collect(),
            };
            serde_json::to_string(&line).expect("row serializes")
        })
        .collect()
}

fn rows_digest<'a>(lines: impl Iterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for line in lines {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn save_index(index: &MetaPathIndex, tables: &TableSet, path: &Path) -> Result<()> {
    let lines = row_lines(index);
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        path_type: index.path_type,
        index_k: index.index_k,
        n_items: index.n_items(),
        source_checksums: source_checksums(index.path_type, tables)?,
        rows_sha256: rows_digest(lines.iter().map(String::as_str)),
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let head = serde_json::to_string(&header).expect("header serializes");
    writeln!(out, "{head}").map_err(io_err(path))?;
    for line in &lines {
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Loads a snapshot, verifying the row digest and, when `tables` is given,
/// that the snapshot was built from exactly these tables.
pub fn load_index(path: &Path, tables: Option<&TableSet>) -> Result<MetaPathIndex> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, reason: String| MetaPathError::MalformedSnapshot {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
    let header: SnapshotHeader =
        serde_json::from_str(head).map_err(|e| malformed(1, e.to_string()))?;
    if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
        return Err(malformed(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let body: Vec<&str> = lines.collect();
    if rows_digest(body.iter().copied()) != header.rows_sha256 {
        return Err(MetaPathError::ChecksumMismatch(format!(
            "{} rows",
            path.display()
        )));
    }
    if let Some(tables) = tables {
        let actual = source_checksums(header.path_type, tables)?;
        if actual != header.source_checksums {
            return Err(MetaPathError::ChecksumMismatch(format!(
                "{} source tables",
                header.path_type
            )));
        }
    }
    let mut rows = vec![Vec::new(); header.n_items];
    for (n, line) in body.iter().enumerate() {
        let row: RowLine = serde_json::from_str(line).map_err(|e| malformed(n + 2, e.to_string()))?;
        let slot = rows
            .get_mut(row.item)
            .ok_or_else(|| malformed(n + 2, format!("item {} out of range", row.item)))?;
        *slot = row.queries.into_iter().map(|(q, s)| (QueryId(q), s)).collect();
    }
    Ok(MetaPathIndex {
        path_type: header.path_type,
        index_k: header.index_k,
        rows,
    })
}

/// File name of one index snapshot inside an index directory.
pub fn index_file_name(path_type: PathType) -> String {
    format!("{}.jsonl", path_type.name())
}

/// Writes all three snapshots into `dir`, creating it if needed.
pub fn save_indexes(indexes: &IndexSet, tables: &TableSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for index in indexes.iter() {
        save_index(index, tables, &dir.join(index_file_name(index.path_type)))?;
    }
    Ok(())
}

/// Loads the three snapshots written by [`save_indexes`].
pub fn load_indexes(dir: &Path) -> Result<IndexSet> {
    let load = |p: PathType| -> Result<MetaPathIndex> {
        let path = dir.join(index_file_name(p));
        let index = load_index(&path, None)?;
        if index.path_type != p {
            return Err(MetaPathError::MalformedSnapshot {
                path,
                line: 1,
                reason: format!("expected a {p} index, found {}", index.path_type),
            });
        }
        Ok(index)
    };
    Ok(IndexSet {
        u2i2q: load(PathType::U2I2Q)?,
        u2i2s2q: load(PathType::U2I2S2Q)?,
        u2i2c2q: load(PathType::U2I2C2Q)?,
    })
}
