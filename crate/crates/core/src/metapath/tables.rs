use super::{top_k, MetaPathError, Result};
use crate::corpus::{Corpus, SearchLogRecord};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    I2Q,
    I2S,
    S2Q,
    I2C,
    C2Q,
}

/// Sparse conditional-probability edges `P(target | source)` of one kind.
///
/// Rows are indexed by dense source id; each row is sorted by probability
/// descending (ties by ascending target id) and truncated to `table_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondProbTable {
    pub edge_kind: EdgeKind,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl CondProbTable {
    fn from_rows(edge_kind: EdgeKind, mut rows: Vec<Vec<(u32, f64)>>, table_k: usize) -> Self {
        for row in &mut rows {
            top_k(row, table_k);
        }
        CondProbTable { edge_kind, rows }
    }

    pub fn row(&self, source: usize) -> &[(u32, f64)] {
        self.rows.get(source).map_or(&[], Vec::as_slice)
    }

    pub fn prob(&self, source: usize, target: u32) -> f64 {
        self.row(source)
            .iter()
            .find(|(t, _)| *t == target)
            .map_or(0.0, |&(_, p)| p)
    }
}

/// `P(q|i) = Count(q,i) / Count(i)`: the share of search records retrieving
/// item `i` that were issued for query `q`.
pub fn estimate_i2q(
    search_log: &[SearchLogRecord],
    n_items: usize,
    table_k: usize,
) -> Result<CondProbTable> {
    if search_log.is_empty() {
        return Err(MetaPathError::EmptyLog);
    }
    let mut count_i = vec![0u64; n_items];
    let mut count_qi: Vec<HashMap<u32, u64>> = vec![HashMap::new(); n_items];
    for rec in search_log {
        for item in &rec.retrieved_items {
            count_i[item.index()] += 1;
            *count_qi[item.index()].entry(rec.query.0).or_default() += 1;
        }
    }
    let rows = count_qi
        .into_iter()
        .zip(&count_i)
        .map(|(by_query, &total)| {
            by_query
                .into_iter()
                .map(|(q, c)| (q, c as f64 / total as f64))
                .collect()
        })
        .collect();
    Ok(CondProbTable::from_rows(EdgeKind::I2Q, rows, table_k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxTables {
    pub i2s: CondProbTable,
    pub s2q: CondProbTable,
    pub i2c: CondProbTable,
    pub c2q: CondProbTable,
}

/// Membership weight of an item in a scenario: 1 for a category hit plus the
/// fraction of title tokens that are scenario keywords.
fn scenario_weight(corpus: &Corpus, item: usize, scenario: usize) -> f64 {
    let it = &corpus.items[item];
    let sc = &corpus.scenarios[scenario];
    let cat = if sc.categories.contains(&it.category) {
        1.0
    } else {
        0.0
    };
    let title: HashSet<_> = it.title_tokens.iter().collect();
    let hits = title.iter().filter(|w| sc.keywords.contains(w)).count();
    cat + hits as f64 / title.len() as f64
}

fn normalize(row: &mut [(u32, f64)]) {
    let total: f64 = row.iter().map(|(_, p)| p).sum();
    if total > 0.0 {
        row.iter_mut().for_each(|(_, p)| *p /= total);
    }
}

/// Estimators for the edges whose construction the corpus does not record directly:
///
/// * `I2C`: indicator of the item's category.
/// * `I2S`: scenario membership weights normalized per item.
/// * `S2Q`: `Σ_{i'} P(i'|s) · P(q|i')` normalized per scenario, with `P(i'|s)`
///   the membership weights normalized per scenario.
/// * `C2Q`: search-log counts of category-`c` items retrieved for `q`,
///   normalized per category.
pub fn estimate_aux_tables(corpus: &Corpus, i2q: &CondProbTable, table_k: usize) -> Result<AuxTables> {
    if corpus.scenarios.is_empty() {
        return Err(MetaPathError::MissingScenarioConfig);
    }
    let n_items = corpus.n_items();
    let n_scen = corpus.scenarios.len();

    let i2c_rows = corpus
        .items
        .iter()
        .map(|it| vec![(it.category.0, 1.0)])
        .collect();
    let i2c = CondProbTable::from_rows(EdgeKind::I2C, i2c_rows, table_k);

    let mut membership: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_items];
    let mut scen_members: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_scen];
    for (i, row) in membership.iter_mut().enumerate() {
        for (s, members) in scen_members.iter_mut().enumerate() {
            let w = scenario_weight(corpus, i, s);
            if w > 0.0 {
                row.push((s as u32, w));
                members.push((i, w));
            }
        }
    }
    for row in &mut membership {
        normalize(row);
    }
    let i2s = CondProbTable::from_rows(EdgeKind::I2S, membership, table_k);

    let s2q_rows = scen_members
        .iter()
        .map(|members| {
            let total: f64 = members.iter().map(|(_, w)| w).sum();
            let mut acc: HashMap<u32, f64> = HashMap::new();
            for &(i, w) in members {
                let p_item = w / total;
                for &(q, p) in i2q.row(i) {
                    *acc.entry(q).or_default() += p_item * p;
                }
            }
            let mut row: Vec<(u32, f64)> = acc.into_iter().collect();
            // Summation above is order-dependent; fix the order before normalizing.
            row.sort_by_key(|&(q, _)| q);
            normalize(&mut row);
            row
        })
        .collect();
    let s2q = CondProbTable::from_rows(EdgeKind::S2Q, s2q_rows, table_k);

    let mut c2q_counts: Vec<HashMap<u32, u64>> = vec![HashMap::new(); corpus.n_categories()];
    for rec in &corpus.search_log {
        for item in &rec.retrieved_items {
            let c = corpus.items[item.index()].category.index();
            *c2q_counts[c].entry(rec.query.0).or_default() += 1;
        }
    }
    let c2q_rows = c2q_counts
        .into_iter()
        .map(|counts| {
            let total: u64 = counts.values().sum();
            counts
                .into_iter()
                .map(|(q, n)| (q, n as f64 / total as f64))
                .collect()
        })
        .collect();
    let c2q = CondProbTable::from_rows(EdgeKind::C2Q, c2q_rows, table_k);

    Ok(AuxTables { i2s, s2q, i2c, c2q })
}

/// The tables a set of indexes is built from; any of them may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableSet {
    pub i2q: Option<CondProbTable>,
    pub i2s: Option<CondProbTable>,
    pub s2q: Option<CondProbTable>,
    pub i2c: Option<CondProbTable>,
    pub c2q: Option<CondProbTable>,
}

impl TableSet {
    pub fn new(i2q: CondProbTable, aux: AuxTables) -> Self {
        TableSet {
            i2q: Some(i2q),
            i2s: Some(aux.i2s),
            s2q: Some(aux.s2q),
            i2c: Some(aux.i2c),
            c2q: Some(aux.c2q),
        }
    }

    pub fn get(&self, kind: EdgeKind) -> Result<&CondProbTable> {
        let t = match kind {
            EdgeKind::I2Q => &self.i2q,
            EdgeKind::I2S => &self.i2s,
            EdgeKind::S2Q => &self.s2q,
            EdgeKind::I2C => &self.i2c,
            EdgeKind::C2Q => &self.c2q,
        };
        t.as_ref().ok_or(MetaPathError::MissingTable(kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, ItemId, QueryId, SynthConfig};
    use rand::{Rng, SeedableRng};

    fn rec(q: u32, items: &[u32]) -> SearchLogRecord {
        SearchLogRecord {
            query: QueryId(q),
            retrieved_items: items.iter().map(|&i| ItemId(i)).collect(),
        }
    }

    #[test]
    fn ratio_of_counts() {
        // item 0 in 10 records, 3 of them for query 7
        let mut log: Vec<_> = (0..3).map(|_| rec(7, &[0, 1])).collect();
        log.extend((0..7).map(|k| rec(k % 2, &[0])));
        let t = estimate_i2q(&log, 2, 2000).unwrap();
        assert!((t.prob(0, 7) - 0.3).abs() < 1e-15);
        // item 1 is only ever retrieved by query 7
        assert_eq!(t.row(1), &[(7, 1.0)]);
    }

    #[test]
    fn empty_log() {
        assert!(matches!(estimate_i2q(&[], 3, 10), Err(MetaPathError::EmptyLog)));
    }

    #[test]
    fn random_log_matches_full_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n_items, n_queries) = (15usize, 8u32);
        let log: Vec<SearchLogRecord> = (0..60)
            .map(|_| {
                let mut items: Vec<u32> = (0..n_items as u32).filter(|_| rng.random_bool(0.3)).collect();
                if items.is_empty() {
                    items.push(0);
                }
                rec(rng.random_range(0..n_queries), &items)
            })
            .collect();
        let t = estimate_i2q(&log, n_items, 2000).unwrap();
        for i in 0..n_items {
            let total = log.iter().filter(|r| r.retrieved_items.contains(&ItemId(i as u32))).count();
            for q in 0..n_queries {
                let joint = log
                    .iter()
                    .filter(|r| r.query.0 == q && r.retrieved_items.contains(&ItemId(i as u32)))
                    .count();
                let want = if total == 0 { 0.0 } else { joint as f64 / total as f64 };
                assert_eq!(t.prob(i, q), want, "item {i} query {q}");
            }
            let row = t.row(i);
            assert!(row.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
        }
    }

    #[test]
    fn truncation_keeps_largest() {
        let log = vec![rec(1, &[0]), rec(2, &[0]), rec(2, &[0]), rec(3, &[0])];
        let t = estimate_i2q(&log, 1, 2).unwrap();
        assert_eq!(t.row(0), &[(2, 0.5), (1, 0.25)]);
    }

    #[test]
    fn aux_tables_are_normalized_indicator_and_consistent() {
        let s = generate_synthetic(&SynthConfig::tiny(), 4).unwrap();
        let c = &s.corpus;
        let i2q = estimate_i2q(&c.search_log, c.n_items(), 2000).unwrap();
        let aux = estimate_aux_tables(c, &i2q, 2000).unwrap();
        for (i, item) in c.items.iter().enumerate() {
            assert_eq!(aux.i2c.row(i), &[(item.category.0, 1.0)]);
        }
        for t in [&i2q, &aux.i2s, &aux.s2q, &aux.i2c, &aux.c2q] {
            for row in &t.rows {
                let sum: f64 = row.iter().map(|(_, p)| p).sum();
                assert!(sum <= 1.0 + 1e-9, "{:?} row sums to {sum}", t.edge_kind);
                assert!(row.iter().all(|&(_, p)| p > 0.0 && p <= 1.0));
                let ids: HashSet<u32> = row.iter().map(|(t, _)| *t).collect();
                assert_eq!(ids.len(), row.len());
            }
        }
    }

    #[test]
    fn single_member_scenario_proportional_to_item_row() {
        let mut s = generate_synthetic(&SynthConfig::tiny(), 4).unwrap().corpus;
        // one scenario whose only member is item 0, via a keyword unique to its title
        let fresh = crate::corpus::WordId(s.n_words() as u32);
        s.items[0].title_tokens.push(fresh);
        s.scenarios = vec![crate::corpus::Scenario {
            id: crate::corpus::ScenarioId(0),
            categories: vec![],
            keywords: vec![fresh],
        }];
        let i2q = estimate_i2q(&s.search_log, s.n_items(), 2000).unwrap();
        let aux = estimate_aux_tables(&s, &i2q, 2000).unwrap();
        let row0 = i2q.row(0);
        let total: f64 = row0.iter().map(|(_, p)| p).sum();
        let s2q = aux.s2q.row(0);
        assert_eq!(s2q.len(), row0.len());
        for (&(qa, pa), &(qb, pb)) in s2q.iter().zip(row0) {
            assert_eq!(qa, qb);
            assert!((pa - pb / total).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_scenarios() {
        let mut c = generate_synthetic(&SynthConfig::tiny(), 4).unwrap().corpus;
        c.scenarios.clear();
        let i2q = estimate_i2q(&c.search_log, c.n_items(), 2000).unwrap();
        assert!(matches!(
            estimate_aux_tables(&c, &i2q, 2000),
            Err(MetaPathError::MissingScenarioConfig)
        ));
    }
}
