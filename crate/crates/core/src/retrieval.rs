//! Item recommendation for a clicked query, and the query category predictor.
//!
//! Scoring is a transparent lexical blend:
//! `w_text · cos(query tokens, title tokens) + w_cat · [category ∈ query top-3]
//! + w_pers · (share of the user's history in the item's category)`.

use crate::corpus::{BehaviorEvent, CategoryId, Corpus, Item, ItemId, QueryId, WordId};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("unknown query {0}")]
    UnknownQuery(QueryId),
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub text: f64,
    pub category: f64,
    pub personal: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        RetrievalWeights {
            text: 1.0,
            category: 0.5,
            personal: 0.5,
        }
    }
}

/// Cosine between the token sets of two texts.
pub fn token_cosine(a: &[WordId], b: &[WordId]) -> f64 {
    let sa: HashSet<WordId> = a.iter().copied().collect();
    let sb: HashSet<WordId> = b.iter().copied().collect();
    if sa.is_empty() || sb.is_empty() {
        return 0.0;
    }
    let overlap = sa.intersection(&sb).count() as f64;
    overlap / ((sa.len() as f64) * (sb.len() as f64)).sqrt()
}

/// Fraction of history events per category.
pub fn category_affinity(corpus: &Corpus, history: &[BehaviorEvent]) -> HashMap<CategoryId, f64> {
    let mut counts: HashMap<CategoryId, f64> = HashMap::new();
    for ev in history {
        *counts.entry(corpus.items[ev.item.index()].category).or_default() += 1.0;
    }
    let n = history.len() as f64;
    counts.values_mut().for_each(|v| *v /= n);
    counts
}

pub fn item_score(
    corpus: &Corpus,
    query: QueryId,
    item: &Item,
    affinity: &HashMap<CategoryId, f64>,
    weights: &RetrievalWeights,
) -> f64 {
    let q = &corpus.queries[query.index()];
    let text = token_cosine(&q.text_tokens, &item.title_tokens);
    let cat = if q.top_categories.contains(&item.category) {
        1.0
    } else {
        0.0
    };
    let pers = affinity.get(&item.category).copied().unwrap_or(0.0);
    weights.text * text + weights.category * cat + weights.personal * pers
}

/// Top-`k` items for `query`, descending by score, ties by ascending item id.
pub fn retrieve_items(
    query: QueryId,
    user_history: &[BehaviorEvent],
    corpus: &Corpus,
    k: usize,
    weights: &RetrievalWeights,
) -> Result<Vec<(ItemId, f64)>, RetrievalError> {
    if query.index() >= corpus.n_queries() {
        return Err(RetrievalError::UnknownQuery(query));
    }
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let affinity = category_affinity(corpus, user_history);
    let mut scored: Vec<(ItemId, f64)> = corpus
        .items
        .iter()
        .map(|item| (item.id, item_score(corpus, query, item, &affinity, weights)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Votes query categories from item titles that share tokens with the query.
#[derive(Debug, Clone)]
pub struct CategoryPredictor {
    /// word -> (category, occurrences in titles of that category)
    postings: HashMap<WordId, Vec<(CategoryId, usize)>>,
    /// categories by descending item count, ties by ascending id
    by_frequency: Vec<CategoryId>,
}

impl CategoryPredictor {
    pub fn new(items: &[Item], n_categories: usize) -> Self {
        let mut counts: HashMap<WordId, HashMap<CategoryId, usize>> = HashMap::new();
        let mut freq = vec![0usize; n_categories];
        for item in items {
            freq[item.category.index()] += 1;
            let tokens: HashSet<WordId> = item.title_tokens.iter().copied().collect();
            for w in tokens {
                *counts.entry(w).or_default().entry(item.category).or_default() += 1;
            }
        }
        let postings = counts
            .into_iter()
            .map(|(w, m)| {
                let mut v: Vec<_> = m.into_iter().collect();
                v.sort();
                (w, v)
            })
            .collect();
        let mut by_frequency: Vec<CategoryId> = (0..n_categories).map(CategoryId::from).collect();
        by_frequency.sort_by(|a, b| freq[b.index()].cmp(&freq[a.index()]).then(a.cmp(b)));
        CategoryPredictor {
            postings,
            by_frequency,
        }
    }

    /// Each item votes for its category with weight = number of query tokens in its title.
    pub fn votes(&self, query_text: &[WordId]) -> HashMap<CategoryId, usize> {
        let tokens: HashSet<WordId> = query_text.iter().copied().collect();
        let mut votes: HashMap<CategoryId, usize> = HashMap::new();
        for w in tokens {
            for &(c, n) in self.postings.get(&w).into_iter().flatten() {
                *votes.entry(c).or_default() += n;
            }
        }
        votes
    }

    pub fn predict(&self, query_text: &[WordId]) -> [CategoryId; 3] {
        let mut ranked: Vec<(CategoryId, usize)> = self.votes(query_text).into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut top: Vec<CategoryId> = ranked.into_iter().take(3).map(|(c, _)| c).collect();
        for &c in &self.by_frequency {
            if top.len() == 3 {
                break;
            }
            if !top.contains(&c) {
                top.push(c);
            }
        }
        if top.is_empty() {
            top.push(CategoryId(0));
        }
        crate::corpus::pad_by_repetition(&top)
    }
}

/// Top-3 categories for a query text against the corpus's items.
pub fn predict_query_categories(query_text: &[WordId], corpus: &Corpus) -> [CategoryId; 3] {
    CategoryPredictor::new(&corpus.items, corpus.n_categories()).predict(query_text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ActionType, Dictionaries, Query, UserId};

    fn item(id: u32, title: &[u32], cat: u32) -> Item {
        Item {
            id: ItemId(id),
            title_tokens: title.iter().map(|&w| WordId(w)).collect(),
            category: CategoryId(cat),
            discrete_feats: vec![],
            continuous_feats: vec![],
        }
    }

    fn corpus(items: Vec<Item>, queries: Vec<(Vec<u32>, [u32; 3])>, n_cat: usize) -> Corpus {
        let n_words = 20;
        let queries = queries
            .into_iter()
            .enumerate()
            .map(|(i, (t, c))| Query {
                id: QueryId(i as u32),
                text_tokens: t.into_iter().map(WordId).collect(),
                top_categories: c.map(CategoryId),
                discrete_feats: vec![],
                continuous_feats: vec![],
            })
            .collect::<Vec<_>>();
        let dict = Dictionaries {
            users: vec!["u0".into()],
            items: (0..items.len()).map(|i| format!("i{i}")).collect(),
            queries: (0..queries.len()).map(|i| format!("q{i}")).collect(),
            categories: (0..n_cat).map(|i| format!("c{i}")).collect(),
            scenarios: vec![],
            words: (0..n_words).map(|i| format!("w{i}")).collect(),
        };
        let users = vec![crate::corpus::User {
            id: UserId(0),
            continuous_feats: vec![],
        }];
        Corpus::from_parts(users, items, queries, vec![], vec![], vec![], dict)
    }

    fn ev(item: u32) -> BehaviorEvent {
        BehaviorEvent {
            user: UserId(0),
            item: ItemId(item),
            action: ActionType::Click,
            timestamp: 10,
        }
    }

    #[test]
    fn exact_title_match_ranks_first() {
        let c = corpus(
            vec![item(0, &[1, 2], 0), item(1, &[3, 4], 1), item(2, &[5], 1)],
            vec![(vec![3, 4], [2, 2, 2])],
            3,
        );
        let out = retrieve_items(QueryId(0), &[], &c, 3, &RetrievalWeights::default()).unwrap();
        assert_eq!(out[0].0, ItemId(1));
        assert!((out[0].1 - 1.0).abs() < 1e-12);
        // the remaining two tie at zero and fall back to id order
        assert_eq!(out[1], (ItemId(0), 0.0));
        assert_eq!(out[2], (ItemId(2), 0.0));
    }

    #[test]
    fn history_only_adds_personal_term() {
        let c = corpus(
            vec![item(0, &[1], 0), item(1, &[2], 1)],
            vec![(vec![9], [0, 0, 0])],
            2,
        );
        let w = RetrievalWeights::default();
        let cold = retrieve_items(QueryId(0), &[], &c, 2, &w).unwrap();
        assert_eq!(cold, vec![(ItemId(0), 0.5), (ItemId(1), 0.0)]);
        let warm = retrieve_items(QueryId(0), &[ev(1), ev(1)], &c, 2, &w).unwrap();
        assert_eq!(warm, vec![(ItemId(0), 0.5), (ItemId(1), 0.5)]);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let items: Vec<Item> = (0..10)
            .map(|i| item(i, &[i % 4, 4 + i % 3, 10 + i % 2], i % 3))
            .collect();
        let c = corpus(items, vec![(vec![1, 5, 11], [1, 2, 1])], 3);
        let hist = [ev(2), ev(5), ev(7)];
        let w = RetrievalWeights::default();
        let out = retrieve_items(QueryId(0), &hist, &c, 10, &w).unwrap();

        // Brute force: tally every term by hand-written set logic.
        let q: HashSet<u32> = [1, 5, 11].into();
        let hist_cats: Vec<u32> = hist.iter().map(|e| e.item.0 % 3).collect();
        let mut oracle: Vec<(ItemId, f64)> = (0..10u32)
            .map(|i| {
                let t: HashSet<u32> = [i % 4, 4 + i % 3, 10 + i % 2].into();
                let cos = q.intersection(&t).count() as f64 / ((q.len() * t.len()) as f64).sqrt();
                let cat = i % 3;
                let in_top = if cat == 1 || cat == 2 { 1.0 } else { 0.0 };
                let pers = hist_cats.iter().filter(|&&h| h == cat).count() as f64 / 3.0;
                (ItemId(i), cos + 0.5 * in_top + 0.5 * pers)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(out.len(), 10);
        for (a, b) in out.iter().zip(&oracle) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        assert_eq!(retrieve_items(QueryId(0), &hist, &c, 3, &w).unwrap().len(), 3);
    }

    #[test]
    fn errors() {
        let c = corpus(vec![item(0, &[1], 0)], vec![(vec![1], [0, 0, 0])], 1);
        let w = RetrievalWeights::default();
        assert_eq!(
            retrieve_items(QueryId(5), &[], &c, 1, &w),
            Err(RetrievalError::UnknownQuery(QueryId(5)))
        );
        assert_eq!(
            retrieve_items(QueryId(0), &[], &c, 0, &w),
            Err(RetrievalError::InvalidK)
        );
    }

    #[test]
    fn unanimous_vote_then_frequency_padding() {
        // categories by item count: c1 (3 items), c2 (2), c0 (1)
        let items = vec![
            item(0, &[1, 2], 0),
            item(1, &[3], 1),
            item(2, &[3], 1),
            item(3, &[4], 1),
            item(4, &[5], 2),
            item(5, &[6], 2),
        ];
        let p = CategoryPredictor::new(&items, 3);
        assert_eq!(p.predict(&[WordId(1)]), [0, 1, 2].map(CategoryId));
        assert_eq!(p.predict(&[WordId(19)]), [1, 2, 0].map(CategoryId));
    }

    #[test]
    fn vote_counts_hand_tally() {
        let items = vec![
            item(0, &[1, 2], 0),
            item(1, &[1, 3], 1),
            item(2, &[2, 3], 1),
            item(3, &[1, 1, 4], 2),
            item(4, &[5], 2),
        ];
        let p = CategoryPredictor::new(&items, 3);
        let v = p.votes(&[WordId(1), WordId(2), WordId(3)]);
        // item0: 2 tokens; item1: 2; item2: 2; item3: 1 (duplicate token counted once)
        assert_eq!(v[&CategoryId(0)], 2);
        assert_eq!(v[&CategoryId(1)], 4);
        assert_eq!(v[&CategoryId(2)], 1);
        assert_eq!(p.predict(&[WordId(1), WordId(2), WordId(3)]), [1, 0, 2].map(CategoryId));
    }

    #[test]
    fn always_three_even_with_one_category() {
        let p = CategoryPredictor::new(&[item(0, &[1], 0)], 1);
        assert_eq!(p.predict(&[WordId(7)]), [CategoryId(0); 3]);
    }
}
