//! Synthetic corpus with planted preferences.
//!
//! Every user has a latent category affinity and a drifting "current intent".
//! Behavior events sample items by intent/affinity, search records co-occur
//! each query with its linked items, and impression labels are Bernoulli draws
//! whose logit is exposed by [`PlantedTruth::logit`], so tests can compare a
//! trained ranker against the generator itself.

use super::*;
use crate::retrieval::CategoryPredictor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SYNTH_EPOCH: Timestamp = 1_600_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_queries: usize,
    pub n_categories: usize,
    pub n_scenarios: usize,
    pub n_instances: usize,
    pub min_events_per_user: usize,
    pub max_events_per_user: usize,
    pub words_per_category: usize,
    pub generic_words: usize,
    pub linked_items_per_query: usize,
    pub records_per_query: usize,
    /// Scales every planted effect; 0 makes labels independent of features.
    pub signal: f64,
    pub base_logit: f64,
    pub affinity_weight: f64,
    pub history_weight: f64,
    /// Saturation scale of the history relevance inside `tanh`.
    pub history_scale: f64,
    /// Relevance of a same-category history item that is not linked to the query.
    pub category_match: f64,
    /// Indexed by action slot: click, purchase, favor, cart.
    pub action_weights: [f64; 4],
    /// Action sampling probabilities, same order.
    pub action_mix: [f64; 4],
    /// Planted decay exponent applied to `1 + Δt` in hours.
    pub decay_epsilon: f64,
    pub special_day_rate: f64,
    pub special_day_bias: f64,
    /// Probability of switching the current intent between consecutive events.
    pub intent_switch: f64,
    /// Probability that an impression shows a query tied to recent history.
    pub related_query_rate: f64,
    /// How many of the most recent events a related query may be drawn from.
    pub related_window: usize,
    /// Share of related impressions showing a query linked to the chosen
    /// event's item; the rest show a query from the item's category.
    pub linked_query_rate: f64,
    /// Queries shown together per impression; they share user, time and history.
    pub slate_size: usize,
    /// Negatives kept per positive; `None` keeps the natural label ratio.
    /// Only valid with single-query slates.
    pub neg_pos_ratio: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 3000,
            n_items: 1500,
            n_queries: 600,
            n_categories: 30,
            n_scenarios: 15,
            n_instances: 24_000,
            min_events_per_user: 6,
            max_events_per_user: 30,
            words_per_category: 6,
            generic_words: 20,
            linked_items_per_query: 24,
            records_per_query: 6,
            signal: 1.0,
            base_logit: -4.0,
            affinity_weight: 4.0,
            history_weight: 8.0,
            history_scale: 1.0,
            category_match: 0.4,
            action_weights: [0.3, 1.5, 0.6, 1.0],
            action_mix: [0.55, 0.12, 0.15, 0.18],
            decay_epsilon: -0.8,
            special_day_rate: 0.05,
            special_day_bias: 0.5,
            intent_switch: 0.25,
            related_query_rate: 0.5,
            related_window: 5,
            linked_query_rate: 0.5,
            slate_size: 4,
            neg_pos_ratio: None,
        }
    }
}

impl SynthConfig {
    /// A corpus whose labels carry only recency and action-type structure.
    ///
    /// Related queries are drawn from a long stretch of history, so which
    /// events matter depends on their age and action type rather than their
    /// position at either end of the sequence.
    pub fn recency_action() -> Self {
        SynthConfig {
            affinity_weight: 0.0,
            special_day_bias: 0.0,
            base_logit: -3.0,
            related_window: 100,
            decay_epsilon: -0.5,
            action_weights: [0.2, 2.0, 0.5, 1.0],
            linked_query_rate: 0.0,
            ..SynthConfig::default()
        }
    }

    /// Small corpus for fast tests.
    pub fn tiny() -> Self {
        SynthConfig {
            n_users: 100,
            n_items: 500,
            n_queries: 300,
            n_categories: 12,
            n_scenarios: 6,
            n_instances: 400,
            ..SynthConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CorpusError::InvalidConfig(msg.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.n_queries == 0 {
            return bad("users, items and queries must be non-zero");
        }
        if self.n_categories == 0 || self.n_categories > self.n_items {
            return bad("need 1 <= categories <= items");
        }
        if self.n_scenarios == 0 {
            return bad("need at least one scenario");
        }
        if self.min_events_per_user == 0 || self.min_events_per_user > self.max_events_per_user {
            return bad("need 1 <= min_events_per_user <= max_events_per_user");
        }
        if self.words_per_category < 2 || self.linked_items_per_query == 0 {
            return bad("need >= 2 words per category and >= 1 linked item");
        }
        if self.related_window == 0 {
            return bad("related_window must be positive");
        }
        if self.slate_size == 0 {
            return bad("slate_size must be positive");
        }
        if self.records_per_query == 0 {
            return bad("records_per_query must be positive");
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return bad("signal must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.linked_query_rate) {
            return bad("linked_query_rate must lie in [0, 1]");
        }
        if self.action_mix.iter().any(|&p| p < 0.0) || self.action_mix.iter().sum::<f64>() <= 0.0 {
            return bad("action_mix must be a non-negative, non-zero vector");
        }
        if let Some(r) = self.neg_pos_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return bad("neg_pos_ratio must be positive");
            }
            // dropping single labels from a slate would tie the kept labels
            // to the slate's shared context
            if self.slate_size != 1 {
                return bad("neg_pos_ratio needs slate_size 1");
            }
        }
        Ok(())
    }
}

/// The generative parameters behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub config: SynthConfig,
    /// Per user, a distribution over categories.
    pub affinity: Vec<Vec<f64>>,
    pub query_category: Vec<CategoryId>,
    /// Per query, the sorted items its searches mostly retrieve.
    pub linked_items: Vec<Vec<ItemId>>,
}

impl PlantedTruth {
    /// Relevance of one history item to a query before action and decay weighting.
    pub fn item_match(&self, corpus: &Corpus, item: ItemId, query: QueryId) -> f64 {
        if self.linked_items[query.index()].binary_search(&item).is_ok() {
            1.0
        } else if corpus.items[item.index()].category == self.query_category[query.index()] {
            self.config.category_match
        } else {
            0.0
        }
    }

    /// Decayed, action-weighted relevance of a history to a query.
    pub fn history_relevance(
        &self,
        corpus: &Corpus,
        history: &[BehaviorEvent],
        query: QueryId,
        decision_time: Timestamp,
    ) -> f64 {
        history
            .iter()
            .map(|ev| {
                let dt_hours = (decision_time - ev.timestamp).max(0) as f64 / 3600.0;
                self.item_match(corpus, ev.item, query)
                    * self.config.action_weights[ev.action.slot()]
                    * (1.0 + dt_hours).powf(self.config.decay_epsilon)
            })
            .sum()
    }

    /// Click logit of an impression; the Bayes-optimal score.
    pub fn logit(&self, corpus: &Corpus, inst: &Instance) -> f64 {
        let c = &self.config;
        let aff = &self.affinity[inst.user.index()];
        let max_aff = aff.iter().cloned().fold(f64::MIN, f64::max);
        let cat = self.query_category[inst.query.index()];
        let aff_term = aff[cat.index()] / max_aff;
        let rel = self.history_relevance(corpus, &inst.history, inst.query, inst.decision_time);
        let hist_term = (rel / c.history_scale).tanh();
        let special = if inst.context.special_day { 1.0 } else { 0.0 };
        c.base_logit
            + c.signal
                * (c.affinity_weight * aff_term
                    + c.history_weight * hist_term
                    + c.special_day_bias * special)
    }

    pub fn click_probability(&self, corpus: &Corpus, inst: &Instance) -> f64 {
        1.0 / (1.0 + (-self.logit(corpus, inst)).exp())
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub instances: Vec<Instance>,
    pub truth: PlantedTruth,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Builds a synthetic corpus plus labelled impressions. Deterministic in `seed`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Synthetic> {
    config.validate()?;
    let cfg = config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cat = cfg.n_categories;

    // Words are strings first; dense ids are assigned by first appearance below.
    let cat_word = |c: usize, j: usize| format!("c{c}w{j}");
    let generic_word = |j: usize| format!("g{j}");

    // Items: Zipf-ish category popularity so global frequencies differ.
    let cat_weights: Vec<f64> = (0..n_cat).map(|c| 1.0 / ((c + 1) as f64).sqrt()).collect();
    let mut item_cats = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        // every category gets at least one item
        item_cats.push(if i < n_cat { i } else { sample_weighted(&mut rng, &cat_weights) });
    }
    let mut item_words: Vec<Vec<String>> = Vec::with_capacity(cfg.n_items);
    let mut item_discrete = Vec::with_capacity(cfg.n_items);
    let mut item_cont = Vec::with_capacity(cfg.n_items);
    let mut item_title_slots: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_items);
    for &c in &item_cats {
        let a = rng.random_range(0..cfg.words_per_category);
        let mut b = rng.random_range(0..cfg.words_per_category - 1);
        if b >= a {
            b += 1;
        }
        item_title_slots.push(vec![a, b]);
        let mut title = vec![cat_word(c, a), cat_word(c, b)];
        if cfg.generic_words > 0 {
            title.push(generic_word(rng.random_range(0..cfg.generic_words)));
        }
        item_words.push(title);
        let price: f64 = rng.random_range(0.0..1.0);
        let brand = rng.random_range(0..20u32);
        item_discrete.push(vec![(0u32, brand), (1u32, 20 + (price * 5.0) as u32)]);
        item_cont.push(vec![(price * 1000.0).round() / 1000.0]);
    }
    let mut items_of_cat: Vec<Vec<usize>> = vec![Vec::new(); n_cat];
    for (i, &c) in item_cats.iter().enumerate() {
        items_of_cat[c].push(i);
    }

    // Queries: round-robin categories. Query words come from an anchor item's
    // title and are distinct within a category where the vocabulary allows;
    // the linked items are the category's items whose titles contain every
    // query category word, so links follow from content.
    let item_cat_words: Vec<Vec<usize>> = item_title_slots;
    let mut query_cats = Vec::with_capacity(cfg.n_queries);
    let mut query_words: Vec<Vec<String>> = Vec::with_capacity(cfg.n_queries);
    let mut linked: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_queries);
    let mut used_texts: std::collections::HashSet<Vec<String>> = Default::default();
    for q in 0..cfg.n_queries {
        let c = q % n_cat;
        query_cats.push(c);
        let pool = &items_of_cat[c];
        let draw = |rng: &mut ChaCha8Rng| {
            let anchor = pool[rng.random_range(0..pool.len())];
            let mut slots = item_cat_words[anchor].clone();
            if rng.random_bool(0.5) {
                slots.remove(rng.random_range(0..slots.len()));
            }
            slots.sort_unstable();
            slots
        };
        let mut slots = draw(&mut rng);
        let mut text: Vec<String> = slots.iter().map(|&j| cat_word(c, j)).collect();
        for _ in 0..64 {
            if !used_texts.contains(&text) {
                break;
            }
            slots = draw(&mut rng);
            text = slots.iter().map(|&j| cat_word(c, j)).collect();
        }
        if cfg.generic_words > 0 && (used_texts.contains(&text) || rng.random_bool(0.2)) {
            let base = text.clone();
            for _ in 0..64 {
                text = base.clone();
                text.push(generic_word(rng.random_range(0..cfg.generic_words)));
                if !used_texts.contains(&text) {
                    break;
                }
            }
        }
        used_texts.insert(text.clone());
        query_words.push(text);
        let matching: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| slots.iter().all(|j| item_cat_words[i].contains(j)))
            .collect();
        let k = cfg.linked_items_per_query.min(matching.len());
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, matching.len(), k)
            .into_iter()
            .map(|j| matching[j])
            .collect();
        chosen.sort_unstable();
        linked.push(chosen);
    }
    let mut queries_of_cat: Vec<Vec<usize>> = vec![Vec::new(); n_cat];
    for (q, &c) in query_cats.iter().enumerate() {
        queries_of_cat[c].push(q);
    }

    // Scenarios: two categories plus keywords drawn from them.
    let mut scenario_defs = Vec::with_capacity(cfg.n_scenarios);
    for _ in 0..cfg.n_scenarios {
        let a = rng.random_range(0..n_cat);
        let b = rng.random_range(0..n_cat);
        let mut cats = vec![a];
        if b != a {
            cats.push(b);
        }
        let mut kws: Vec<String> = Vec::new();
        for _ in 0..3 {
            let c = cats[rng.random_range(0..cats.len())];
            let w = cat_word(c, rng.random_range(0..cfg.words_per_category));
            if !kws.contains(&w) {
                kws.push(w);
            }
        }
        scenario_defs.push((cats, kws));
    }

    // Dense word ids in first-appearance order: items, queries, scenarios.
    let mut dict_words: Vec<String> = Vec::new();
    let mut word_ids: std::collections::HashMap<String, u32> = Default::default();
    let mut intern = |w: &String| -> WordId {
        if let Some(&id) = word_ids.get(w) {
            return WordId(id);
        }
        let id = dict_words.len() as u32;
        dict_words.push(w.clone());
        word_ids.insert(w.clone(), id);
        WordId(id)
    };
    let mut items: Vec<Item> = Vec::with_capacity(cfg.n_items);
    for (i, title) in item_words.iter().enumerate() {
        items.push(Item {
            id: ItemId(i as u32),
            title_tokens: title.iter().map(&mut intern).collect(),
            category: CategoryId(item_cats[i] as u32),
            discrete_feats: item_discrete[i].clone(),
            continuous_feats: item_cont[i].clone(),
        });
    }
    let predictor = CategoryPredictor::new(&items, n_cat);
    let mut queries: Vec<Query> = Vec::with_capacity(cfg.n_queries);
    for (q, text) in query_words.iter().enumerate() {
        let tokens: Vec<WordId> = text.iter().map(&mut intern).collect();
        queries.push(Query {
            id: QueryId(q as u32),
            top_categories: predictor.predict(&tokens),
            text_tokens: tokens,
            discrete_feats: vec![(2, 26 + text.len() as u32)],
            continuous_feats: Vec::new(),
        });
    }
    let scenarios: Vec<Scenario> = scenario_defs
        .iter()
        .enumerate()
        .map(|(s, (cats, kws))| Scenario {
            id: ScenarioId(s as u32),
            categories: cats.iter().map(|&c| CategoryId(c as u32)).collect(),
            keywords: kws.iter().map(&mut intern).collect(),
        })
        .collect();

    // Search log.
    let mut search_log = Vec::with_capacity(cfg.n_queries * cfg.records_per_query);
    for q in 0..cfg.n_queries {
        let c = query_cats[q];
        for _ in 0..cfg.records_per_query {
            let size = rng.random_range(4..=10usize);
            let mut retrieved: Vec<ItemId> = Vec::with_capacity(size);
            for _ in 0..size {
                let roll: f64 = rng.random_range(0.0..1.0);
                let i = if roll < 0.75 {
                    linked[q][rng.random_range(0..linked[q].len())]
                } else if roll < 0.9 {
                    items_of_cat[c][rng.random_range(0..items_of_cat[c].len())]
                } else {
                    rng.random_range(0..cfg.n_items)
                };
                let id = ItemId(i as u32);
                if !retrieved.contains(&id) {
                    retrieved.push(id);
                }
            }
            search_log.push(SearchLogRecord {
                query: QueryId(q as u32),
                retrieved_items: retrieved,
            });
        }
    }

    // Users, affinities and behavior timelines.
    let mut users = Vec::with_capacity(cfg.n_users);
    let mut affinity = Vec::with_capacity(cfg.n_users);
    let mut events = Vec::new();
    for u in 0..cfg.n_users {
        users.push(User {
            id: UserId(u as u32),
            continuous_feats: vec![(rng.random_range(0.0..1.0f64) * 1000.0).round() / 1000.0],
        });
        let mut aff = vec![0.15 / n_cat as f64; n_cat];
        for share in [0.5, 0.25, 0.1] {
            aff[rng.random_range(0..n_cat)] += share;
        }
        let n_events = rng.random_range(cfg.min_events_per_user..=cfg.max_events_per_user);
        let mut t = SYNTH_EPOCH + rng.random_range(0..60 * 86_400);
        let mut intent = sample_weighted(&mut rng, &aff);
        let mut focus = queries_of_cat[intent]
            .get(rng.random_range(0..queries_of_cat[intent].len().max(1)))
            .copied();
        for _ in 0..n_events {
            if rng.random_bool(cfg.intent_switch) {
                intent = sample_weighted(&mut rng, &aff);
                let qs = &queries_of_cat[intent];
                focus = (!qs.is_empty()).then(|| qs[rng.random_range(0..qs.len())]);
            }
            let item = if rng.random_bool(0.7) {
                match focus {
                    Some(q) if rng.random_bool(0.5) => {
                        linked[q][rng.random_range(0..linked[q].len())]
                    }
                    _ => items_of_cat[intent][rng.random_range(0..items_of_cat[intent].len())],
                }
            } else {
                let c = sample_weighted(&mut rng, &aff);
                items_of_cat[c][rng.random_range(0..items_of_cat[c].len())]
            };
            let action = ActionType::ALL[sample_weighted(&mut rng, &cfg.action_mix)];
            events.push(BehaviorEvent {
                user: UserId(u as u32),
                item: ItemId(item as u32),
                action,
                timestamp: t,
            });
            t += (log_uniform(&mut rng, 0.05, 300.0) * 3600.0) as Timestamp + 1;
        }
        affinity.push(aff);
    }

    let dict = Dictionaries {
        users: (0..cfg.n_users).map(|i| format!("u{i}")).collect(),
        items: (0..cfg.n_items).map(|i| format!("i{i}")).collect(),
        queries: (0..cfg.n_queries).map(|i| format!("q{i}")).collect(),
        categories: (0..n_cat).map(|i| format!("c{i}")).collect(),
        scenarios: (0..cfg.n_scenarios).map(|i| format!("s{i}")).collect(),
        words: dict_words,
    };
    let corpus = Corpus::from_parts(users, items, queries, scenarios, events, search_log, dict);
    let truth = PlantedTruth {
        config: cfg.clone(),
        affinity,
        query_category: query_cats.iter().map(|&c| CategoryId(c as u32)).collect(),
        linked_items: linked
            .iter()
            .map(|l| l.iter().map(|&i| ItemId(i as u32)).collect())
            .collect(),
    };

    let instances = sample_instances(&corpus, &truth, &queries_of_cat, &mut rng)?;
    Ok(Synthetic {
        corpus,
        instances,
        truth,
    })
}

fn sample_instances(
    corpus: &Corpus,
    truth: &PlantedTruth,
    queries_of_cat: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Instance>> {
    let cfg = &truth.config;
    let n = cfg.n_instances;
    let (mut want_pos, mut want_neg) = match cfg.neg_pos_ratio {
        Some(r) => {
            let pos = ((n as f64) / (1.0 + r)).round() as usize;
            (pos, n - pos)
        }
        None => (usize::MAX, usize::MAX),
    };
    let mut queries_of_item: Vec<Vec<usize>> = vec![Vec::new(); corpus.n_items()];
    for (q, items) in truth.linked_items.iter().enumerate() {
        for i in items {
            queries_of_item[i.index()].push(q);
        }
    }
    let mut out = Vec::with_capacity(n);
    let max_attempts = 200 * n.max(1);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(CorpusError::InvalidConfig(
                "could not reach the requested negative:positive ratio".into(),
            ));
        }
        let user = UserId(rng.random_range(0..cfg.n_users) as u32);
        let timeline: Vec<&BehaviorEvent> = corpus.user_events(user).collect();
        let anchor = timeline[rng.random_range(0..timeline.len())].timestamp;
        let decision_time = anchor + (log_uniform(rng, 0.02, 200.0) * 3600.0) as Timestamp + 1;
        let history = corpus.history_before(user, decision_time);

        let mut context = ContextFeatures::at(decision_time, false);
        context.special_day = rng.random_bool(cfg.special_day_rate);
        let mut shown: Vec<usize> = Vec::with_capacity(cfg.slate_size);
        for _ in 0..cfg.slate_size.min(cfg.n_queries) {
            let query = loop {
                let q = draw_query(cfg, corpus, &history, &queries_of_item, queries_of_cat, rng);
                if !shown.contains(&q) {
                    break q;
                }
                // fall back to a uniform draw on collisions
                let q = rng.random_range(0..cfg.n_queries);
                if !shown.contains(&q) {
                    break q;
                }
            };
            shown.push(query);
            let mut inst = Instance {
                user,
                query: QueryId(query as u32),
                label: 0,
                context,
                history: history.clone(),
                decision_time,
            };
            let p = truth.click_probability(corpus, &inst);
            inst.label = u8::from(rng.random_bool(p.clamp(0.0, 1.0)));
            let slot = if inst.label == 1 { &mut want_pos } else { &mut want_neg };
            if *slot == 0 || out.len() >= n {
                continue;
            }
            *slot = slot.saturating_sub(1);
            out.push(inst);
        }
    }
    Ok(out)
}

fn draw_query(
    cfg: &SynthConfig,
    corpus: &Corpus,
    history: &[BehaviorEvent],
    queries_of_item: &[Vec<usize>],
    queries_of_cat: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> usize {
    if !rng.random_bool(cfg.related_query_rate) {
        return rng.random_range(0..cfg.n_queries);
    }
    let recent = &history[history.len().saturating_sub(cfg.related_window)..];
    let ev = &recent[rng.random_range(0..recent.len())];
    let c = corpus.items[ev.item.index()].category.index();
    let via_link = &queries_of_item[ev.item.index()];
    let qs = if !via_link.is_empty() && rng.random_bool(cfg.linked_query_rate) {
        via_link
    } else {
        &queries_of_cat[c]
    };
    if qs.is_empty() {
        rng.random_range(0..cfg.n_queries)
    } else {
        qs[rng.random_range(0..qs.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::metrics::auc;

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig::tiny();
        let a = generate_synthetic(&cfg, 7).unwrap();
        let b = generate_synthetic(&cfg, 7).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.instances, b.instances);
        let c = generate_synthetic(&cfg, 8).unwrap();
        assert_ne!(a.corpus.events, c.corpus.events);
    }

    #[test]
    fn config_with_hundred_users() {
        let cfg = SynthConfig {
            n_users: 100,
            n_items: 500,
            n_queries: 300,
            ..SynthConfig::tiny()
        };
        let s = generate_synthetic(&cfg, 7).unwrap();
        assert_eq!(s.corpus.n_users(), 100);
        assert_eq!(s.corpus.n_items(), 500);
        assert_eq!(s.corpus.n_queries(), 300);
        for inst in &s.instances {
            assert!(inst.history.len() <= MAX_HISTORY);
            assert!(inst.history.iter().all(|e| e.timestamp < inst.decision_time));
            assert!(inst.history.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            n_users: 0,
            ..SynthConfig::tiny()
        };
        assert!(matches!(
            generate_synthetic(&cfg, 0),
            Err(CorpusError::InvalidConfig(_))
        ));
        let cfg = SynthConfig {
            signal: 2.0,
            ..SynthConfig::tiny()
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }

    #[test]
    fn negative_ratio_knob() {
        let cfg = SynthConfig {
            neg_pos_ratio: Some(3.0),
            slate_size: 1,
            ..SynthConfig::tiny()
        };
        let s = generate_synthetic(&cfg, 3).unwrap();
        assert!(generate_synthetic(&SynthConfig { slate_size: 4, ..cfg.clone() }, 3).is_err());
        let pos = s.instances.iter().filter(|i| i.is_positive()).count();
        assert_eq!(pos, 100);
        assert_eq!(s.instances.len() - pos, 300);
    }

    #[test]
    fn affinity_match_raises_click_rate() {
        let cfg = SynthConfig {
            n_instances: 12_000,
            n_users: 400,
            ..SynthConfig::tiny()
        };
        let s = generate_synthetic(&cfg, 11).unwrap();
        let (mut hit, mut n_match, mut miss, mut n_miss) = (0usize, 0usize, 0usize, 0usize);
        for inst in &s.instances {
            let aff = &s.truth.affinity[inst.user.index()];
            let top = aff.iter().cloned().fold(f64::MIN, f64::max);
            let cat = s.truth.query_category[inst.query.index()].index();
            if aff[cat] == top {
                n_match += 1;
                hit += inst.label as usize;
            } else {
                n_miss += 1;
                miss += inst.label as usize;
            }
        }
        assert!(n_match > 100 && n_miss > 100);
        assert!(hit as f64 / n_match as f64 > miss as f64 / n_miss as f64);
    }

    #[test]
    fn bayes_scorer_separates_at_full_signal() {
        let s = generate_synthetic(&SynthConfig::default(), 5).unwrap();
        let scores: Vec<f64> = s
            .instances
            .iter()
            .map(|i| s.truth.logit(&s.corpus, i))
            .collect();
        let labels: Vec<u8> = s.instances.iter().map(|i| i.label).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!(a >= 0.9, "bayes auc {a}");
    }

    #[test]
    fn zero_signal_labels_ignore_features() {
        let cfg = SynthConfig {
            signal: 0.0,
            ..SynthConfig::default()
        };
        let s = generate_synthetic(&cfg, 5).unwrap();
        let scores: Vec<f64> = s
            .instances
            .iter()
            .map(|i| SynthConfig::default().history_weight * s.truth.history_relevance(&s.corpus, &i.history, i.query, i.decision_time))
            .collect();
        let labels: Vec<u8> = s.instances.iter().map(|i| i.label).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.03, "auc {a}");
    }
}
