use crate::corpus::{BehaviorEvent, ContextFeatures, Corpus, Instance, ItemId, QueryId, Timestamp, UserId};
use crate::metapath::{generate_candidates, CandidateFeatures, IndexSet, MetaPathConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const HOUR_BUCKETS: usize = 6;
/// One-hot season plus the special-day bit.
pub const CONTEXT_FIXED_DIM: usize = 5;
pub const META_FEATURE_DIM: usize = 6;

pub fn hour_bucket(hour_of_day: u8) -> usize {
    (hour_of_day as usize % 24) / (24 / HOUR_BUCKETS)
}

pub fn context_fixed(ctx: &ContextFeatures) -> [f64; CONTEXT_FIXED_DIM] {
    let mut v = [0.0; CONTEXT_FIXED_DIM];
    v[ctx.season.slot()] = 1.0;
    v[4] = ctx.special_day as u8 as f64;
    v
}

/// Candidate features as fed to the ranker: type bits raw, scores `log1p`-compressed.
pub fn meta_feature_vector(f: &CandidateFeatures) -> [f64; META_FEATURE_DIM] {
    let mut v = f.to_vector();
    for j in [1, 3, 5] {
        v[j] = v[j].ln_1p();
    }
    v
}

/// Everything needed to score one ⟨user, query, context⟩ impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringInput {
    /// `None` for users the model has never seen.
    pub user: Option<UserId>,
    pub query: QueryId,
    pub context: ContextFeatures,
    /// Oldest first, all strictly before `decision_time`.
    pub history: Vec<BehaviorEvent>,
    pub decision_time: Timestamp,
    pub features: CandidateFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedInstance {
    pub input: ScoringInput,
    pub label: u8,
}

/// Distinct items of a history, most recent first.
pub fn recent_items(history: &[BehaviorEvent]) -> Vec<ItemId> {
    let mut seen = std::collections::HashSet::new();
    history
        .iter()
        .rev()
        .map(|e| e.item)
        .filter(|i| seen.insert(*i))
        .collect()
}

/// Attaches candidate-generation features to each instance, using the
/// instance's own history as the user's recent consumption.
pub fn prepare_instances(
    instances: &[Instance],
    indexes: &IndexSet,
    config: &MetaPathConfig,
) -> Vec<PreparedInstance> {
    instances
        .par_iter()
        .map(|inst| {
            let items = recent_items(&inst.history);
            let cands = generate_candidates(
                inst.user,
                &items,
                indexes,
                config.per_path_cap,
                config.total_cap,
            );
            PreparedInstance {
                input: ScoringInput {
                    user: Some(inst.user),
                    query: inst.query,
                    context: inst.context,
                    history: inst.history.clone(),
                    decision_time: inst.decision_time,
                    features: cands.features_of(inst.query),
                },
                label: inst.label,
            }
        })
        .collect()
}

/// Labels of prepared instances, in order.
pub fn labels(data: &[PreparedInstance]) -> Vec<u8> {
    data.iter().map(|p| p.label).collect()
}

/// Vocabulary sizes and feature widths the model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_users: usize,
    pub n_words: usize,
    pub n_categories: usize,
    pub n_feature_values: usize,
    pub user_cont: usize,
    pub item_cont: usize,
    pub query_cont: usize,
}

impl ModelDims {
    pub fn of(corpus: &Corpus) -> Self {
        ModelDims {
            n_users: corpus.n_users(),
            n_words: corpus.n_words(),
            n_categories: corpus.n_categories(),
            n_feature_values: corpus.n_feature_values(),
            user_cont: corpus.user_cont_dim(),
            item_cont: corpus.item_cont_dim(),
            query_cont: corpus.query_cont_dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Season;
    use crate::metapath::PathType;

    #[test]
    fn hour_buckets_cover_day() {
        assert_eq!(hour_bucket(0), 0);
        assert_eq!(hour_bucket(3), 0);
        assert_eq!(hour_bucket(4), 1);
        assert_eq!(hour_bucket(23), 5);
    }

    #[test]
    fn context_one_hot() {
        let ctx = ContextFeatures {
            season: Season::Autumn,
            special_day: true,
            hour_of_day: 13,
        };
        assert_eq!(context_fixed(&ctx), [0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn scores_compressed_types_raw() {
        let mut f = CandidateFeatures::default();
        f.set(PathType::U2I2S2Q, 3.0);
        let v = meta_feature_vector(&f);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 1.0);
        assert_eq!(v[3], 3f64.ln_1p());
    }

    #[test]
    fn recent_items_dedup_newest_first() {
        let ev = |item: u32, ts| BehaviorEvent {
            user: UserId(0),
            item: ItemId(item),
            action: crate::corpus::ActionType::Click,
            timestamp: ts,
        };
        let h = [ev(1, 10), ev(2, 20), ev(1, 30)];
        assert_eq!(recent_items(&h), vec![ItemId(1), ItemId(2)]);
    }
}
