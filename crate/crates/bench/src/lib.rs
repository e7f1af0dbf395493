//! Shared fixtures for the benchmarks.

use qsuggest_core::corpus::{generate_synthetic, BehaviorEvent, SynthConfig, Synthetic, UserId};
use qsuggest_core::metapath::{build_all, IndexSet, MetaPathConfig};
use qsuggest_core::ranker::{ModelDims, RankerConfig, RankingModel};

pub struct Fixture {
    pub synthetic: Synthetic,
    pub indexes: IndexSet,
    pub model: RankingModel,
}

/// A default-sized synthetic corpus with its indexes and an untrained small
/// model. Ranking cost does not depend on the weights.
pub fn fixture(seed: u64) -> Fixture {
    let synthetic = generate_synthetic(&SynthConfig::default(), seed).expect("synthetic corpus");
    let (_, indexes) = build_all(&synthetic.corpus, &MetaPathConfig::default()).expect("indexes");
    let model = RankingModel::new(RankerConfig::small(), ModelDims::of(&synthetic.corpus), seed);
    Fixture {
        synthetic,
        indexes,
        model,
    }
}

/// The user's full corpus history, at most the last 100 events.
pub fn history(fx: &Fixture, user: u32) -> Vec<BehaviorEvent> {
    let all: Vec<BehaviorEvent> = fx.synthetic.corpus.user_events(UserId(user)).copied().collect();
    all[all.len().saturating_sub(100)..].to_vec()
}
