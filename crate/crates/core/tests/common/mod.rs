#![allow(dead_code)]

use qsuggest_core::corpus::{generate_synthetic, SynthConfig, Synthetic};
use qsuggest_core::metapath::{build_all, IndexSet, MetaPathConfig, TableSet};
use qsuggest_core::ranker::{
    prepare_instances, train, ModelDims, PreparedInstance, RankerConfig, RankingModel, TrainConfig,
};

pub struct Fixture {
    pub syn: Synthetic,
    pub tables: TableSet,
    pub indexes: IndexSet,
    pub prepared: Vec<PreparedInstance>,
}

pub fn tiny(seed: u64) -> Fixture {
    let syn = generate_synthetic(&SynthConfig::tiny(), seed).unwrap();
    let meta = MetaPathConfig::default();
    let (tables, indexes) = build_all(&syn.corpus, &meta).unwrap();
    let prepared = prepare_instances(&syn.instances, &indexes, &meta);
    Fixture {
        syn,
        tables,
        indexes,
        prepared,
    }
}

pub fn small_model(f: &Fixture, seed: u64) -> RankingModel {
    RankingModel::new(RankerConfig::small(), ModelDims::of(&f.syn.corpus), seed)
}

pub fn trained(f: &Fixture, seed: u64, epochs: usize) -> RankingModel {
    let mut m = small_model(f, seed);
    let tc = TrainConfig {
        epochs,
        lr: 3e-3,
        seed,
        ..TrainConfig::default()
    };
    train(&mut m, &f.syn.corpus, &f.prepared, &tc).unwrap();
    m
}
