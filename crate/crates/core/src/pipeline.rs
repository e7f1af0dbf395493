//! End-to-end runs on synthetic data: corpus → indexes → ranker → evaluation,
//! plus the suggest-loop trial that checks a planted intent surfaces in the
//! top queries.

use crate::corpus::{
    generate_synthetic, ingest_dir, split_instances, write_dir, write_instances, ActionType,
    Corpus, Instance, ItemId, QueryId, SynthConfig, Synthetic, INSTANCES_FILE,
};
use crate::metapath::{build_all, save_indexes, IndexSet, MetaPathConfig};
use crate::ranker::{
    auc, evaluate, prepare_instances, train, EvalReport, PreparedInstance, RankerConfig,
    ModelDims, RankingModel, TrainConfig, TrainReport, Variant,
};
use crate::service::{Engine, EventRequest, ServiceConfig, Snapshot};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

fn at<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

pub type Result<T, E = StageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub meta: MetaPathConfig,
    pub ranker: RankerConfig,
    pub train: TrainConfig,
    pub train_frac: f64,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            meta: MetaPathConfig::default(),
            ranker: RankerConfig::small(),
            train: TrainConfig {
                epochs: 3,
                lr: 3e-3,
                ..TrainConfig::default()
            },
            train_frac: 0.8,
            threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    /// Encoder comparison on [`SynthConfig::recency_action`]. User embeddings
    /// are always dropped since that corpus plants no per-user signal.
    pub fn ablation() -> Self {
        let base = ExperimentConfig::default();
        ExperimentConfig {
            synth: SynthConfig::recency_action(),
            train: TrainConfig {
                epochs: 6,
                user_dropout: 1.0,
                ..base.train
            },
            ..base
        }
    }
}

/// A generated corpus with its indexes and a prepared train/test split.
pub struct Prepared {
    pub synthetic: Synthetic,
    pub indexes: IndexSet,
    pub train: Vec<PreparedInstance>,
    pub test: Vec<PreparedInstance>,
    pub test_raw: Vec<Instance>,
}

pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let synthetic = generate_synthetic(&config.synth, seed).map_err(at("synth"))?;
    let (_, indexes) = build_all(&synthetic.corpus, &config.meta).map_err(at("build-index"))?;
    prepare_split(synthetic, indexes, config, seed)
}

fn prepare_split(synthetic: Synthetic, indexes: IndexSet, config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let prepared = prepare_instances(&synthetic.instances, &indexes, &config.meta);
    let pairs: Vec<(Instance, PreparedInstance)> =
        synthetic.instances.iter().cloned().zip(prepared).collect();
    let (train, test) = split_instances(pairs, config.train_frac, seed).map_err(at("split"))?;
    let (test_raw, test) = test.into_iter().unzip();
    Ok(Prepared {
        synthetic,
        indexes,
        train: train.into_iter().map(|p| p.1).collect(),
        test,
        test_raw,
    })
}

pub struct Trained {
    pub model: RankingModel,
    pub train_report: TrainReport,
    pub eval: EvalReport,
}

pub fn train_variant(
    data: &Prepared,
    config: &ExperimentConfig,
    variant: Variant,
    seed: u64,
) -> Result<Trained> {
    let corpus = &data.synthetic.corpus;
    let mut model = RankingModel::new(config.ranker.with_variant(variant), ModelDims::of(corpus), seed);
    let tc = TrainConfig { seed, ..config.train };
    let train_report = train(&mut model, corpus, &data.train, &tc).map_err(at("train"))?;
    let eval = evaluate(&model, corpus, &data.test, config.threshold).map_err(at("eval"))?;
    Ok(Trained {
        model,
        train_report,
        eval,
    })
}

/// AUC of uniformly random scores on the test labels.
pub fn random_baseline_auc(test: &[PreparedInstance], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let scores: Vec<f64> = test.iter().map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<u8> = test.iter().map(|p| p.label).collect();
    auc(&scores, &labels).map_err(at("eval"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub trials: usize,
    pub hits: usize,
    pub hit_rate: f64,
}

/// Events planted per loop trial.
pub const LOOP_EVENTS: usize = 3;

/// Items planted for `query` whose strongest item-to-query index entry is
/// `query` itself.
pub fn strongly_linked(synthetic: &Synthetic, indexes: &IndexSet, query: QueryId) -> Vec<ItemId> {
    synthetic.truth.linked_items[query.index()]
        .iter()
        .copied()
        .filter(|i| indexes.u2i2q.row(i.index()).first().map(|e| e.0) == Some(query))
        .collect()
}

/// For each trial: a distinct user purchases [`LOOP_EVENTS`] items strongly
/// linked to a random query `q*`, then asks for suggestions; a hit is `q*` in
/// the top list.
pub fn loop_trials(engine: &Engine, synthetic: &Synthetic, trials: usize, seed: u64) -> Result<LoopReport> {
    let corpus = &synthetic.corpus;
    let snap = engine.snapshot();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x100b);
    let mut users: Vec<usize> = (0..corpus.n_users()).collect();
    users.shuffle(&mut rng);
    if users.len() < trials {
        return Err(StageError {
            stage: "loop",
            message: format!("{trials} trials need as many users, corpus has {}", users.len()),
        });
    }
    let strong: Vec<Vec<ItemId>> = (0..corpus.n_queries())
        .map(|q| strongly_linked(synthetic, &snap.indexes, QueryId(q as u32)))
        .collect();
    let eligible: Vec<QueryId> = (0..corpus.n_queries())
        .filter(|&q| strong[q].len() >= LOOP_EVENTS)
        .map(|q| QueryId(q as u32))
        .collect();
    if eligible.is_empty() {
        return Err(StageError {
            stage: "loop",
            message: "no query has enough linked items".into(),
        });
    }
    let mut hits = 0;
    for &u in users.iter().take(trials) {
        let target = eligible[rng.random_range(0..eligible.len())];
        let linked = &strong[target.index()];
        let picks: Vec<ItemId> = linked.choose_multiple(&mut rng, LOOP_EVENTS).copied().collect();
        let mut t = engine
            .session_events(u as u32)
            .map_err(at("loop"))?
            .last()
            .map_or(crate::corpus::SYNTH_EPOCH, |e| e.timestamp);
        for item in picks {
            t += 3600;
            engine
                .record_event(EventRequest {
                    user: u as u32,
                    item: item.0,
                    action: ActionType::Purchase.code(),
                    timestamp: t,
                })
                .map_err(at("loop"))?;
        }
        let resp = engine.suggest(u as u32, Some(t + 60), false).map_err(at("loop"))?;
        if resp.queries.iter().any(|q| q.query_id == target.0) {
            hits += 1;
        }
    }
    Ok(LoopReport {
        trials,
        hits,
        hit_rate: hits as f64 / trials.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub seed: u64,
    pub experiment: ExperimentConfig,
    pub loop_trials: usize,
    pub min_auc: f64,
    pub min_loop_hit_rate: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 42,
            experiment: ExperimentConfig::default(),
            loop_trials: 100,
            min_auc: 0.75,
            min_loop_hit_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub auc: f64,
    pub f1: f64,
    pub auc_random_baseline: f64,
    pub threshold: f64,
    pub train_instances: usize,
    pub test_instances: usize,
    pub test_positives: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epsilon: f64,
    #[serde(rename = "loop")]
    pub loop_report: LoopReport,
    pub min_auc: f64,
    pub min_loop_hit_rate: f64,
    pub passed: bool,
}

/// Runs the whole pipeline under `out_dir`:
/// `corpus/`, `instances.jsonl`, `indexes/`, `model.ckpt` and `report.json`.
/// The corpus goes through a write/ingest round trip before use.
pub fn run_demo(config: &DemoConfig, out_dir: &Path) -> Result<DemoReport> {
    std::fs::create_dir_all(out_dir).map_err(at("setup"))?;
    let probe = out_dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(at("setup"))?;
    let _ = std::fs::remove_file(&probe);

    let seed = config.seed;
    let ex = &config.experiment;
    let mut synthetic = generate_synthetic(&ex.synth, seed).map_err(at("synth"))?;
    let corpus_dir = out_dir.join("corpus");
    write_dir(&synthetic.corpus, &corpus_dir).map_err(at("ingest"))?;
    write_instances(&synthetic.corpus, &synthetic.instances, &out_dir.join(INSTANCES_FILE))
        .map_err(at("ingest"))?;
    let ingested: Corpus = ingest_dir(&corpus_dir).map_err(at("ingest"))?;
    if ingested != synthetic.corpus {
        return Err(StageError {
            stage: "ingest",
            message: "re-ingested corpus differs from the generated one".into(),
        });
    }
    synthetic.corpus = ingested;

    let (tables, indexes) = build_all(&synthetic.corpus, &ex.meta).map_err(at("build-index"))?;
    save_indexes(&indexes, &tables, &out_dir.join("indexes")).map_err(at("build-index"))?;
    let data = prepare_split(synthetic, indexes, ex, seed)?;

    let trained = train_variant(&data, ex, Variant::Modified, seed)?;
    trained.model.save(&out_dir.join("model.ckpt")).map_err(at("train"))?;
    let baseline = random_baseline_auc(&data.test, seed)?;

    let n_train = data.train.len();
    let Prepared { synthetic, indexes, .. } = data;
    let eps = trained.model.epsilon();
    let snapshot = Snapshot::new(
        Arc::new(synthetic.corpus.clone()),
        Arc::new(indexes),
        Some(Arc::new(trained.model)),
        ex.meta,
    );
    let engine = Engine::new(snapshot, ServiceConfig::default());
    let loop_report = loop_trials(&engine, &synthetic, config.loop_trials, seed)?;

    let report = DemoReport {
        seed,
        auc: trained.eval.auc,
        f1: trained.eval.f1,
        auc_random_baseline: baseline,
        threshold: ex.threshold,
        train_instances: n_train,
        test_instances: trained.eval.instances,
        test_positives: trained.eval.positives,
        initial_loss: trained.train_report.initial_loss,
        final_loss: trained.train_report.final_loss(),
        epsilon: eps,
        loop_report,
        min_auc: config.min_auc,
        min_loop_hit_rate: config.min_loop_hit_rate,
        passed: trained.eval.auc >= config.min_auc && loop_report.hit_rate >= config.min_loop_hit_rate,
    };
    let json = serde_json::to_string_pretty(&report).map_err(at("report"))?;
    std::fs::write(out_dir.join("report.json"), json + "\n").map_err(at("report"))?;
    Ok(report)
}
