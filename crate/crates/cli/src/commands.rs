//! Subcommand definitions and their implementations.

use crate::server::{self, AppState, Sources};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use qsuggest_core::corpus::{
    generate_synthetic, ingest_dir, read_instances, split_instances, write_dir, write_instances,
    Corpus, SynthConfig, INSTANCES_FILE,
};
use qsuggest_core::metapath::{
    build_all, index_file_name, load_indexes, save_index, IndexSet, MetaPathConfig, PathType,
};
use qsuggest_core::pipeline::{run_demo, DemoConfig};
use qsuggest_core::ranker::{evaluate, prepare_instances, train, RankerConfig, RankingModel, TrainConfig, Variant};
use qsuggest_core::ranker::ModelDims;
use qsuggest_core::service::{Engine, ServiceConfig, Snapshot};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn data(error: anyhow::Error) -> Self {
        Failure { code: EXIT_DATA, error }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Failure::data(error.into())
    }
}

pub type Outcome = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "qsuggest", version, about = "Query suggestion: candidate generation, ranking and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with labelled instances.
    Synth(SynthArgs),
    /// Validate a corpus directory (and optionally an instance file).
    Ingest(IngestArgs),
    /// Estimate edge tables and write the three meta-path indexes.
    BuildIndex(BuildIndexArgs),
    /// Train the ranker on an instance file.
    Train(TrainArgs),
    /// Evaluate a model checkpoint on an instance file.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Synthetic end-to-end run writing report.json.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON generator config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    /// Planted signal strength in [0, 1].
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub instances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long, visible_alias = "in")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Indexes to write, comma separated; all three when omitted. `serve`
    /// and `train --indexes` need all three.
    #[arg(long, value_delimiter = ',')]
    pub path_type: Vec<PathType>,
    /// JSON candidate-generation config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub table_k: Option<usize>,
    #[arg(long, visible_alias = "k")]
    pub index_k: Option<usize>,
}

/// Model, optimizer and candidate-generation settings for `train`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSetup {
    pub ranker: RankerConfig,
    pub train: TrainConfig,
    pub meta: MetaPathConfig,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Index directory from `build-index`; built in memory when omitted.
    #[arg(long)]
    pub indexes: Option<PathBuf>,
    /// JSON with `ranker`, `train` and `meta` sections; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// modified, plain_attention or no_attention.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Use the small model (embedding 8, hidden 16).
    #[arg(long)]
    pub small: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub indexes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub indexes: PathBuf,
    /// Without a model `/suggest` answers 409.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Static assets served for every path the API does not claim.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Append feedback instances to this file.
    #[arg(long)]
    pub instance_log: Option<PathBuf>,
    /// Start sessions from each user's latest corpus events.
    #[arg(long)]
    pub seed_sessions: bool,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON demo config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loop_trials: Option<usize>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown variant {s:?}"))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_corpus(dir: &Path) -> anyhow::Result<Corpus> {
    ingest_dir(dir).with_context(|| format!("ingesting {}", dir.display()))
}

fn indexes_for(corpus: &Corpus, dir: Option<&Path>, meta: &MetaPathConfig) -> anyhow::Result<IndexSet> {
    match dir {
        Some(d) => load_indexes(d).with_context(|| format!("loading indexes from {}", d.display())),
        None => Ok(build_all(corpus, meta)?.1),
    }
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::BuildIndex(a) => build_index(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
        Command::Demo(a) => demo(a),
    }
}

fn synth(a: SynthArgs) -> Outcome {
    let mut cfg: SynthConfig = read_config(a.config.as_deref())?;
    if let Some(u) = a.users {
        cfg.n_users = u;
    }
    if let Some(n) = a.instances {
        cfg.n_instances = n;
    }
    if let Some(s) = a.signal {
        cfg.signal = s;
    }
    let s = generate_synthetic(&cfg, a.seed)?;
    write_dir(&s.corpus, &a.out)?;
    write_instances(&s.corpus, &s.instances, &a.out.join(INSTANCES_FILE))?;
    let (tr, te) = split_instances(s.instances.clone(), a.train_frac, a.seed)?;
    write_instances(&s.corpus, &tr, &a.out.join("train.jsonl"))?;
    write_instances(&s.corpus, &te, &a.out.join("test.jsonl"))?;
    print_json(&json!({
        "out": a.out,
        "users": s.corpus.n_users(),
        "items": s.corpus.n_items(),
        "queries": s.corpus.n_queries(),
        "events": s.corpus.events.len(),
        "instances": s.instances.len(),
        "train": tr.len(),
        "test": te.len(),
    }));
    Ok(())
}

fn ingest(a: IngestArgs) -> Outcome {
    let corpus = load_corpus(&a.corpus)?;
    let instances = match &a.instances {
        Some(p) => Some(read_instances(&corpus, p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    print_json(&json!({
        "users": corpus.n_users(),
        "items": corpus.n_items(),
        "queries": corpus.n_queries(),
        "categories": corpus.n_categories(),
        "scenarios": corpus.scenarios.len(),
        "events": corpus.events.len(),
        "search_records": corpus.search_log.len(),
        "instances": instances.map(|v| v.len()),
    }));
    Ok(())
}

fn build_index(a: BuildIndexArgs) -> Outcome {
    let mut meta: MetaPathConfig = read_config(a.config.as_deref())?;
    if let Some(k) = a.table_k {
        meta.table_k = k;
    }
    if let Some(k) = a.index_k {
        meta.index_k = k;
    }
    let corpus = load_corpus(&a.corpus)?;
    let (tables, indexes) = build_all(&corpus, &meta)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let wanted = if a.path_type.is_empty() { PathType::ALL.to_vec() } else { a.path_type.clone() };
    for &p in &wanted {
        save_index(indexes.get(p), &tables, &a.out.join(index_file_name(p)))?;
    }
    let rows: Vec<_> = wanted
        .iter()
        .map(|&p| indexes.get(p))
        .map(|ix| json!({ "path": ix.path_type.name(), "non_empty_rows": ix.rows.iter().filter(|r| !r.is_empty()).count() }))
        .collect();
    print_json(&json!({ "out": a.out, "indexes": rows }));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut setup: TrainSetup = read_config(a.config.as_deref())?;
    if a.small {
        setup.ranker = RankerConfig {
            variant: setup.ranker.variant,
            glimpse_uses_modulated: setup.ranker.glimpse_uses_modulated,
            ..RankerConfig::small()
        };
    }
    if let Some(v) = a.variant {
        setup.ranker.variant = v;
    }
    if let Some(e) = a.epochs {
        setup.train.epochs = e;
    }
    if let Some(s) = a.seed {
        setup.train.seed = s;
    }
    if let Some(lr) = a.lr {
        setup.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        setup.train.batch_size = b;
    }
    let corpus = load_corpus(&a.corpus)?;
    let instances = read_instances(&corpus, &a.instances)?;
    let indexes = indexes_for(&corpus, a.indexes.as_deref(), &setup.meta)?;
    let data = prepare_instances(&instances, &indexes, &setup.meta);
    let mut model = RankingModel::new(setup.ranker, ModelDims::of(&corpus), setup.train.seed);
    let report = train(&mut model, &corpus, &data, &setup.train)?;
    model.save(&a.out)?;
    print_json(&json!({
        "out": a.out,
        "instances": data.len(),
        "steps": report.steps,
        "initial_loss": report.initial_loss,
        "epoch_loss": report.epoch_loss,
        "epsilon": model.epsilon(),
    }));
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let corpus = load_corpus(&a.corpus)?;
    let model = RankingModel::load(&a.model)?;
    if model.dims() != &ModelDims::of(&corpus) {
        return Err(Failure::data(anyhow!("model was trained on a corpus with different vocabularies")));
    }
    let instances = read_instances(&corpus, &a.instances)?;
    let meta = MetaPathConfig::default();
    let indexes = indexes_for(&corpus, a.indexes.as_deref(), &meta)?;
    let data = prepare_instances(&instances, &indexes, &meta);
    let report = evaluate(&model, &corpus, &data, a.threshold)?;
    print_json(&report);
    Ok(())
}

/// Builds a service snapshot from files.
pub fn load_snapshot(corpus: Arc<Corpus>, src: &Sources, meta: MetaPathConfig) -> anyhow::Result<Snapshot> {
    let indexes = load_indexes(&src.indexes).with_context(|| format!("loading indexes from {}", src.indexes.display()))?;
    for ix in indexes.iter() {
        if ix.n_items() != corpus.n_items() {
            return Err(anyhow!("{} index covers {} items, corpus has {}", ix.path_type, ix.n_items(), corpus.n_items()));
        }
    }
    let model = match &src.model {
        Some(p) => {
            let m = RankingModel::load(p).with_context(|| format!("loading model {}", p.display()))?;
            if m.dims() != &ModelDims::of(&corpus) {
                return Err(anyhow!("model {} does not match the corpus vocabularies", p.display()));
            }
            Some(Arc::new(m))
        }
        None => None,
    };
    Ok(Snapshot::new(corpus, Arc::new(indexes), model, meta))
}

fn serve(a: ServeArgs) -> Outcome {
    tracing_subscriber::fmt().json().with_target(false).init();
    let corpus = Arc::new(load_corpus(&a.corpus)?);
    let sources = Sources {
        model: a.model.clone(),
        indexes: a.indexes.clone(),
    };
    let snapshot = load_snapshot(corpus, &sources, MetaPathConfig::default())?;
    let config = ServiceConfig {
        seed_sessions: a.seed_sessions,
        ..ServiceConfig::default()
    };
    let mut engine = Engine::new(snapshot, config);
    if let Some(p) = &a.instance_log {
        engine = engine
            .with_instance_log(p)
            .with_context(|| format!("opening {}", p.display()))?;
    }
    let state = AppState {
        engine: Arc::new(engine),
        sources: Some(sources),
    };
    let app = server::router(state, a.static_dir.clone());
    let addr = format!("{}:{}", a.bind, a.port);
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(addr = %addr, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")
    })?;
    Ok(())
}

fn demo(a: DemoArgs) -> Outcome {
    let mut cfg: DemoConfig = read_config(a.config.as_deref())?;
    cfg.seed = a.seed;
    if let Some(n) = a.loop_trials {
        cfg.loop_trials = n;
    }
    let report = run_demo(&cfg, &a.out).map_err(|e| Failure::data(anyhow!(e)))?;
    print_json(&report);
    if report.passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ACCEPTANCE,
            error: anyhow!(
                "acceptance thresholds not met: auc {:.4} (min {}), loop hit rate {:.2} (min {})",
                report.auc,
                report.min_auc,
                report.loop_report.hit_rate,
                report.min_loop_hit_rate
            ),
        })
    }
}
