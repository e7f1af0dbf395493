//! Transport-independent engine behind the HTTP service.
//!
//! Holds an atomically swappable snapshot (corpus, indexes, optional model),
//! per-user sessions with a bounded event buffer, and the feedback instance
//! log. Every method maps its failures to a [`ServiceError`] carrying an HTTP
//! status, so the HTTP layer only does (de)serialization.

use crate::corpus::{
    instance_line, ActionType, BehaviorEvent, ContextFeatures, Corpus, Instance, ItemId, QueryId,
    Timestamp, UserId, MAX_HISTORY,
};
use crate::metapath::{generate_candidates, IndexSet, MetaPathConfig};
use crate::ranker::{recent_items, RankingModel, DEFAULT_TOP_N};
use crate::retrieval::{retrieve_items, RetrievalWeights};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("no ranking model is loaded")]
    ModelNotLoaded,
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::NotFound(_) => 404,
            ServiceError::ModelNotLoaded => 409,
            ServiceError::Internal(_) => 500,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// Immutable state shared by all request handlers.
#[derive(Debug)]
pub struct Snapshot {
    pub corpus: Arc<Corpus>,
    pub indexes: Arc<IndexSet>,
    pub model: Option<Arc<RankingModel>>,
    pub meta: MetaPathConfig,
    /// Queries by descending search-log frequency, ties by ascending id.
    popular: Vec<(QueryId, f64)>,
}

impl Snapshot {
    pub fn new(
        corpus: Arc<Corpus>,
        indexes: Arc<IndexSet>,
        model: Option<Arc<RankingModel>>,
        meta: MetaPathConfig,
    ) -> Self {
        let mut counts = vec![0usize; corpus.n_queries()];
        for rec in &corpus.search_log {
            counts[rec.query.index()] += 1;
        }
        let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let mut popular: Vec<(QueryId, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(q, &c)| (QueryId(q as u32), c as f64 / max))
            .collect();
        popular.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Snapshot {
            corpus,
            indexes,
            model,
            meta,
            popular,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub top_n: usize,
    pub retrieval: RetrievalWeights,
    /// Start each session from the user's last corpus events instead of empty.
    pub seed_sessions: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            top_n: DEFAULT_TOP_N,
            retrieval: RetrievalWeights::default(),
            seed_sessions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Issued {
    id: String,
    queries: Vec<QueryId>,
    issued_at: Timestamp,
    context: ContextFeatures,
    history: Vec<BehaviorEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub user: UserId,
    events: VecDeque<BehaviorEvent>,
    last: Option<Issued>,
}

impl SessionState {
    fn empty(user: UserId) -> Self {
        SessionState {
            user,
            events: VecDeque::new(),
            last: None,
        }
    }

    fn seeded(corpus: &Corpus, user: UserId) -> Self {
        let all: Vec<BehaviorEvent> = corpus.user_events(user).copied().collect();
        let start = all.len().saturating_sub(MAX_HISTORY);
        SessionState {
            user,
            events: all[start..].iter().copied().collect(),
            last: None,
        }
    }

    pub fn events(&self) -> Vec<BehaviorEvent> {
        self.events.iter().copied().collect()
    }

    /// Inserts in timestamp order; an exact duplicate is a no-op. Returns
    /// whether the buffer changed.
    fn push(&mut self, ev: BehaviorEvent) -> bool {
        if self.events.contains(&ev) {
            return false;
        }
        let pos = self.events.partition_point(|e| e.timestamp <= ev.timestamp);
        if self.events.len() == MAX_HISTORY && pos == 0 {
            // older than everything in a full buffer: it would be evicted at once
            return false;
        }
        self.events.insert(pos, ev);
        if self.events.len() > MAX_HISTORY {
            self.events.pop_front();
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRequest {
    pub user: u32,
    pub item: u32,
    pub action: u8,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestedQuery {
    pub query_id: u32,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub queries: Vec<SuggestedQuery>,
    pub suggestion_id: String,
    pub fallback: bool,
    pub decision_time: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub user: u32,
    pub suggestion_id: String,
    #[serde(default)]
    pub clicked_query: Option<u32>,
    #[serde(default)]
    pub ignored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub item_id: u32,
    pub title: String,
    pub category: u32,
    pub score: f64,
}

struct InstanceLog {
    entries: Vec<Instance>,
    sink: Option<BufWriter<File>>,
}

pub struct Engine {
    snapshot: RwLock<Arc<Snapshot>>,
    sessions: Mutex<HashMap<UserId, Arc<Mutex<SessionState>>>>,
    log: Mutex<InstanceLog>,
    config: ServiceConfig,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Engine {
    pub fn new(snapshot: Snapshot, config: ServiceConfig) -> Self {
        Engine {
            snapshot: RwLock::new(Arc::new(snapshot)),
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(InstanceLog {
                entries: Vec::new(),
                sink: None,
            }),
            config,
        }
    }

    /// Also appends every logged instance to `path` as an instance-file line.
    pub fn with_instance_log(self, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        lock(&self.log).sink = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Atomically replaces the snapshot. Sessions survive; pending suggestions
    /// stay answerable.
    pub fn swap_snapshot(&self, snapshot: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn user(snap: &Snapshot, user: u32) -> Result<UserId> {
        let id = UserId(user);
        if id.index() >= snap.corpus.n_users() {
            return Err(ServiceError::NotFound(format!("unknown user {user}")));
        }
        Ok(id)
    }

    fn session(&self, snap: &Snapshot, user: UserId) -> Arc<Mutex<SessionState>> {
        lock(&self.sessions)
            .entry(user)
            .or_insert_with(|| {
                let state = if self.config.seed_sessions {
                    SessionState::seeded(&snap.corpus, user)
                } else {
                    SessionState::empty(user)
                };
                Arc::new(Mutex::new(state))
            })
            .clone()
    }

    pub fn session_events(&self, user: u32) -> Result<Vec<BehaviorEvent>> {
        let snap = self.snapshot();
        let user = Self::user(&snap, user)?;
        let session = self.session(&snap, user);
        let events = lock(&session).events();
        Ok(events)
    }

    pub fn record_event(&self, req: EventRequest) -> Result<()> {
        let snap = self.snapshot();
        let action = ActionType::from_code(req.action)
            .ok_or_else(|| ServiceError::BadRequest(format!("invalid action {}", req.action)))?;
        if req.timestamp <= 0 {
            return Err(ServiceError::BadRequest("timestamp must be positive".into()));
        }
        let user = Self::user(&snap, req.user)?;
        if req.item as usize >= snap.corpus.n_items() {
            return Err(ServiceError::NotFound(format!("unknown item {}", req.item)));
        }
        let session = self.session(&snap, user);
        lock(&session).push(BehaviorEvent {
            user,
            item: ItemId(req.item),
            action,
            timestamp: req.timestamp,
        });
        Ok(())
    }

    /// Top queries for `user`. `at` defaults to one second after the newest
    /// buffered event, so repeated calls on unchanged state agree exactly.
    pub fn suggest(&self, user: u32, at: Option<Timestamp>, special_day: bool) -> Result<SuggestResponse> {
        let snap = self.snapshot();
        let model = snap.model.clone().ok_or(ServiceError::ModelNotLoaded)?;
        let user = Self::user(&snap, user)?;
        let session = self.session(&snap, user);
        let mut session = lock(&session);
        let history = session.events();
        let newest = history.last().map(|e| e.timestamp);
        let decision_time = match (at, newest) {
            (Some(t), Some(n)) if t <= n => {
                return Err(ServiceError::BadRequest(format!(
                    "decision time {t} is not after the newest event at {n}"
                )));
            }
            (Some(t), _) => t,
            (None, Some(n)) => n + 1,
            (None, None) => 1,
        };
        let context = ContextFeatures::at(decision_time, special_day);
        let corpus = &snap.corpus;

        let candidates = generate_candidates(
            user,
            &recent_items(&history),
            &snap.indexes,
            snap.meta.per_path_cap,
            snap.meta.total_cap,
        );
        let (ranked, fallback) = if candidates.is_empty() {
            (snap.popular.iter().take(self.config.top_n).copied().collect(), true)
        } else {
            let known = model.is_seen(user).then_some(user);
            let state = model
                .user_state(corpus, known, &history, decision_time)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            let ranked = model
                .rank_candidates(corpus, &state, context, &candidates, self.config.top_n)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            (ranked, false)
        };

        let queries: Vec<SuggestedQuery> = ranked
            .iter()
            .map(|&(q, score)| SuggestedQuery {
                query_id: q.0,
                text: query_text(corpus, q),
                score,
            })
            .collect();
        let ids: Vec<QueryId> = ranked.iter().map(|r| r.0).collect();
        let suggestion_id = suggestion_id(user, decision_time, history.len(), &ids);
        session.last = Some(Issued {
            id: suggestion_id.clone(),
            queries: ids,
            issued_at: decision_time,
            context,
            history,
        });
        Ok(SuggestResponse {
            queries,
            suggestion_id,
            fallback,
            decision_time,
        })
    }

    /// Logs one positive for the clicked query and a negative for every other
    /// shown query (all negatives when ignored). Consumes the suggestion.
    pub fn feedback(&self, req: &FeedbackRequest) -> Result<Vec<Instance>> {
        let snap = self.snapshot();
        let user = Self::user(&snap, req.user)?;
        let clicked = match (req.clicked_query, req.ignored) {
            (Some(q), false) => Some(QueryId(q)),
            (None, true) => None,
            _ => {
                return Err(ServiceError::BadRequest(
                    "exactly one of clicked_query or ignored:true is required".into(),
                ))
            }
        };
        let session = self.session(&snap, user);
        let mut session = lock(&session);
        let issued = match &session.last {
            Some(s) if s.id == req.suggestion_id => s.clone(),
            _ => {
                return Err(ServiceError::NotFound(format!(
                    "suggestion {} is not the user's latest",
                    req.suggestion_id
                )))
            }
        };
        if let Some(q) = clicked {
            if !issued.queries.contains(&q) {
                return Err(ServiceError::BadRequest(format!("query {q} was not suggested")));
            }
        }
        let instances: Vec<Instance> = issued
            .queries
            .iter()
            .map(|&q| Instance {
                user,
                query: q,
                label: u8::from(Some(q) == clicked),
                context: issued.context,
                history: issued.history.clone(),
                decision_time: issued.issued_at,
            })
            .collect();
        let mut log = lock(&self.log);
        if let Some(sink) = log.sink.as_mut() {
            let write = |sink: &mut BufWriter<File>| -> std::io::Result<()> {
                for inst in &instances {
                    writeln!(sink, "{}", instance_line(&snap.corpus, inst))?;
                }
                sink.flush()
            };
            write(sink).map_err(|e| ServiceError::Internal(format!("instance log: {e}")))?;
        }
        log.entries.extend(instances.iter().cloned());
        session.last = None;
        Ok(instances)
    }

    pub fn logged_instances(&self) -> Vec<Instance> {
        lock(&self.log).entries.clone()
    }

    pub fn recommend(&self, user: u32, query: u32, k: usize) -> Result<Vec<RecommendedItem>> {
        let snap = self.snapshot();
        if k == 0 {
            return Err(ServiceError::BadRequest("k must be at least 1".into()));
        }
        let user = Self::user(&snap, user)?;
        let query = QueryId(query);
        if query.index() >= snap.corpus.n_queries() {
            return Err(ServiceError::NotFound(format!("unknown query {query}")));
        }
        let history = lock(&self.session(&snap, user)).events();
        let corpus = &snap.corpus;
        let items = retrieve_items(query, &history, corpus, k, &self.config.retrieval)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(items
            .into_iter()
            .map(|(i, score)| {
                let item = &corpus.items[i.index()];
                RecommendedItem {
                    item_id: i.0,
                    title: words(corpus, &item.title_tokens),
                    category: item.category.0,
                    score,
                }
            })
            .collect())
    }
}

fn words(corpus: &Corpus, tokens: &[crate::corpus::WordId]) -> String {
    tokens
        .iter()
        .map(|w| corpus.dict.words[w.index()].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn query_text(corpus: &Corpus, query: QueryId) -> String {
    words(corpus, &corpus.queries[query.index()].text_tokens)
}

pub fn item_title(corpus: &Corpus, item: ItemId) -> String {
    words(corpus, &corpus.items[item.index()].title_tokens)
}

fn suggestion_id(user: UserId, decision_time: Timestamp, n_events: usize, queries: &[QueryId]) -> String {
    let mut h = Sha256::new();
    h.update(format!("{user}|{decision_time}|{n_events}|").as_bytes());
    for q in queries {
        h.update(format!("{q},").as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}
