use super::features::{
    context_fixed, hour_bucket, meta_feature_vector, ModelDims, ScoringInput, CONTEXT_FIXED_DIM,
    HOUR_BUCKETS, META_FEATURE_DIM,
};
use super::{RankerError, Result};
use crate::corpus::{BehaviorEvent, Corpus, ItemId, QueryId, Timestamp, UserId};
use crate::metapath::CandidateSet;
use crate::nn::{
    attend, bigru_states, decay_interval, modulate, AttentionParams, Checkpoint,
    DenseHead, GruParams, NodeId, ParamId, ParamStore, Tape, Tensor, INIT_SCALE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which behavior encoder sits in front of the head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Attention weights from `A_l·h_k ⊗ Δt^ε`.
    #[default]
    Modified,
    /// Attention weights from the raw encoder states.
    PlainAttention,
    /// No attention: the glimpse is `[fwd_n ; bwd_1]`.
    NoAttention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Modified, Variant::PlainAttention, Variant::NoAttention];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Modified => "modified",
            Variant::PlainAttention => "plain_attention",
            Variant::NoAttention => "no_attention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub embed_dim: usize,
    /// Units per GRU direction; the decoder state has the same width.
    pub hidden: usize,
    /// Width of the attention MLP's hidden layer; defaults to `hidden`.
    pub attn_hidden: Option<usize>,
    pub head_hidden: [usize; 2],
    pub variant: Variant,
    pub glimpse_uses_modulated: bool,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            embed_dim: 32,
            hidden: 256,
            attn_hidden: None,
            head_hidden: [128, 64],
            variant: Variant::Modified,
            glimpse_uses_modulated: false,
        }
    }
}

impl RankerConfig {
    /// Desk-scale configuration used by the demo and the test suites.
    pub fn small() -> Self {
        RankerConfig {
            embed_dim: 8,
            hidden: 16,
            attn_hidden: None,
            head_hidden: [32, 16],
            ..RankerConfig::default()
        }
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        RankerConfig { variant, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    user_emb: ParamId,
    word_emb: ParamId,
    cat_emb: ParamId,
    feat_emb: ParamId,
    hour_emb: ParamId,
    item_w: ParamId,
    item_b: ParamId,
    fwd: GruParams,
    bwd: GruParams,
    attn: AttentionParams,
    s0_w: ParamId,
    s0_b: ParamId,
    dec: GruParams,
    default_s1: ParamId,
    head: DenseHead,
}

/// Embedding table with one extra zero row reserved for out-of-vocabulary ids.
fn embedding(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> ParamId {
    let id = store.add_uniform(name, vec![vocab + 1, dim], INIT_SCALE, rng);
    let data = store.get_mut(id).data_mut();
    let n = data.len();
    data[n - dim..].iter_mut().for_each(|x| *x = 0.0);
    id
}

impl Layout {
    fn build(cfg: &RankerConfig, dims: &ModelDims, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let e = cfg.embed_dim;
        let d = cfg.hidden;
        let user_emb = embedding(store, "emb.user", dims.n_users, e, rng);
        let word_emb = embedding(store, "emb.word", dims.n_words, e, rng);
        let cat_emb = embedding(store, "emb.category", dims.n_categories, e, rng);
        let feat_emb = embedding(store, "emb.feature", dims.n_feature_values, e, rng);
        let hour_emb = store.add_uniform("emb.hour", vec![HOUR_BUCKETS, e], INIT_SCALE, rng);
        let item_w = store.add_uniform("item.w", vec![e, 3 * e + dims.item_cont], INIT_SCALE, rng);
        let item_b = store.add("item.b", Tensor::zeros(vec![e]));
        let fwd = GruParams::register(store, "gru.fwd", e, d, rng);
        let bwd = GruParams::register(store, "gru.bwd", e, d, rng);
        let attn = AttentionParams::register(store, "attn", 2 * d, d, cfg.attn_hidden.unwrap_or(d), rng);
        let s0_w = store.add_uniform("s0.w", vec![d, 2 * e], INIT_SCALE, rng);
        let s0_b = store.add("s0.b", Tensor::zeros(vec![d]));
        let dec = GruParams::register(store, "gru.dec", 2 * e + 2 * d, d, rng);
        let default_s1 = store.add("s1.default", Tensor::zeros(vec![d]));
        let head_in = (e + dims.user_cont + d)
            + (3 * e + META_FEATURE_DIM + dims.query_cont)
            + (CONTEXT_FIXED_DIM + e);
        let head = DenseHead::register(store, "head", head_in, cfg.head_hidden, rng);
        Layout {
            user_emb,
            word_emb,
            cat_emb,
            feat_emb,
            hour_emb,
            item_w,
            item_b,
            fwd,
            bwd,
            attn,
            s0_w,
            s0_b,
            dec,
            default_s1,
            head,
        }
    }
}

/// Encoder outputs for one history, on some tape.
struct Encoded {
    h: Vec<NodeId>,
    h_prime: Vec<NodeId>,
    /// `[fwd_n ; bwd_1]`.
    summary: NodeId,
}

/// Query-independent encoder values for one user at one decision time.
///
/// Built once per request and reused across every candidate query.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub user: Option<UserId>,
    pub decision_time: Timestamp,
    h: Vec<Vec<f64>>,
    h_prime: Vec<Vec<f64>>,
    summary: Vec<f64>,
}

impl UserState {
    pub fn history_len(&self) -> usize {
        self.h.len()
    }
}

/// Attention weights and behavior feature for one (history, query) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorTrace {
    /// Empty when the history is empty or the variant has no attention.
    pub weights: Vec<f64>,
    pub h_prime_norms: Vec<f64>,
    pub s1: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointConfig {
    ranker: RankerConfig,
    dims: ModelDims,
    seen_users: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    config: RankerConfig,
    dims: ModelDims,
    pub(crate) store: ParamStore,
    layout: Layout,
    seen: Vec<bool>,
}

impl RankingModel {
    pub fn new(config: RankerConfig, dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layout = Layout::build(&config, &dims, &mut store, &mut rng);
        RankingModel {
            config,
            dims,
            store,
            layout,
            seen: vec![false; dims.n_users],
        }
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn with_store(&self, store: ParamStore) -> Self {
        RankingModel {
            config: self.config,
            dims: self.dims,
            store,
            layout: self.layout,
            seen: self.seen.clone(),
        }
    }

    pub fn attention(&self) -> &AttentionParams {
        &self.layout.attn
    }

    pub fn head(&self) -> &DenseHead {
        &self.layout.head
    }

    pub fn epsilon(&self) -> f64 {
        self.layout.attn.epsilon(&self.store)
    }

    /// Same parameters behind a different behavior encoder.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut m = self.clone();
        m.config.variant = variant;
        m
    }

    /// Freezes every `A_l` at identity and `ε` at zero.
    pub fn disable_modulation(&mut self) {
        let attn = self.layout.attn;
        for a in attn.a {
            *self.store.get_mut(a) = Tensor::identity(attn.state);
            self.store.freeze(a);
        }
        self.store.get_mut(attn.epsilon).data_mut()[0] = 0.0;
        self.store.freeze(attn.epsilon);
    }

    pub fn mark_seen(&mut self, user: UserId) {
        if let Some(s) = self.seen.get_mut(user.index()) {
            *s = true;
        }
    }

    pub fn is_seen(&self, user: UserId) -> bool {
        self.seen.get(user.index()).copied().unwrap_or(false)
    }

    /// Embedding row for a user: their own if seen in training, else the OOV row.
    fn user_row(&self, user: Option<UserId>) -> usize {
        match user {
            Some(u) if self.is_seen(u) => u.index(),
            _ => self.dims.n_users,
        }
    }

    /// Column `id` of an embedding table; `id == vocab` is the OOV row.
    pub fn embed(&self, table: ParamId, id: usize) -> Result<Vec<f64>> {
        let mut t = Tape::new(&self.store);
        let n = t.embed(table, id)?;
        Ok(t.value(n).to_vec())
    }

    fn mean_embed(&self, tape: &mut Tape, table: ParamId, ids: impl Iterator<Item = usize>) -> Result<NodeId> {
        let rows = ids.map(|i| tape.embed(table, i)).collect::<Result<Vec<_>, _>>()?;
        Ok(tape.mean(&rows, self.config.embed_dim)?)
    }

    fn item_vector(&self, tape: &mut Tape, corpus: &Corpus, item: ItemId) -> Result<NodeId> {
        let it = corpus
            .items
            .get(item.index())
            .ok_or(RankerError::UnknownId { kind: "item", id: item.index() })?;
        let l = &self.layout;
        let title = self.mean_embed(tape, l.word_emb, it.title_tokens.iter().map(|w| w.index()))?;
        let cat = tape.embed(l.cat_emb, it.category.index())?;
        let disc = self.mean_embed(tape, l.feat_emb, it.discrete_feats.iter().map(|f| f.1 as usize))?;
        let cont = tape.input(it.continuous_feats.clone())?;
        let x = tape.concat(&[title, cat, disc, cont])?;
        Ok(tape.affine(&[(l.item_w, x)], Some(l.item_b))?)
    }

    /// `[text mean ; top-category mean]` of a query.
    fn query_repr(&self, tape: &mut Tape, corpus: &Corpus, query: QueryId) -> Result<NodeId> {
        let q = corpus
            .queries
            .get(query.index())
            .ok_or(RankerError::UnknownId { kind: "query", id: query.index() })?;
        let l = &self.layout;
        let text = self.mean_embed(tape, l.word_emb, q.text_tokens.iter().map(|w| w.index()))?;
        let cats = self.mean_embed(tape, l.cat_emb, q.top_categories.iter().map(|c| c.index()))?;
        Ok(tape.concat(&[text, cats])?)
    }

    fn encode(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        history: &[BehaviorEvent],
        decision_time: Timestamp,
    ) -> Result<Option<Encoded>> {
        if history.is_empty() {
            return Ok(None);
        }
        if let Some(e) = history.iter().find(|e| e.timestamp >= decision_time) {
            return Err(RankerError::TimestampAfterDecision {
                event: e.timestamp,
                decision: decision_time,
            });
        }
        let l = &self.layout;
        let xs = history
            .iter()
            .map(|e| self.item_vector(tape, corpus, e.item))
            .collect::<Result<Vec<_>>>()?;
        let (fwd, bwd) = bigru_states(tape, &l.fwd, &l.bwd, &xs)?;
        let h = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect::<Result<Vec<_>, _>>()?;
        let summary = tape.concat(&[fwd[fwd.len() - 1], bwd[0]])?;
        let h_prime = match self.config.variant {
            Variant::Modified => h
                .iter()
                .zip(history)
                .map(|(&hk, e)| {
                    let dt = decay_interval((decision_time - e.timestamp) as f64);
                    modulate(tape, &l.attn, hk, e.action.code(), dt)
                })
                .collect::<Result<Vec<_>, _>>()?,
            Variant::PlainAttention | Variant::NoAttention => h.clone(),
        };
        Ok(Some(Encoded { h, h_prime, summary }))
    }

    /// `s_1` from the encoder outputs and the query; returns attention weights when used.
    fn behavior(
        &self,
        tape: &mut Tape,
        enc: Option<&Encoded>,
        query_repr: NodeId,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let l = &self.layout;
        let Some(enc) = enc else {
            return Ok((tape.param(l.default_s1)?, None));
        };
        let s0 = tape.affine(&[(l.s0_w, query_repr)], Some(l.s0_b))?;
        let (g1, weights) = match self.config.variant {
            Variant::NoAttention => (enc.summary, None),
            _ => {
                let base = if self.config.glimpse_uses_modulated {
                    &enc.h_prime
                } else {
                    &enc.h
                };
                let (w, g) = attend(tape, &l.attn, s0, &enc.h_prime, base)?;
                (g, Some(w))
            }
        };
        let input = tape.concat(&[query_repr, g1])?;
        Ok((l.dec.step(tape, input, s0)?, weights))
    }

    fn logits(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        input: &ScoringInput,
        enc: Option<&Encoded>,
        drop_user: bool,
    ) -> Result<NodeId> {
        let l = &self.layout;
        let q = corpus
            .queries
            .get(input.query.index())
            .ok_or(RankerError::UnknownId { kind: "query", id: input.query.index() })?;
        let qr = self.query_repr(tape, corpus, input.query)?;
        let (s1, _) = self.behavior(tape, enc, qr)?;

        let row = if drop_user { self.dims.n_users } else { self.user_row(input.user) };
        let user = tape.embed(l.user_emb, row)?;
        let user_cont = match input.user {
            Some(u) if u.index() < corpus.users.len() => corpus.users[u.index()].continuous_feats.clone(),
            _ => vec![0.0; self.dims.user_cont],
        };
        let user_cont = tape.input(user_cont)?;

        let meta = tape.input(meta_feature_vector(&input.features).to_vec())?;
        let qdisc = self.mean_embed(tape, l.feat_emb, q.discrete_feats.iter().map(|f| f.1 as usize))?;
        let qcont = tape.input(q.continuous_feats.clone())?;

        let ctx = tape.input(context_fixed(&input.context).to_vec())?;
        let hour = tape.embed(l.hour_emb, hour_bucket(input.context.hour_of_day))?;

        let x = tape.concat(&[user, user_cont, s1, qr, meta, qdisc, qcont, ctx, hour])?;
        Ok(l.head.logits(tape, x)?)
    }

    /// Builds the forward graph and returns the cross-entropy loss node.
    /// `drop_user` swaps the user embedding for the OOV row.
    pub(crate) fn loss_on_tape(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        input: &ScoringInput,
        label: u8,
        drop_user: bool,
    ) -> Result<NodeId> {
        let enc = self.encode(tape, corpus, &input.history, input.decision_time)?;
        let z = self.logits(tape, corpus, input, enc.as_ref(), drop_user)?;
        Ok(tape.softmax_xent(z, label as usize)?)
    }

    /// Click probability for one impression.
    pub fn score(&self, corpus: &Corpus, input: &ScoringInput) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, corpus, &input.history, input.decision_time)?;
        let z = self.logits(&mut tape, corpus, input, enc.as_ref(), false)?;
        let p = tape.softmax(z)?;
        Ok(tape.value(p)[1])
    }

    /// Cross-entropy loss for one labelled impression.
    pub fn loss(&self, corpus: &Corpus, input: &ScoringInput, label: u8) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let l = self.loss_on_tape(&mut tape, corpus, input, label, false)?;
        Ok(tape.value(l)[0])
    }

    /// Attention weights, `‖h'_k‖` and `s_1` for a history scored against `query`.
    pub fn encode_behavior(
        &self,
        corpus: &Corpus,
        history: &[BehaviorEvent],
        decision_time: Timestamp,
        query: QueryId,
    ) -> Result<BehaviorTrace> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, corpus, history, decision_time)?;
        let qr = self.query_repr(&mut tape, corpus, query)?;
        let (s1, w) = self.behavior(&mut tape, enc.as_ref(), qr)?;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(BehaviorTrace {
            weights: w.map(|w| tape.value(w).to_vec()).unwrap_or_default(),
            h_prime_norms: enc
                .as_ref()
                .map(|e| e.h_prime.iter().map(|&n| norm(tape.value(n))).collect())
                .unwrap_or_default(),
            s1: tape.value(s1).to_vec(),
        })
    }

    /// Runs the query-independent part of the encoder once.
    pub fn user_state(
        &self,
        corpus: &Corpus,
        user: Option<UserId>,
        history: &[BehaviorEvent],
        decision_time: Timestamp,
    ) -> Result<UserState> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, corpus, history, decision_time)?;
        let vals = |ids: &[NodeId]| ids.iter().map(|&n| tape.value(n).to_vec()).collect::<Vec<_>>();
        let state = match &enc {
            Some(e) => UserState {
                user,
                decision_time,
                h: vals(&e.h),
                h_prime: vals(&e.h_prime),
                summary: tape.value(e.summary).to_vec(),
            },
            None => UserState {
                user,
                decision_time,
                h: Vec::new(),
                h_prime: Vec::new(),
                summary: Vec::new(),
            },
        };
        Ok(state)
    }

    fn score_from_state(&self, corpus: &Corpus, state: &UserState, input: &ScoringInput) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let enc = if state.h.is_empty() {
            None
        } else {
            let inputs = |tape: &mut Tape, vs: &[Vec<f64>]| {
                vs.iter().map(|v| tape.input(v.clone())).collect::<Result<Vec<_>, _>>()
            };
            let h = inputs(&mut tape, &state.h)?;
            let h_prime = inputs(&mut tape, &state.h_prime)?;
            let summary = tape.input(state.summary.clone())?;
            Some(Encoded { h, h_prime, summary })
        };
        let z = self.logits(&mut tape, corpus, input, enc.as_ref(), false)?;
        let p = tape.softmax(z)?;
        Ok(tape.value(p)[1])
    }

    /// Scores every candidate against one user state and returns the best
    /// `top_n`, descending by probability with ties broken by ascending id.
    pub fn rank_candidates(
        &self,
        corpus: &Corpus,
        state: &UserState,
        context: crate::corpus::ContextFeatures,
        candidates: &CandidateSet,
        top_n: usize,
    ) -> Result<Vec<(QueryId, f64)>> {
        let mut scored = candidates
            .entries
            .par_iter()
            .map(|&(q, f)| {
                let input = ScoringInput {
                    user: state.user,
                    query: q,
                    context,
                    history: Vec::new(),
                    decision_time: state.decision_time,
                    features: f,
                };
                self.score_from_state(corpus, state, &input).map(|p| (q, p))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(top_n);
        Ok(scored)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = CheckpointConfig {
            ranker: self.config,
            dims: self.dims,
            seen_users: (0..self.seen.len() as u32).filter(|&u| self.seen[u as usize]).collect(),
        };
        let value = serde_json::to_value(&cfg).expect("config serializes");
        Ok(Checkpoint::capture(&self.store, value, self.epsilon()).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let cfg: CheckpointConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| RankerError::Checkpoint(e.to_string()))?;
        let mut model = RankingModel::new(cfg.ranker, cfg.dims, 0);
        ck.restore_into(&mut model.store)?;
        for u in cfg.seen_users {
            model.mark_seen(UserId(u));
        }
        Ok(model)
    }

    /// Table ids, for tests and diagnostics.
    pub fn embedding_tables(&self) -> [ParamId; 5] {
        let l = &self.layout;
        [l.user_emb, l.word_emb, l.cat_emb, l.feat_emb, l.hour_emb]
    }
}
