mod common;

use common::{tiny, trained, Fixture};
use qsuggest_core::corpus::{read_instances, MAX_HISTORY};
use qsuggest_core::metapath::{IndexSet, MetaPathConfig, MetaPathIndex, PathType};
use qsuggest_core::service::{Engine, EventRequest, FeedbackRequest, ServiceConfig, ServiceError, Snapshot};
use std::sync::Arc;

fn engine(f: &Fixture, with_model: bool) -> Engine {
    let model = with_model.then(|| Arc::new(trained(f, 1, 1)));
    let snap = Snapshot::new(
        Arc::new(f.syn.corpus.clone()),
        Arc::new(f.indexes.clone()),
        model,
        MetaPathConfig::default(),
    );
    let config = ServiceConfig {
        seed_sessions: true,
        ..ServiceConfig::default()
    };
    Engine::new(snap, config)
}

fn newest(e: &Engine, user: u32) -> i64 {
    e.session_events(user).unwrap().last().map_or(1_700_000_000, |ev| ev.timestamp)
}

fn event(user: u32, item: u32, timestamp: i64) -> EventRequest {
    EventRequest { user, item, action: 2, timestamp }
}

#[test]
fn events_extend_and_evict_the_session_buffer() {
    let f = tiny(1);
    let e = engine(&f, false);
    let before = e.session_events(0).unwrap().len();
    let t = newest(&e, 0);
    e.record_event(event(0, 3, t + 10)).unwrap();
    let after = e.session_events(0).unwrap();
    assert_eq!(after.len(), (before + 1).min(MAX_HISTORY));
    assert_eq!(after.last().unwrap().timestamp, t + 10);
    // duplicates are ignored
    e.record_event(event(0, 3, t + 10)).unwrap();
    assert_eq!(e.session_events(0).unwrap().len(), after.len());

    for k in 0..MAX_HISTORY as i64 + 1 {
        e.record_event(event(0, 4, t + 100 + k)).unwrap();
    }
    let full = e.session_events(0).unwrap();
    assert_eq!(full.len(), MAX_HISTORY);
    assert_eq!(full[0].timestamp, t + 101);
    assert!(full.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
}

#[test]
fn sessions_start_empty_unless_seeded() {
    let f = tiny(1);
    let snap = Snapshot::new(
        Arc::new(f.syn.corpus.clone()),
        Arc::new(f.indexes.clone()),
        None,
        MetaPathConfig::default(),
    );
    let e = Engine::new(snap, ServiceConfig::default());
    assert!(e.session_events(0).unwrap().is_empty());
    e.record_event(event(0, 3, 1_700_000_000)).unwrap();
    assert_eq!(e.session_events(0).unwrap().len(), 1);
    let seeded = engine(&f, false);
    let n = f.syn.corpus.user_events(qsuggest_core::corpus::UserId(0)).count();
    assert_eq!(seeded.session_events(0).unwrap().len(), n.min(MAX_HISTORY));
}

#[test]
fn malformed_events_are_rejected() {
    let f = tiny(2);
    let e = engine(&f, false);
    let bad = |r: EventRequest| e.record_event(r).unwrap_err().status();
    assert_eq!(bad(EventRequest { action: 9, ..event(0, 1, 5) }), 400);
    assert_eq!(bad(event(0, 1, 0)), 400);
    assert_eq!(bad(event(1_000_000, 1, 5)), 404);
    assert_eq!(bad(event(0, 1_000_000, 5)), 404);
}

#[test]
fn suggest_needs_a_model() {
    let f = tiny(3);
    let e = engine(&f, false);
    assert_eq!(e.suggest(0, None, false).unwrap_err(), ServiceError::ModelNotLoaded);
    assert_eq!(ServiceError::ModelNotLoaded.status(), 409);
}

#[test]
fn suggest_is_deterministic_and_ordered() {
    let f = tiny(4);
    let e = engine(&f, true);
    let a = e.suggest(5, None, false).unwrap();
    let b = e.suggest(5, None, false).unwrap();
    assert_eq!(a, b);
    assert!(!a.fallback);
    assert!(a.queries.len() <= 4 && !a.queries.is_empty());
    assert!(a.queries.windows(2).all(|w| w[0].score >= w[1].score));
    let t = newest(&e, 5);
    assert_eq!(a.decision_time, t + 1);
    assert_eq!(e.suggest(5, Some(t), false).unwrap_err().status(), 400);
}

#[test]
fn empty_candidates_fall_back_to_popular_queries() {
    let f = tiny(5);
    let e = engine(&f, true);
    let n = f.syn.corpus.n_items();
    let empty = |p| MetaPathIndex { path_type: p, index_k: 10, rows: vec![Vec::new(); n] };
    let snap = e.snapshot();
    e.swap_snapshot(Snapshot::new(
        snap.corpus.clone(),
        Arc::new(IndexSet {
            u2i2q: empty(PathType::U2I2Q),
            u2i2s2q: empty(PathType::U2I2S2Q),
            u2i2c2q: empty(PathType::U2I2C2Q),
        }),
        snap.model.clone(),
        snap.meta,
    ));
    let r = e.suggest(0, None, false).unwrap();
    assert!(r.fallback);
    assert_eq!(r.queries.len(), 4);
    assert!(r.queries.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn feedback_logs_one_instance_per_shown_query() {
    let f = tiny(6);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("feedback.jsonl");
    let e = engine(&f, true).with_instance_log(&log).unwrap();

    let r = e.suggest(2, None, false).unwrap();
    let clicked = r.queries[1].query_id;
    let fb = FeedbackRequest {
        user: 2,
        suggestion_id: r.suggestion_id.clone(),
        clicked_query: Some(clicked),
        ignored: false,
    };
    let got = e.feedback(&fb).unwrap();
    assert_eq!(got.len(), r.queries.len());
    assert_eq!(got.iter().filter(|i| i.label == 1).count(), 1);
    assert_eq!(got.iter().find(|i| i.label == 1).unwrap().query.0, clicked);
    // consumed
    assert_eq!(e.feedback(&fb).unwrap_err().status(), 404);

    let r = e.suggest(2, None, false).unwrap();
    let ignored = FeedbackRequest {
        user: 2,
        suggestion_id: r.suggestion_id.clone(),
        clicked_query: None,
        ignored: true,
    };
    let got = e.feedback(&ignored).unwrap();
    assert!(got.iter().all(|i| i.label == 0));

    let logged = e.logged_instances();
    assert_eq!(logged.len(), 2 * r.queries.len());
    let reread = read_instances(&f.syn.corpus, &log).unwrap();
    assert_eq!(reread, logged);
}

#[test]
fn invalid_feedback_is_rejected() {
    let f = tiny(7);
    let e = engine(&f, true);
    let r = e.suggest(3, None, false).unwrap();
    let req = |clicked_query, ignored| FeedbackRequest {
        user: 3,
        suggestion_id: r.suggestion_id.clone(),
        clicked_query,
        ignored,
    };
    assert_eq!(e.feedback(&req(None, false)).unwrap_err().status(), 400);
    assert_eq!(e.feedback(&req(Some(r.queries[0].query_id), true)).unwrap_err().status(), 400);
    let unshown = (0..).find(|q| r.queries.iter().all(|s| s.query_id != *q)).unwrap();
    assert_eq!(e.feedback(&req(Some(unshown), false)).unwrap_err().status(), 400);
    let stale = FeedbackRequest { suggestion_id: "0000".into(), ..req(None, true) };
    assert_eq!(e.feedback(&stale).unwrap_err().status(), 404);
    // a newer suggestion supersedes the old id
    let t = newest(&e, 3);
    e.record_event(event(3, 7, t + 5)).unwrap();
    e.suggest(3, None, false).unwrap();
    assert_eq!(e.feedback(&req(None, true)).unwrap_err().status(), 404);
}

#[test]
fn recommend_validates_and_limits() {
    let f = tiny(8);
    let e = engine(&f, false);
    assert_eq!(e.recommend(0, 0, 0).unwrap_err().status(), 400);
    assert_eq!(e.recommend(0, 1_000_000, 5).unwrap_err().status(), 404);
    let items = e.recommend(0, 0, 5).unwrap();
    assert!(!items.is_empty() && items.len() <= 5);
    assert!(items.windows(2).all(|w| w[0].score >= w[1].score));
}
