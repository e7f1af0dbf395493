mod common;

use common::{small_model, tiny, trained};
use qsuggest_core::metapath::CandidateSet;
use qsuggest_core::nn::decay_interval;
use qsuggest_core::ranker::{
    batch_gradients, batch_gradients_sequential, train, RankerError, RankingModel, TrainConfig, Variant,
};

#[test]
fn cached_user_state_matches_direct_scoring() {
    let f = tiny(1);
    let m = trained(&f, 1, 1);
    for p in f.prepared.iter().take(40) {
        let inp = &p.input;
        let state = m
            .user_state(&f.syn.corpus, inp.user, &inp.history, inp.decision_time)
            .unwrap();
        let cands = CandidateSet {
            user: inp.user.unwrap(),
            entries: vec![(inp.query, inp.features)],
        };
        let ranked = m
            .rank_candidates(&f.syn.corpus, &state, inp.context, &cands, 4)
            .unwrap();
        let direct = m.score(&f.syn.corpus, inp).unwrap();
        assert_eq!(ranked.len(), 1);
        assert!((ranked[0].1 - direct).abs() < 1e-12, "{} vs {direct}", ranked[0].1);
    }
}

#[test]
fn rank_candidates_orders_and_truncates() {
    let f = tiny(2);
    let m = trained(&f, 2, 1);
    let p = f.prepared.iter().find(|p| p.input.history.len() > 3).unwrap();
    let inp = &p.input;
    let state = m.user_state(&f.syn.corpus, inp.user, &inp.history, inp.decision_time).unwrap();
    let mut entries: Vec<_> = f.prepared.iter().take(30).map(|q| (q.input.query, q.input.features)).collect();
    entries.sort_by_key(|e| e.0);
    entries.dedup_by_key(|e| e.0);
    let cands = CandidateSet { user: inp.user.unwrap(), entries };
    let top = m.rank_candidates(&f.syn.corpus, &state, inp.context, &cands, 4).unwrap();
    assert_eq!(top.len(), 4);
    assert!(top.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    let all = m.rank_candidates(&f.syn.corpus, &state, inp.context, &cands, usize::MAX).unwrap();
    assert_eq!(&all[..4], &top[..]);
}

#[test]
fn decay_scales_modulated_state_norms() {
    let f = tiny(3);
    let mut m = small_model(&f, 3);
    let eps = m.attention().epsilon;
    m.params_mut().get_mut(eps).data_mut()[0] = -0.7;
    let mut flat = m.clone();
    flat.disable_modulation();
    let p = f.prepared.iter().find(|p| p.input.history.len() >= 5).unwrap();
    let inp = &p.input;
    let with = m.encode_behavior(&f.syn.corpus, &inp.history, inp.decision_time, inp.query).unwrap();
    let without = flat.encode_behavior(&f.syn.corpus, &inp.history, inp.decision_time, inp.query).unwrap();
    for (k, ev) in inp.history.iter().enumerate() {
        let dt = decay_interval((inp.decision_time - ev.timestamp) as f64);
        let want = without.h_prime_norms[k] * dt.powf(-0.7);
        assert!((with.h_prime_norms[k] - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn attention_weights_form_a_distribution() {
    let f = tiny(4);
    let m = trained(&f, 4, 1);
    for p in f.prepared.iter().filter(|p| !p.input.history.is_empty()).take(20) {
        let inp = &p.input;
        let tr = m.encode_behavior(&f.syn.corpus, &inp.history, inp.decision_time, inp.query).unwrap();
        assert_eq!(tr.weights.len(), inp.history.len());
        assert!(tr.weights.iter().all(|&w| w > 0.0));
        assert!((tr.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let none = m.with_variant(Variant::NoAttention);
        let tr = none.encode_behavior(&f.syn.corpus, &inp.history, inp.decision_time, inp.query).unwrap();
        assert!(tr.weights.is_empty());
    }
}

#[test]
fn scores_are_deterministic_probabilities() {
    let f = tiny(5);
    let m = trained(&f, 5, 1);
    let again = trained(&f, 5, 1);
    for p in f.prepared.iter().take(50) {
        let s = m.score(&f.syn.corpus, &p.input).unwrap();
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(s, again.score(&f.syn.corpus, &p.input).unwrap());
    }
}

#[test]
fn empty_history_and_unseen_user_are_scored() {
    let f = tiny(6);
    let mut m = small_model(&f, 6);
    let mut inp = f.prepared[0].input.clone();
    inp.history.clear();
    let before = m.score(&f.syn.corpus, &inp).unwrap();
    assert!(before > 0.0 && before < 1.0);
    // an unseen user's own embedding row is never read
    let user = inp.user.unwrap();
    let table = m.embedding_tables()[0];
    let dim = m.params().get(table).cols();
    let row = user.index() * dim;
    m.params_mut().get_mut(table).data_mut()[row..row + dim].fill(3.0);
    assert_eq!(m.score(&f.syn.corpus, &inp).unwrap(), before);
    m.mark_seen(user);
    assert_ne!(m.score(&f.syn.corpus, &inp).unwrap(), before);
}

#[test]
fn history_at_or_after_decision_is_rejected() {
    let f = tiny(7);
    let m = small_model(&f, 7);
    let p = f.prepared.iter().find(|p| !p.input.history.is_empty()).unwrap();
    let mut inp = p.input.clone();
    inp.decision_time = inp.history.last().unwrap().timestamp;
    assert!(matches!(
        m.score(&f.syn.corpus, &inp),
        Err(RankerError::TimestampAfterDecision { .. })
    ));
}

#[test]
fn training_lowers_loss_and_respects_projection() {
    let f = tiny(8);
    let mut m = small_model(&f, 8);
    let tc = TrainConfig { epochs: 3, lr: 3e-3, seed: 8, ..TrainConfig::default() };
    let rep = train(&mut m, &f.syn.corpus, &f.prepared, &tc).unwrap();
    assert!(rep.final_loss() < rep.initial_loss);
    assert_eq!(rep.epsilon_trace.len(), rep.steps);
    assert!(rep.epsilon_trace.iter().all(|&e| e <= 0.0));
}

#[test]
fn invalid_training_config_is_rejected() {
    let f = tiny(9);
    let mut m = small_model(&f, 9);
    let tc = TrainConfig { user_dropout: 1.5, ..TrainConfig::default() };
    assert!(matches!(train(&mut m, &f.syn.corpus, &f.prepared, &tc), Err(RankerError::InvalidConfig(_))));
    let tc = TrainConfig { batch_size: 0, ..TrainConfig::default() };
    assert!(matches!(train(&mut m, &f.syn.corpus, &f.prepared, &tc), Err(RankerError::InvalidConfig(_))));
    assert!(matches!(train(&mut m, &f.syn.corpus, &[], &TrainConfig::default()), Err(RankerError::EmptyTrainingSet)));
}

#[test]
fn parallel_gradients_equal_sequential() {
    let f = tiny(10);
    let m = trained(&f, 10, 1);
    let batch = &f.prepared[..32];
    let (la, ga) = batch_gradients(&m, &f.syn.corpus, batch).unwrap();
    let (lb, gb) = batch_gradients_sequential(&m, &f.syn.corpus, batch).unwrap();
    assert_eq!(la, lb);
    for id in m.params().ids() {
        assert_eq!(ga.get(id), gb.get(id));
    }
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let f = tiny(11);
    let m = trained(&f, 11, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    m.save(&path).unwrap();
    let back = RankingModel::load(&path).unwrap();
    assert_eq!(back.epsilon(), m.epsilon());
    for p in f.prepared.iter().take(30) {
        assert_eq!(back.score(&f.syn.corpus, &p.input).unwrap(), m.score(&f.syn.corpus, &p.input).unwrap());
    }
}

#[test]
fn disabled_modulation_reduces_to_plain_attention() {
    let f = tiny(12);
    let mut m = trained(&f, 12, 1);
    m.disable_modulation();
    let plain = m.with_variant(Variant::PlainAttention);
    for p in f.prepared.iter().take(60) {
        let a = m.score(&f.syn.corpus, &p.input).unwrap();
        let b = plain.score(&f.syn.corpus, &p.input).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }
}
