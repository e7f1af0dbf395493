use super::{Constraint, NnError, NodeId, ParamId, ParamStore, Result, Tape, Tensor};
use crate::corpus::ActionType;
use rand::Rng;

/// Half-width of the uniform weight initializer.
pub const INIT_SCALE: f64 = 0.08;
/// Seconds per model time unit.
pub const DT_UNIT_SECONDS: f64 = 3600.0;
pub const DT_FLOOR_HOURS: f64 = 1e-3;

/// Converts an interval in seconds into the model's decay unit.
pub fn decay_interval(dt_seconds: f64) -> f64 {
    (dt_seconds.max(1.0) / DT_UNIT_SECONDS).max(DT_FLOOR_HOURS)
}

fn weight(store: &mut ParamStore, name: String, shape: Vec<usize>, rng: &mut impl Rng) -> ParamId {
    store.add_uniform(name, shape, INIT_SCALE, rng)
}

fn bias(store: &mut ParamStore, name: String, n: usize) -> ParamId {
    store.add(name, Tensor::zeros(vec![n]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = |g: &str, cols: usize, store: &mut ParamStore| {
            weight(store, format!("{prefix}.{g}"), vec![hidden, cols], rng)
        };
        let w_z = w("w_z", input, store);
        let u_z = w("u_z", hidden, store);
        let w_r = w("w_r", input, store);
        let u_r = w("u_r", hidden, store);
        let w_h = w("w_h", input, store);
        let u_h = w("u_h", hidden, store);
        GruParams {
            w_z,
            u_z,
            b_z: bias(store, format!("{prefix}.b_z"), hidden),
            w_r,
            u_r,
            b_r: bias(store, format!("{prefix}.b_r"), hidden),
            w_h,
            u_h,
            b_h: bias(store, format!("{prefix}.b_h"), hidden),
            input,
            hidden,
        }
    }

    /// One GRU update:
    /// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
    /// `h̃ = tanh(W_h x + U_h (r⊙h) + b_h)`, `h' = (1−z)⊙h + z⊙h̃`.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h: NodeId) -> Result<NodeId> {
        let (xl, hl) = (tape.value(x).len(), tape.value(h).len());
        if xl != self.input || hl != self.hidden {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.input, self.hidden],
                got: vec![xl, hl],
            });
        }
        let z = tape.affine(&[(self.w_z, x), (self.u_z, h)], Some(self.b_z))?;
        let z = tape.sigmoid(z)?;
        let r = tape.affine(&[(self.w_r, x), (self.u_r, h)], Some(self.b_r))?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let c = tape.affine(&[(self.w_h, x), (self.u_h, rh)], Some(self.b_h))?;
        let c = tape.tanh(c)?;
        let diff = tape.sub(c, h)?;
        let step = tape.mul(z, diff)?;
        tape.add(h, step)
    }
}

/// Forward and backward GRU state sequences, both indexed by position.
pub(crate) fn bigru_states(
    tape: &mut Tape,
    fwd: &GruParams,
    bwd: &GruParams,
    xs: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    if xs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let n = xs.len();
    let mut h = tape.zeros(fwd.hidden);
    let mut forward = Vec::with_capacity(n);
    for &x in xs {
        h = fwd.step(tape, x, h)?;
        forward.push(h);
    }
    let mut h = tape.zeros(bwd.hidden);
    let mut backward = vec![h; n];
    for k in (0..n).rev() {
        h = bwd.step(tape, xs[k], h)?;
        backward[k] = h;
    }
    Ok((forward, backward))
}

/// `h_k = [fwd after x_1..x_k ; bwd after x_n..x_k]` with zero initial states.
pub fn bigru_encode(tape: &mut Tape, fwd: &GruParams, bwd: &GruParams, xs: &[NodeId]) -> Result<Vec<NodeId>> {
    let (forward, backward) = bigru_states(tape, fwd, bwd, xs)?;
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    /// `[hidden_attn, state]` over `h'_k`.
    pub w_h: ParamId,
    /// `[hidden_attn, s0]` over the decoder state.
    pub w_s: ParamId,
    pub b1: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    /// One `[state, state]` matrix per action type.
    pub a: [ParamId; 4],
    /// Scalar decay exponent, constrained to `<= 0`.
    pub epsilon: ParamId,
    pub state: usize,
    pub s0: usize,
}

impl AttentionParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        state: usize,
        s0: usize,
        hidden_attn: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_h = weight(store, format!("{prefix}.w_h"), vec![hidden_attn, state], rng);
        let w_s = weight(store, format!("{prefix}.w_s"), vec![hidden_attn, s0], rng);
        let b1 = bias(store, format!("{prefix}.b1"), hidden_attn);
        let w_out = weight(store, format!("{prefix}.w_out"), vec![1, hidden_attn], rng);
        let b_out = bias(store, format!("{prefix}.b_out"), 1);
        let a = ActionType::ALL.map(|l| {
            store.add(format!("{prefix}.a{}", l.code()), Tensor::identity(state))
        });
        let epsilon = store.add_constrained(
            format!("{prefix}.epsilon"),
            Tensor::zeros(vec![1]),
            Constraint::NonPositive,
        );
        AttentionParams {
            w_h,
            w_s,
            b1,
            w_out,
            b_out,
            a,
            epsilon,
            state,
            s0,
        }
    }

    pub fn epsilon(&self, store: &ParamStore) -> f64 {
        store.get(self.epsilon).data()[0]
    }
}

/// `h' = (A_action · h) ⊗ dt^ε` with `dt` already in model units.
pub fn modulate(tape: &mut Tape, attn: &AttentionParams, h: NodeId, action: u8, dt: f64) -> Result<NodeId> {
    let action = ActionType::from_code(action).ok_or(NnError::InvalidAction(action))?;
    let tmp = tape.affine(&[(attn.a[action.slot()], h)], None)?;
    let eps = tape.param(attn.epsilon)?;
    tape.pow_scale(tmp, eps, dt)
}

/// Softmax attention over `h_primes` given decoder state `s0`; the glimpse is
/// the weighted sum of `h_base`. Returns `(weights, glimpse)`.
pub fn attend(
    tape: &mut Tape,
    attn: &AttentionParams,
    s0: NodeId,
    h_primes: &[NodeId],
    h_base: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    if h_primes.is_empty() {
        return Err(NnError::EmptySequence);
    }
    if h_primes.len() != h_base.len() {
        return Err(NnError::ShapeMismatch {
            expected: vec![h_primes.len()],
            got: vec![h_base.len()],
        });
    }
    let s = tape.affine(&[(attn.w_s, s0)], Some(attn.b1))?;
    let mut scores = Vec::with_capacity(h_primes.len());
    for &hp in h_primes {
        let u = tape.affine(&[(attn.w_h, hp)], None)?;
        let u = tape.add(u, s)?;
        let u = tape.tanh(u)?;
        scores.push(tape.affine(&[(attn.w_out, u)], Some(attn.b_out))?);
    }
    let scores = tape.concat(&scores)?;
    let weights = tape.softmax(scores)?;
    let glimpse = tape.weighted_sum(weights, h_base)?;
    Ok((weights, glimpse))
}

/// Two tanh fully-connected layers and a 2-way output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub input: usize,
}

impl DenseHead {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: [usize; 2],
        rng: &mut impl Rng,
    ) -> Self {
        DenseHead {
            w1: weight(store, format!("{prefix}.w1"), vec![hidden[0], input], rng),
            b1: bias(store, format!("{prefix}.b1"), hidden[0]),
            w2: weight(store, format!("{prefix}.w2"), vec![hidden[1], hidden[0]], rng),
            b2: bias(store, format!("{prefix}.b2"), hidden[1]),
            w_out: weight(store, format!("{prefix}.w_out"), vec![2, hidden[1]], rng),
            b_out: bias(store, format!("{prefix}.b_out"), 2),
            input,
        }
    }

    /// Output logits; class 1 is "click".
    pub fn logits(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let a = tape.affine(&[(self.w1, x)], Some(self.b1))?;
        let a = tape.tanh(a)?;
        let b = tape.affine(&[(self.w2, a)], Some(self.b2))?;
        let b = tape.tanh(b)?;
        tape.affine(&[(self.w_out, b)], Some(self.b_out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GradBuffer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    #[test]
    fn gru_zero_params_halves_state() {
        let mut store = ParamStore::new();
        let gru = GruParams::register(&mut store, "g", 3, 4, &mut rng());
        zero_all(&mut store);
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, -2.0, 0.5]).unwrap();
        let h = t.input(vec![0.4, -0.8, 2.0, 0.0]).unwrap();
        let out = gru.step(&mut t, x, h).unwrap();
        assert_eq!(t.value(out), &[0.2, -0.4, 1.0, 0.0]);
    }

    #[test]
    fn gru_scalar_by_hand() {
        let mut store = ParamStore::new();
        let gru = GruParams::register(&mut store, "g", 1, 1, &mut rng());
        let set = |s: &mut ParamStore, id: ParamId, v: f64| s.get_mut(id).data_mut()[0] = v;
        set(&mut store, gru.w_z, 0.5);
        set(&mut store, gru.u_z, -0.3);
        set(&mut store, gru.b_z, 0.1);
        set(&mut store, gru.w_r, 0.2);
        set(&mut store, gru.u_r, 0.7);
        set(&mut store, gru.b_r, -0.2);
        set(&mut store, gru.w_h, 1.1);
        set(&mut store, gru.u_h, 0.4);
        set(&mut store, gru.b_h, 0.05);
        let (x, h) = (0.8f64, -0.6f64);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.5 * x - 0.3 * h + 0.1);
        let r = sig(0.2 * x + 0.7 * h - 0.2);
        let c = (1.1 * x + 0.4 * (r * h) + 0.05).tanh();
        let want = (1.0 - z) * h + z * c;

        let mut t = Tape::new(&store);
        let xn = t.input(vec![x]).unwrap();
        let hn = t.input(vec![h]).unwrap();
        let out = gru.step(&mut t, xn, hn).unwrap();
        assert!((t.value(out)[0] - want).abs() < 1e-15);
    }

    #[test]
    fn gru_shape_mismatch() {
        let mut store = ParamStore::new();
        let gru = GruParams::register(&mut store, "g", 3, 2, &mut rng());
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, 2.0]).unwrap();
        let h = t.zeros(2);
        assert!(matches!(gru.step(&mut t, x, h), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn bigru_length_one_and_empty() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let f = GruParams::register(&mut store, "f", 2, 3, &mut r);
        let b = GruParams::register(&mut store, "b", 2, 3, &mut r);
        let mut t = Tape::new(&store);
        let x = t.input(vec![0.3, -0.7]).unwrap();
        let hs = bigru_encode(&mut t, &f, &b, &[x]).unwrap();
        let z = t.zeros(3);
        let hf = f.step(&mut t, x, z).unwrap();
        let hb = b.step(&mut t, x, z).unwrap();
        let want: Vec<f64> = t.value(hf).iter().chain(t.value(hb)).copied().collect();
        assert_eq!(t.value(hs[0]), want.as_slice());
        assert!(matches!(bigru_encode(&mut t, &f, &b, &[]), Err(NnError::EmptySequence)));
    }

    #[test]
    fn bigru_reversal_symmetry() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let f = GruParams::register(&mut store, "f", 2, 3, &mut r);
        let b = GruParams::register(&mut store, "b", 2, 3, &mut r);
        let mut t = Tape::new(&store);
        let xs: Vec<NodeId> = [[0.1, 0.2], [-0.5, 0.9], [1.5, -0.3], [0.0, 0.4]]
            .iter()
            .map(|v| t.input(v.to_vec()).unwrap())
            .collect();
        let mut rev = xs.clone();
        rev.reverse();
        let a = bigru_encode(&mut t, &f, &b, &xs).unwrap();
        let c = bigru_encode(&mut t, &b, &f, &rev).unwrap();
        let n = xs.len();
        for k in 0..n {
            let lhs = t.value(a[k]);
            let rhs = t.value(c[n - 1 - k]);
            assert_eq!(&lhs[..3], &rhs[3..]);
            assert_eq!(&lhs[3..], &rhs[..3]);
        }
    }

    fn attention(state: usize) -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new();
        let attn = AttentionParams::register(&mut store, "att", state, 2, state, &mut rng());
        (store, attn)
    }

    #[test]
    fn modulate_cases() {
        let (mut store, attn) = attention(2);
        store.get_mut(attn.a[1]).data_mut().copy_from_slice(&[2.0, 0.0, 1.0, -1.0]);
        {
            let mut t = Tape::new(&store);
            let h = t.input(vec![1.0, 3.0]).unwrap();
            // ε = 0: plain A·h
            let m = modulate(&mut t, &attn, h, 2, 17.0).unwrap();
            assert_eq!(t.value(m), &[2.0, -2.0]);
            assert!(matches!(modulate(&mut t, &attn, h, 0, 1.0), Err(NnError::InvalidAction(0))));
            assert!(matches!(modulate(&mut t, &attn, h, 5, 1.0), Err(NnError::InvalidAction(5))));
            assert!(matches!(modulate(&mut t, &attn, h, 1, 0.0), Err(NnError::InvalidInterval(_))));
        }
        store.get_mut(attn.epsilon).data_mut()[0] = -1.0;
        let mut t = Tape::new(&store);
        let h = t.input(vec![1.0, 3.0]).unwrap();
        let m = modulate(&mut t, &attn, h, 1, 4.0).unwrap();
        assert_eq!(t.value(m), &[0.25, 0.75]);
        let m = modulate(&mut t, &attn, h, 1, 1.0).unwrap();
        assert_eq!(t.value(m), &[1.0, 3.0]);
    }

    #[test]
    fn decay_interval_floors() {
        assert_eq!(decay_interval(7200.0), 2.0);
        assert_eq!(decay_interval(0.0), DT_FLOOR_HOURS);
        assert_eq!(decay_interval(-5.0), DT_FLOOR_HOURS);
        assert_eq!(decay_interval(36.0), 0.01);
    }

    #[test]
    fn attend_boundary_cases() {
        let (store, attn) = attention(3);
        let mut t = Tape::new(&store);
        let s0 = t.input(vec![0.2, -0.4]).unwrap();
        let h1 = t.input(vec![1.0, 2.0, 3.0]).unwrap();
        let (w, g) = attend(&mut t, &attn, s0, &[h1], &[h1]).unwrap();
        assert_eq!(t.value(w), &[1.0]);
        assert_eq!(t.value(g), &[1.0, 2.0, 3.0]);

        let base: Vec<NodeId> = (0..5).map(|k| t.input(vec![k as f64, 0.0, 1.0]).unwrap()).collect();
        let (w, _) = attend(&mut t, &attn, s0, &[h1; 5], &base).unwrap();
        assert!(t.value(w).iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!(matches!(attend(&mut t, &attn, s0, &[], &[]), Err(NnError::EmptySequence)));
    }

    #[test]
    fn head_zero_weights_is_uniform() {
        let mut store = ParamStore::new();
        let head = DenseHead::register(&mut store, "head", 4, [3, 3], &mut rng());
        store.get_mut(head.w_out).data_mut().iter_mut().for_each(|x| *x = 0.0);
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let z = head.logits(&mut t, x).unwrap();
        let p = t.softmax(z).unwrap();
        assert_eq!(t.value(p), &[0.5, 0.5]);
    }

    #[test]
    fn epsilon_gradient_matches_closed_form() {
        // L = sum(h') is not a valid loss node, so use xent on [h'_0, 0]
        let (mut store, attn) = attention(1);
        store.get_mut(attn.epsilon).data_mut()[0] = -0.5;
        let mut t = Tape::new(&store);
        let h = t.input(vec![2.0]).unwrap();
        let m = modulate(&mut t, &attn, h, 1, 9.0).unwrap();
        let zero = t.zeros(1);
        let logits = t.concat(&[m, zero]).unwrap();
        let loss = t.softmax_xent(logits, 1).unwrap();
        let g = t.backward(loss).unwrap();
        let mut buf = GradBuffer::zeros(&store);
        buf.accumulate(&g, 1.0);
        let v = 2.0 * 9f64.powf(-0.5);
        let p0 = v.exp() / (v.exp() + 1.0);
        let want = p0 * v * 9f64.ln();
        assert!((buf.get(attn.epsilon)[0] - want).abs() < 1e-12);
    }
}
