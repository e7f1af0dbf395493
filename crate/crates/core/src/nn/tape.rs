//! Reverse-mode tape over vector-valued nodes.
//!
//! A [`Tape`] borrows a frozen [`ParamStore`] for one forward pass. Every op
//! appends a node holding its value; [`Tape::backward`] walks the nodes in
//! reverse creation order and returns per-parameter [`Gradients`]. Weight
//! matrices never become nodes: [`Tape::affine`] reads them straight from the
//! store.

use super::{Gradients, NnError, ParamId, ParamStore, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    EmbedRow { table: ParamId, row: usize },
    Affine { terms: Vec<(ParamId, NodeId)>, bias: Option<ParamId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Mean(Vec<NodeId>),
    PowScale { x: NodeId, eps: NodeId, dt: f64 },
    Softmax(NodeId),
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    SoftmaxXent { logits: NodeId, label: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::EmbedRow { .. } => "embed",
            Op::Affine { .. } => "affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Concat(_) => "concat",
            Op::Mean(_) => "mean",
            Op::PowScale { .. } => "pow_scale",
            Op::Softmax(_) => "softmax",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(expected: usize, got: usize) -> NnError {
    NnError::ShapeMismatch {
        expected: vec![expected],
        got: vec![got],
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(shape_err(a.len(), b.len()))
    }
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Result<NodeId> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite(op.name().into()));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Vec<f64>) -> Result<NodeId> {
        self.push(Op::Input, value)
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.push(Op::Input, vec![0.0; len]).expect("zeros are finite")
    }

    /// The whole parameter tensor as a flat vector node.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        let v = self.params.get(id).data().to_vec();
        self.push(Op::Param(id), v)
    }

    /// Row `row` of a `[vocab, dim]` embedding table.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Result<NodeId> {
        let t = self.params.get(table);
        if row >= t.rows() {
            return Err(NnError::IdOutOfRange {
                id: row,
                size: t.rows(),
            });
        }
        let v = t.row(row).to_vec();
        self.push(Op::EmbedRow { table, row }, v)
    }

    /// `Σ_j W_j x_j + b` with each `W_j` shaped `[out, in_j]`.
    pub fn affine(&mut self, terms: &[(ParamId, NodeId)], bias: Option<ParamId>) -> Result<NodeId> {
        let out_dim = match (terms.first(), bias) {
            (Some(&(w, _)), _) => self.params.get(w).rows(),
            (None, Some(b)) => self.params.get(b).len(),
            (None, None) => return Err(shape_err(1, 0)),
        };
        let mut out = match bias {
            Some(b) => {
                let b = self.params.get(b).data();
                if b.len() != out_dim {
                    return Err(shape_err(out_dim, b.len()));
                }
                b.to_vec()
            }
            None => vec![0.0; out_dim],
        };
        for &(w, x) in terms {
            let w = self.params.get(w);
            let x = &self.nodes[x.0].value;
            if w.rows() != out_dim || w.cols() != x.len() {
                return Err(NnError::ShapeMismatch {
                    expected: vec![out_dim, x.len()],
                    got: w.shape().to_vec(),
                });
            }
            let cols = x.len();
            for (o, acc) in out.iter_mut().enumerate() {
                let row = &w.data()[o * cols..(o + 1) * cols];
                *acc += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.push(
            Op::Affine {
                terms: terms.to_vec(),
                bias,
            },
            out,
        )
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_len(va, vb)?;
        let v = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let v = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push(Op::Concat(parts.to_vec()), v)
    }

    /// Elementwise mean; an empty list yields zeros of width `dim`.
    pub fn mean(&mut self, parts: &[NodeId], dim: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Ok(self.zeros(dim));
        }
        let mut v = vec![0.0; dim];
        for p in parts {
            let x = &self.nodes[p.0].value;
            same_len(&v, x)?;
            for (a, b) in v.iter_mut().zip(x) {
                *a += b;
            }
        }
        let n = parts.len() as f64;
        v.iter_mut().for_each(|a| *a /= n);
        self.push(Op::Mean(parts.to_vec()), v)
    }

    /// `x · dt^eps`, with `eps` a scalar node and `dt > 0` a constant.
    pub fn pow_scale(&mut self, x: NodeId, eps: NodeId, dt: f64) -> Result<NodeId> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NnError::InvalidInterval(dt));
        }
        let e = &self.nodes[eps.0].value;
        if e.len() != 1 {
            return Err(shape_err(1, e.len()));
        }
        let m = dt.powf(e[0]);
        let v = self.nodes[x.0].value.iter().map(|a| a * m).collect();
        self.push(Op::PowScale { x, eps, dt }, v)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let mut v = self.nodes[a.0].value.clone();
        if v.is_empty() {
            return Err(NnError::EmptySequence);
        }
        softmax_in_place(&mut v);
        self.push(Op::Softmax(a), v)
    }

    /// `Σ_k weights[k] · items[k]`.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        let w = &self.nodes[weights.0].value;
        if w.len() != items.len() || items.is_empty() {
            return Err(shape_err(items.len(), w.len()));
        }
        let dim = self.nodes[items[0].0].value.len();
        let mut v = vec![0.0; dim];
        for (&wk, item) in w.iter().zip(items) {
            let x = &self.nodes[item.0].value;
            same_len(&v, x)?;
            for (a, b) in v.iter_mut().zip(x) {
                *a += wk * b;
            }
        }
        self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            v,
        )
    }

    /// Cross-entropy of `softmax(logits)` against class `label`; a scalar node.
    pub fn softmax_xent(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = &self.nodes[logits.0].value;
        if label >= z.len() {
            return Err(NnError::IdOutOfRange {
                id: label,
                size: z.len(),
            });
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[label];
        self.push(Op::SoftmaxXent { logits, label }, vec![loss])
    }

    /// Gradients of the scalar node `loss` with respect to every parameter it touches.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err(1, self.nodes[loss.0].value.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.params.len());

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId) -> &'a mut [f64] {
            let len = nodes[id.0].value.len();
            grads[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let d = out.dense_mut(*id, g.len());
                    d.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::EmbedRow { table, row } => out.push_row(*table, *row, g),
                Op::Affine { terms, bias } => {
                    if let Some(b) = bias {
                        let d = out.dense_mut(*b, g.len());
                        d.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    for &(w, x) in terms {
                        let wt = self.params.get(w);
                        let xv = &self.nodes[x.0].value;
                        let cols = xv.len();
                        let dw = out.dense_mut(w, wt.len());
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                let row = &mut dw[o * cols..(o + 1) * cols];
                                row.iter_mut().zip(xv).for_each(|(a, b)| *a += go * b);
                            }
                        }
                        let dx = acc(&mut grads, &self.nodes, x);
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                let row = &wt.data()[o * cols..(o + 1) * cols];
                                dx.iter_mut().zip(row).for_each(|(a, b)| *a += go * b);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &self.nodes, *a).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    acc(&mut grads, &self.nodes, *b).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &self.nodes, *a).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    acc(&mut grads, &self.nodes, *b).iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    acc(&mut grads, &self.nodes, *a).iter_mut().zip(&ga).for_each(|(x, y)| *x += y);
                    acc(&mut grads, &self.nodes, *b).iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = acc(&mut grads, &self.nodes, *a);
                    for ((d, g), y) in d.iter_mut().zip(&g).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = acc(&mut grads, &self.nodes, *a);
                    for ((d, g), y) in d.iter_mut().zip(&g).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let d = acc(&mut grads, &self.nodes, *p);
                        let n = d.len();
                        d.iter_mut().zip(&g[off..off + n]).for_each(|(x, y)| *x += y);
                        off += n;
                    }
                }
                Op::Mean(parts) => {
                    let n = parts.len() as f64;
                    for p in parts {
                        acc(&mut grads, &self.nodes, *p)
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(x, y)| *x += y / n);
                    }
                }
                Op::PowScale { x, eps, dt } => {
                    let e = self.nodes[eps.0].value[0];
                    let m = dt.powf(e);
                    let ln_dt = dt.ln();
                    let de: f64 = g.iter().zip(&node.value).map(|(g, y)| g * y * ln_dt).sum();
                    acc(&mut grads, &self.nodes, *x)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b * m);
                    acc(&mut grads, &self.nodes, *eps)[0] += de;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let d = acc(&mut grads, &self.nodes, *a);
                    for ((d, g), y) in d.iter_mut().zip(&g).zip(y) {
                        *d += y * (g - dot);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.nodes[weights.0].value.clone();
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| self.nodes[it.0].value.iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(&mut grads, &self.nodes, *weights)
                        .iter_mut()
                        .zip(&gw)
                        .for_each(|(a, b)| *a += b);
                    for (it, wk) in items.iter().zip(&w) {
                        acc(&mut grads, &self.nodes, *it)
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(a, b)| *a += wk * b);
                    }
                }
                Op::SoftmaxXent { logits, label } => {
                    let mut p = self.nodes[logits.0].value.clone();
                    softmax_in_place(&mut p);
                    p[*label] -= 1.0;
                    acc(&mut grads, &self.nodes, *logits)
                        .iter_mut()
                        .zip(&p)
                        .for_each(|(a, b)| *a += g[0] * b);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{GradBuffer, Tensor};

    #[test]
    fn softmax_sums_to_one_and_rejects_empty() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.input(vec![1000.0, -1000.0, 3.0]).unwrap();
        let s = t.softmax(x).unwrap();
        let sum: f64 = t.value(s).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(t.value(s).iter().all(|&p| p >= 0.0));
        let e = t.input(vec![]).unwrap();
        assert!(matches!(t.softmax(e), Err(NnError::EmptySequence)));
    }

    #[test]
    fn non_finite_input_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        assert!(matches!(t.input(vec![f64::NAN]), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn affine_gradient_by_hand() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = store.add("b", Tensor::vector(vec![0.5, -0.5]).unwrap());
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, -1.0]).unwrap();
        let y = t.affine(&[(w, x)], Some(b)).unwrap();
        assert_eq!(t.value(y), &[-0.5, -1.5]);
        let loss = t.softmax_xent(y, 0).unwrap();
        let g = t.backward(loss).unwrap();
        let mut buf = GradBuffer::zeros(&store);
        buf.accumulate(&g, 1.0);
        // dL/dy = softmax(y) - e0 = [p0 - 1, p1]
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        let gy = [p0 - 1.0, 1.0 - p0];
        assert!((buf.get(b)[0] - gy[0]).abs() < 1e-12);
        assert!((buf.get(w)[1] - -gy[0]).abs() < 1e-12);
        assert!((buf.get(w)[2] - gy[1]).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(vec![2, 3]));
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.affine(&[(w, x)], None), Err(NnError::ShapeMismatch { .. })));
        let y = t.input(vec![1.0]).unwrap();
        assert!(t.add(x, y).is_err());
    }
}
