use super::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Projected onto `x <= 0` after every optimizer step.
    NonPositive,
}

/// Named parameter tensors, exclusively owned by the training loop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
    constraints: Vec<Constraint>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.add_constrained(name, tensor, Constraint::None)
    }

    pub fn add_constrained(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        constraint: Constraint,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        self.frozen.push(false);
        self.constraints.push(constraint);
        ParamId(self.tensors.len() - 1)
    }

    /// `uniform(-scale, scale)` weights.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = rng.random_range(-scale..scale);
        }
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn constraint(&self, id: ParamId) -> Constraint {
        self.constraints[id.0]
    }

    /// Applies every parameter constraint in place.
    pub fn project(&mut self) {
        for (t, c) in self.tensors.iter_mut().zip(&self.constraints) {
            if *c == Constraint::NonPositive {
                for x in t.data_mut() {
                    if *x > 0.0 {
                        *x = 0.0;
                    }
                }
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Per-instance gradients: dense buffers for ordinary parameters and sparse
/// rows for embedding lookups.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    dense: Vec<Option<Vec<f64>>>,
    rows: Vec<(ParamId, usize, Vec<f64>)>,
}

impl Gradients {
    pub fn new(n_params: usize) -> Self {
        Gradients {
            dense: vec![None; n_params],
            rows: Vec::new(),
        }
    }

    pub(crate) fn dense_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.dense[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub(crate) fn push_row(&mut self, id: ParamId, row: usize, grad: Vec<f64>) {
        self.rows.push((id, row, grad));
    }
}

/// Dense gradient accumulator shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    data: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros(store: &ParamStore) -> Self {
        GradBuffer {
            data: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn clear(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `scale * grads`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (acc, g) in self.data.iter_mut().zip(&grads.dense) {
            if let Some(g) = g {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += scale * x;
                }
            }
        }
        for (id, row, g) in &grads.rows {
            let acc = &mut self.data[id.0];
            let off = row * g.len();
            for (a, x) in acc[off..off + g.len()].iter_mut().zip(g) {
                *a += scale * x;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}
