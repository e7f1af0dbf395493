use super::{GradBuffer, NnError, ParamStore, Result};

pub trait Optimizer {
    /// Applies one update from `grads`, then projects constrained parameters.
    fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> Result<()>;
}

fn check_finite(store: &ParamStore, grads: &GradBuffer) -> Result<()> {
    for id in store.ids() {
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> Result<()> {
        check_finite(store, grads)?;
        for id in store.ids().collect::<Vec<_>>() {
            if store.is_frozen(id) {
                continue;
            }
            let g = grads.get(id);
            for (w, g) in store.get_mut(id).data_mut().iter_mut().zip(g) {
                *w -= self.lr * g;
            }
        }
        store.project();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> Result<()> {
        check_finite(store, grads)?;
        if self.m.is_empty() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            if store.is_frozen(id) {
                continue;
            }
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let w = store.get_mut(id).data_mut();
            for j in 0..w.len() {
                if g[j] == 0.0 && m[j] == 0.0 {
                    continue;
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        store.project();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Constraint, Tensor};
    use proptest::prelude::*;

    fn store_with_eps(eps: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, -2.0]).unwrap());
        s.add_constrained("epsilon", Tensor::vector(vec![eps]).unwrap(), Constraint::NonPositive);
        s
    }

    #[test]
    fn positive_epsilon_reset_to_zero() {
        let mut s = store_with_eps(-0.1);
        let eps = s.id("epsilon").unwrap();
        let mut g = GradBuffer::zeros(&s);
        g.get_mut(eps)[0] = -0.4;
        Sgd { lr: 1.0 }.step(&mut s, &g).unwrap();
        // -0.1 + 0.4 = +0.3 before projection
        assert_eq!(s.get(eps).data()[0], 0.0);
    }

    #[test]
    fn feasible_epsilon_untouched() {
        let mut s = store_with_eps(0.0);
        let eps = s.id("epsilon").unwrap();
        let mut g = GradBuffer::zeros(&s);
        g.get_mut(eps)[0] = 0.2;
        Sgd { lr: 1.0 }.step(&mut s, &g).unwrap();
        assert_eq!(s.get(eps).data()[0], -0.2);
    }

    #[test]
    fn zero_gradients_fixed_point() {
        let mut s = store_with_eps(-0.3);
        let before = s.clone();
        Sgd { lr: 0.5 }.step(&mut s, &GradBuffer::zeros(&before)).unwrap();
        assert_eq!(s, before);
        Adam::new(0.1).step(&mut s, &GradBuffer::zeros(&before)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn frozen_params_skipped_and_nan_rejected() {
        let mut s = store_with_eps(-0.3);
        let w = s.id("w").unwrap();
        s.freeze(w);
        let mut g = GradBuffer::zeros(&s);
        g.get_mut(w)[0] = 5.0;
        Adam::new(0.1).step(&mut s, &g).unwrap();
        assert_eq!(s.get(w).data(), &[1.0, -2.0]);
        g.get_mut(w)[1] = f64::NAN;
        assert!(matches!(
            Sgd { lr: 0.1 }.step(&mut s, &g),
            Err(NnError::NonFiniteGradient(name)) if name == "w"
        ));
    }

    proptest! {
        #[test]
        fn epsilon_never_positive(grads in prop::collection::vec(-50.0f64..50.0, 1..200), lr in 0.001f64..2.0) {
            let mut s = store_with_eps(0.0);
            let eps = s.id("epsilon").unwrap();
            let mut adam = Adam::new(lr);
            let mut sgd = Sgd { lr };
            for (k, g) in grads.iter().enumerate() {
                let mut buf = GradBuffer::zeros(&s);
                buf.get_mut(eps)[0] = *g;
                if k % 2 == 0 {
                    adam.step(&mut s, &buf).unwrap();
                } else {
                    sgd.step(&mut s, &buf).unwrap();
                }
                prop_assert!(s.get(eps).data()[0] <= 0.0);
            }
        }
    }
}
