use ndarray::Array2;

use crate::nn::{Gradients, ParamStore, Real};

/// Adam with bias-corrected moment estimates. Frozen parameters are never
/// touched.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Array2<F>>>,
    v: Vec<Option<Array2<F>>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; params],
            v: vec![None; params],
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = F::of(lr * c2.sqrt() / c1);
        let eps = F::of(self.eps * c2.sqrt());
        for (id, g) in grads.iter() {
            if store.is_frozen(id) {
                continue;
            }
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
            let one = F::one();
            ndarray::Zip::from(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                });
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= step_size * m / (v.sqrt() + eps);
            });
        }
    }
}
