use crate::tensor::{Gradients, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    /// First moments, indexed like the parameter store.
    pub m: Vec<Tensor>,
    /// Second moments.
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of every trainable parameter. Missing gradients count as zero.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (id, param) in store.iter_mut() {
            if !param.trainable {
                continue;
            }
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let values = param.value.data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((p, m), v), g) in values.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
                    }
                }
                None => {
                    for ((p, m), v) in values.iter_mut().zip(m).zip(v) {
                        *m *= BETA1;
                        *v *= BETA2;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn quadratic_store(x0: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(x0)).unwrap();
        store
    }

    /// Gradients of `Σ c_i (x_i - t_i)²` via the tape.
    fn quadratic_grads(store: &ParamStore, c: &[f64], t: &[f64]) -> (Gradients, Vec<f64>) {
        let mut tape = Tape::new();
        let x = tape.param(store, store.id("x").unwrap());
        let target = tape.constant(Tensor::vector(t.to_vec()));
        let d = tape.sub(x, target).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let cv = tape.constant(Tensor::vector(c.to_vec()));
        let weighted = tape.mul(sq, cv).unwrap();
        let loss = tape.sum(weighted).unwrap();
        let g = tape.gradients(loss).unwrap();
        let gx = g.get(store.id("x").unwrap()).unwrap().data().to_vec();
        (g, gx)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = quadratic_store(vec![1.0, -2.0]);
        let mut adam = Adam::new(&store);
        let zero = quadratic_grads(&store, &[1.0, 1.0], &[1.0, -2.0]).0;
        adam.update(&mut store, &zero, 1e-3);
        assert_eq!(store.value(store.id("x").unwrap()).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = quadratic_store(vec![1.0, -2.0, 0.5]);
        let mut adam = Adam::new(&store);
        let (g, gx) = quadratic_grads(&store, &[1.0, 3.0, 100.0], &[0.0, 0.0, 0.0]);
        adam.update(&mut store, &g, 1e-3);
        let after = store.value(store.id("x").unwrap()).data();
        for ((a, b), g) in after.iter().zip([1.0, -2.0, 0.5]).zip(gx) {
            assert!(((b - a) - 1e-3 * g.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_on_a_convex_quadratic() {
        let c = [1.0, 2.0, 0.5];
        let t = [0.3, -0.7, 1.2];
        let mut store = quadratic_store(vec![0.4, -0.6, 1.3]);
        let mut adam = Adam::new(&store);
        let mut grad_norm = f64::INFINITY;
        for _ in 0..200 {
            let (g, gx) = quadratic_grads(&store, &c, &t);
            grad_norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
            if grad_norm < 1e-6 {
                break;
            }
            adam.update(&mut store, &g, 0.01);
        }
        assert!(grad_norm < 1e-6, "{grad_norm}");
        for (x, t) in store.value(store.id("x").unwrap()).data().iter().zip(t) {
            assert!((x - t).abs() < 1e-6);
        }
    }
}
