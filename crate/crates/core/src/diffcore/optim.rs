use serde::{Deserialize, Serialize};

use super::params::ParameterStore;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every non-frozen entry, then zero all gradients.
pub fn optimizer_step(store: &mut ParameterStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (_, e) in store.iter_mut() {
        if e.frozen {
            continue;
        }
        let grads = e.grad.data();
        let m = e.first_moment.data_mut();
        for (mi, &g) in m.iter_mut().zip(grads) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        }
        let v = e.second_moment.data_mut();
        for (vi, &g) in v.iter_mut().zip(grads) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (e.first_moment.data(), e.second_moment.data());
        for ((w, &mi), &vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
            *w -= cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        }
    }
    store.zero_grads();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Tape, Tensor};

    fn square_loss_grad(store: &mut ParameterStore) -> f64 {
        let mut tape = Tape::new();
        let w = tape.param(store, "w").unwrap();
        let sq = tape.matmul(w, w).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss, store).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(1.0), false);
        square_loss_grad(&mut store);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        optimizer_step(&mut store, &cfg);
        assert!(store.value("w").unwrap().item().abs() < 1.0);
        assert_eq!(store.grad("w").unwrap().item(), 0.0);
    }

    #[test]
    fn frozen_entry_unchanged() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(1.0), true);
        square_loss_grad(&mut store);
        optimizer_step(&mut store, &AdamConfig::default());
        assert_eq!(store.value("w").unwrap().item(), 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = sum_i c_i w_i^2, minimum 0 at the origin
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::row_vector(vec![1.5, -2.0, 0.7]), false);
        let coeffs = Tensor::row_vector(vec![1.0, 3.0, 0.5]).transpose();
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            let mut tape = Tape::new();
            let w = tape.param(&store, "w").unwrap();
            let c = tape.constant(coeffs.clone());
            let wt = tape.transpose(w).unwrap();
            let outer = tape.matmul(wt, w).unwrap();
            let d = tape.diag(outer).unwrap();
            let weighted = tape.matmul(d, c).unwrap();
            let l = tape.sum_all(weighted).unwrap();
            loss = tape.value(l).item();
            tape.backward(l, &mut store).unwrap();
            optimizer_step(&mut store, &cfg);
        }
        let w = store.value("w").unwrap();
        let final_loss: f64 = w.data().iter().zip([1.0, 3.0, 0.5]).map(|(x, c)| c * x * x).sum();
        assert!(final_loss < 1e-6, "loss {final_loss} (last tape {loss})");
    }
}
