use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        let first: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears the gradients.
    ///
    /// Every parameter must carry a gradient; a missing one names the
    /// parameter in the error and leaves the store untouched.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::Contract(format!(
                "parameter {:?} has no gradient",
                p.name
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - libm::pow(beta1, t as f64);
        let correction2 = 1.0 - libm::pow(beta2, t as f64);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let param = store.get_mut(id);
            let grad = param.grad.take().expect("checked above");
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (((w, &g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParameterStore, Tape, Tensor};

    fn scalar_store(w: f64) -> ParameterStore {
        let mut store = ParameterStore::new();
        store.add("w", Tensor::new(&[1], vec![w]).unwrap()).unwrap();
        store
    }

    fn set_grad(store: &mut ParameterStore, g: f64) {
        let id = store.find("w").unwrap();
        store.get_mut(id).grad = Some(Tensor::new(&[1], vec![g]).unwrap());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        set_grad(&mut store, 1.0);
        adam.step(&mut store).unwrap();
        let w = store.value(store.find("w").unwrap()).data()[0];
        assert!((w + 1e-3).abs() < 1e-10, "{w}");
        assert!(store.iter().all(|(_, p)| p.grad.is_none()));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = scalar_store(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            set_grad(&mut store, 0.0);
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(store.find("w").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let err = adam.step(&mut store).unwrap_err();
        assert!(matches!(err, Error::Contract(ref msg) if msg.contains("\"w\"")));
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        // Scalar simulation of f(w) = (w - 3)^2 driven through the tape.
        let mut store = scalar_store(0.0);
        let id = store.find("w").unwrap();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..100 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let c = tape.constant(Tensor::new(&[1], vec![3.0]).unwrap());
            let d = tape.sub(w, c).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).unwrap();
            store.accumulate(&grads);
            adam.step(&mut store).unwrap();
        }
        let w = store.value(id).data()[0];

        // Straight-line Adam on the analytic gradient 2(w - 3).
        let (mut ow, mut m, mut v) = (0.0_f64, 0.0_f64, 0.0_f64);
        for t in 1..=100 {
            let g = 2.0 * (ow - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9_f64.powi(t));
            let v_hat = v / (1.0 - 0.999_f64.powi(t));
            ow -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        }
        assert!((w - ow).abs() < 1e-12, "tape {w} vs oracle {ow}");
        assert!((w - 3.0).abs() < 0.1, "w = {w}");
    }
}
