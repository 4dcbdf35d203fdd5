use std::collections::BTreeMap;

use super::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adaptive-moment optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Adam {
    /// Applies one bias-corrected update to every trainable parameter that
    /// has an entry in `grads`.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = store.require(name)?;
            if g.len() != p.len() {
                return Err(Error::dim(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            if let Some((m, _)) = state.moments.get(name) {
                if m.len() != p.len() {
                    return Err(Error::dim(format!(
                        "optimizer state for {name} has {} entries, parameter has {}",
                        m.len(),
                        p.len()
                    )));
                }
            }
        }

        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = store.get_mut(name).expect("validated above");
            if !p.requires_grad {
                continue;
            }
            let (m, v) = state
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ParamTensor;

    fn setup(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(ParamTensor::new("w", vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    fn grads(g: &[f64]) -> Gradients {
        Gradients([("w".to_string(), g.to_vec())].into_iter().collect())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = setup(&[1.0, -2.0]);
        let mut state = AdamState::new();
        Adam::default()
            .step(&mut store, &grads(&[0.0, 0.0]), &mut state)
            .unwrap();
        assert_eq!(store.get("w").unwrap().values, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let mut store = setup(&[1.0, 1.0, 1.0]);
        let mut state = AdamState::new();
        let opt = Adam::default();
        let g = [0.5, -3.0, 1e-3];
        opt.step(&mut store, &grads(&g), &mut state).unwrap();
        for (w, gi) in store.get("w").unwrap().values.iter().zip(g) {
            let expected = 1.0 - opt.lr * gi / (gi.abs() + opt.eps);
            assert!((w - expected).abs() < 1e-15);
            assert!((w - (1.0 - opt.lr * gi.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_outputs() {
        let run = || {
            let mut store = setup(&[0.1, 0.2]);
            let mut state = AdamState::new();
            for k in 0..5 {
                let g = grads(&[0.3 * k as f64 - 0.4, 1.0 / (k as f64 + 1.0)]);
                Adam::default().step(&mut store, &g, &mut state).unwrap();
            }
            (store, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut store = setup(&[0.0, 0.0]);
        let mut state = AdamState::new();
        let err = Adam::default().step(&mut store, &grads(&[1.0]), &mut state);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }
}
