use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::{Gradients, NetworkState};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && open_unit(self.beta1) && open_unit(self.beta2))
            || !(self.epsilon > 0.0)
        {
            return Err(NnError::Config(format!("invalid ADAM settings {self:?}")));
        }
        Ok(())
    }
}

/// One bias-corrected ADAM update. The state is left untouched when any
/// gradient is non-finite.
pub fn adam_step<T: Real>(
    state: &mut NetworkState<T>,
    grads: &Gradients<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    let congruent = grads.0.len() == state.weights.len()
        && grads.0.iter().zip(&state.weights).all(|(g, w)| {
            g.len() == w.len() && g.iter().zip(w).all(|(a, b)| a.shape() == b.shape())
        });
    if !congruent {
        return Err(NnError::Config(
            "gradients are not shape-congruent with the weights".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(NnError::NonFinite {
            stage: "ADAM gradient".into(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let c1 = T::lit(1.0 - cfg.beta1);
    let c2 = T::lit(1.0 - cfg.beta2);
    let correct1 = T::lit(1.0 - cfg.beta1.powi(t));
    let correct2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (layer, group) in grads.0.iter().enumerate() {
        for (slot, g) in group.iter().enumerate() {
            let w = state.weights[layer][slot].data_mut();
            let m = state.adam_m[layer][slot].data_mut();
            let v = state.adam_v[layer][slot].data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m).zip(v).zip(g.data()) {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{Layer, NetworkSpec};
    use crate::tensor::Tensor;

    fn scalar_state(w: f64) -> (NetworkSpec, NetworkState<f64>) {
        let spec = NetworkSpec::new(vec![1], vec![Layer::Dense { inputs: 1, outputs: 1 }]).unwrap();
        let state = NetworkState::from_weights(
            &spec,
            vec![vec![
                Tensor::from_f64(&[1, 1], &[w]).unwrap(),
                Tensor::zeros(&[1]),
            ]],
        )
        .unwrap();
        (spec, state)
    }

    fn grads(g: f64) -> Gradients<f64> {
        Gradients(vec![vec![
            Tensor::from_f64(&[1, 1], &[g]).unwrap(),
            Tensor::zeros(&[1]),
        ]])
    }

    #[test]
    fn first_step_matches_hand_evaluated_update() {
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 → w = -0.1 / (1 + 1e-8).
        let (_, mut state) = scalar_state(0.0);
        adam_step(&mut state, &grads(1.0), &AdamConfig::with_learning_rate(0.1)).unwrap();
        let w = state.weights[0][0].data()[0];
        assert!((w - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15, "{w}");
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (_, mut state) = scalar_state(0.75);
        let before = state.clone();
        for _ in 0..5 {
            adam_step(&mut state, &grads(0.0), &AdamConfig::default()).unwrap();
        }
        assert_eq!(state.weights, before.weights);
        assert!(state.adam_m.iter().flatten().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(state.adam_v.iter().flatten().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let (_, mut state) = scalar_state(0.5);
        let before = state.clone();
        assert!(adam_step(&mut state, &grads(f64::NAN), &AdamConfig::default()).is_err());
        assert_eq!(state, before);
    }
}
