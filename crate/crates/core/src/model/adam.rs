use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::network::NetworkWeights;
use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: NetworkWeights<T>,
    pub v: NetworkWeights<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(arch: &ArchSpec) -> Self {
        AdamState {
            m: NetworkWeights::zeros(arch),
            v: NetworkWeights::zeros(arch),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    weights: &mut NetworkWeights<T>,
    grads: &NetworkWeights<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let lr = T::of(config.learning_rate);
    let eps = T::of(config.epsilon);
    let corr1 = T::of(1.0 - config.beta1.powi(t));
    let corr2 = T::of(1.0 - config.beta2.powi(t));
    let params = weights.params_mut().zip(grads.params());
    let moments = state.m.params_mut().zip(state.v.params_mut());
    for ((w, &g), (m, v)) in params.zip(moments) {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::{Activation, LayerSpec};

    fn scalar_arch() -> ArchSpec {
        ArchSpec {
            name: "scalar".into(),
            layers: vec![LayerSpec::conv(1, 1, 1, Activation::None)],
        }
    }

    fn with(kernel: f64, bias: f64) -> NetworkWeights<f64> {
        let mut w = NetworkWeights::zeros(&scalar_arch());
        w.convs[0].kernel[0] = kernel;
        w.convs[0].bias[0] = bias;
        w
    }

    #[test]
    fn zero_gradient_leaves_weights_and_decays_moments() {
        let arch = scalar_arch();
        let mut w = with(0.7, -0.2);
        let mut state = AdamState::new(&arch);
        state.m = with(1.0, 2.0);
        state.v = with(4.0, 8.0);
        adam_step(&mut w, &with(0.0, 0.0), &mut state, &AdamConfig::default());
        // moments decay; the weight still moves by the stale first moment
        assert!((state.m.convs[0].kernel[0] - 0.9).abs() < 1e-15);
        assert!((state.v.convs[0].bias[0] - 8.0 * 0.999).abs() < 1e-12);
        let mut fresh = AdamState::new(&arch);
        let mut w2 = with(0.7, -0.2);
        adam_step(&mut w2, &with(0.0, 0.0), &mut fresh, &AdamConfig::default());
        assert_eq!(w2, with(0.7, -0.2));
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e-6] {
            let mut w = with(0.0, 0.0);
            let mut state = AdamState::new(&scalar_arch());
            adam_step(&mut w, &with(g, g), &mut state, &cfg);
            let expect = -cfg.learning_rate * g.signum() / (1.0 + cfg.epsilon / g.abs());
            assert!((w.convs[0].kernel[0] - expect).abs() < 1e-15 * expect.abs().max(1e-4));
        }
    }

    #[test]
    fn constant_gradient_gives_unit_steps() {
        let cfg = AdamConfig::default();
        let mut w = with(0.0, 0.0);
        let mut state = AdamState::new(&scalar_arch());
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..1000 {
            adam_step(&mut w, &with(0.5, -2.0), &mut state, &cfg);
            last_step = w.convs[0].kernel[0] - prev;
            prev = w.convs[0].kernel[0];
        }
        assert!((last_step.abs() / cfg.learning_rate - 1.0).abs() < 0.01);
        assert_eq!(state.t, 1000);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut w = with(0.1, 0.2);
            let mut state = AdamState::new(&scalar_arch());
            for i in 0..10 {
                adam_step(&mut w, &with(i as f64, -(i as f64)), &mut state, &AdamConfig::default());
            }
            w
        };
        assert_eq!(run(), run());
    }
}
