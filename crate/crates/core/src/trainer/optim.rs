//! Warmup + cosine learning-rate schedule and the AdamW update.

use std::f64::consts::PI;

use super::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    /// Learning rate for optimizer step `step` (1-based; step 0 is the state
    /// before any update).
    ///
    /// Linear ramp `base · step / warmup` up to `step = warmup`, then
    /// `base · ½(1 + cos(π · (step − warmup) / (total − warmup)))`, reaching 0
    /// at `step = total`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.base_lr;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.base_lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: usize,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        AdamWState {
            first: ModelParams::zeros_like(params),
            second: ModelParams::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW step. Weight decay is applied to the parameters
/// (`θ ← θ − lr·wd·θ`), never folded into the gradient.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamWState,
    lr: f64,
    config: &AdamWConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let AdamWState { first, second, .. } = state;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(first.tensors_mut())
        .zip(second.tensors_mut())
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for k in 0..p.len() {
            let gk = g.data()[k];
            p[k] -= lr * config.weight_decay * p[k];
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn schedule() -> Schedule {
        Schedule {
            base_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 330,
        }
    }

    #[test]
    fn warmup_ramp_and_cosine_tail() {
        let s = schedule();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(1), 1e-3 / 100.0);
        assert_eq!(s.lr_at(100), 1e-3);
        assert!(s.lr_at(330) <= 1e-3 * 1e-3);
        assert!(s.lr_at(215) < s.lr_at(150));
        let no_warmup = Schedule {
            warmup_steps: 0,
            ..s
        };
        assert_eq!(no_warmup.lr_at(0), 1e-3);
    }

    fn scalar_params(v: f64) -> ModelParams {
        ModelParams {
            w1: Matrix::filled(1, 1, v),
            b1: Matrix::filled(1, 1, v),
            w2: Matrix::filled(1, 1, v),
            b2: Matrix::filled(1, 1, v),
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = scalar_params(0.7);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &scalar_params(0.0), &mut st, 1e-2, &cfg);
        assert_eq!(p, scalar_params(0.7));
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = ModelParams {
            w1: Matrix::new(1, 2, vec![0.0, 0.0]).unwrap(),
            b1: Matrix::filled(1, 1, 0.0),
            w2: Matrix::filled(1, 1, 0.0),
            b2: Matrix::filled(1, 1, 0.0),
        };
        let g = ModelParams {
            w1: Matrix::new(1, 2, vec![0.3, -2.0]).unwrap(),
            ..p.clone()
        };
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &g, &mut st, 1e-3, &cfg);
        assert!((p.w1.data()[0] + 1e-3).abs() < 1e-10);
        assert!((p.w1.data()[1] - 1e-3).abs() < 1e-10);
    }

    /// Scalar AdamW reference, written out step by step.
    fn reference(theta0: f64, grads: &[f64], lrs: &[f64], cfg: &AdamWConfig) -> f64 {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        for (t, (&g, &lr)) in grads.iter().zip(lrs).enumerate() {
            let t = (t + 1) as i32;
            theta *= 1.0 - lr * cfg.weight_decay;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            theta -= lr * mh / (vh.sqrt() + cfg.eps);
        }
        theta
    }

    #[test]
    fn three_step_trace_matches_reference() {
        let cfg = AdamWConfig {
            weight_decay: 0.05,
            ..AdamWConfig::default()
        };
        let grads = [0.4, -0.1, 0.25];
        let lrs = [1e-2, 5e-3, 2e-3];
        let mut p = scalar_params(0.9);
        let mut st = AdamWState::new(&p);
        for (g, lr) in grads.iter().zip(lrs) {
            adamw_step(&mut p, &scalar_params(*g), &mut st, lr, &cfg);
        }
        let expected = reference(0.9, &grads, &lrs, &cfg);
        assert!((p.w1.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn decay_is_decoupled_from_gradient_scale() {
        // with zero gradient only the decay acts: θ(1 − lr·wd)
        let mut p = scalar_params(2.0);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &scalar_params(0.0), &mut st, 0.5, &cfg);
        assert!((p.b2.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
