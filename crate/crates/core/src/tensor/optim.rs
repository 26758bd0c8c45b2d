use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::{Param, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 1e-3,
        }
    }
}

/// One AdamW update of a single tensor at 1-based step `step`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: T,
    cfg: &AdamWConfig,
) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let eps = T::lit(cfg.eps);
    let decay = T::one() - lr * T::lit(cfg.weight_decay);
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] = param[i] * decay - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Moment buffers for every parameter of a store.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = |p: &Param<T>| vec![T::zero(); p.value.numel()];
        Self {
            config,
            step: 0,
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    /// Applies the stored gradients, with a learning rate chosen per parameter.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr_for: impl Fn(&str) -> T) {
        self.step += 1;
        for (id, p) in store.iter_mut() {
            let lr = lr_for(&p.name);
            let i = id.index();
            let Param { value, grad, .. } = p;
            adamw_step(
                value.data_mut(),
                grad,
                &mut self.m[i],
                &mut self.v[i],
                self.step,
                lr,
                &self.config,
            );
        }
    }
}

/// Linear interpolation from `start` at step 0 to `end` at step
/// `total_steps − 1`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.end;
        }
        let last = self.total_steps - 1;
        if step >= last {
            return self.end;
        }
        let f = step as f64 / last as f64;
        self.start + (self.end - self.start) * f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![1.5, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, 0.1, &cfg);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn decoupled_decay() {
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut p = vec![2.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adamw_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.5, &cfg);
        assert_eq!(p[0], 2.0 * (1.0 - 0.5 * 0.01));
    }

    #[test]
    fn first_step_is_sign_like() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in [0.3, -4.0, 1e-3] {
            let mut p = vec![0.0];
            let (mut m, mut v) = (vec![0.0], vec![0.0]);
            adamw_step(&mut p, &[g], &mut m, &mut v, 1, 0.01, &cfg);
            // mhat = g, vhat = g², so the step is lr·g/(|g| + eps).
            let expect = -0.01 * g / (f64::abs(g) + 1e-6);
            assert!((p[0] - expect).abs() < 1e-15, "{} vs {}", p[0], expect);
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = LinearSchedule {
            start: 2e-4,
            end: 1e-5,
            total_steps: 101,
        };
        assert_eq!(s.at(0), 2e-4);
        assert!((s.at(100) - 1e-5).abs() <= 1e-12);
        assert!((s.at(50) - (2e-4 + 1e-5) / 2.0).abs() < 1e-15);
        assert_eq!(s.at(500), 1e-5);
    }
}
