//! Adam with per-slice updates, so sparse parameters can be advanced lazily.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one Adam update to `params`, which mirrors the moment buffers
    /// starting at `offset`. `t` is the 1-based update count used for bias
    /// correction.
    pub fn step_slice(&mut self, offset: usize, params: &mut [f32], grads: &[f32], lr: f32, t: u64, cfg: &AdamConfig) {
        debug_assert_eq!(params.len(), grads.len());
        let t = t.max(1) as i32;
        let bc1 = 1.0 - f64::from(cfg.beta1).powi(t);
        let bc2 = 1.0 - f64::from(cfg.beta2).powi(t);
        let step = (f64::from(lr) / bc1) as f32;
        let sqrt_bc2 = bc2.sqrt() as f32;
        let end = offset + params.len();
        let (m, v) = (&mut self.m[offset..end], &mut self.v[offset..end]);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= step * *m / (v.sqrt() / sqrt_bc2 + cfg.eps);
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32, t: u64, cfg: &AdamConfig) {
        self.step_slice(0, params, grads, lr, t, cfg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0f32, 1.0, 1.0];
        let mut st = AdamMoments::zeros(3);
        st.step(&mut p, &[0.5, -2.0, 0.0], 0.1, 1, &cfg);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig::default();
        let mut p = vec![3.0f32, -2.0];
        let mut st = AdamMoments::zeros(2);
        for t in 1..=2000 {
            let g: Vec<f32> = p.iter().map(|x| 2.0 * x).collect();
            st.step(&mut p, &g, 0.01, t, &cfg);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn slice_update_leaves_other_entries_alone() {
        let cfg = AdamConfig::default();
        let mut all = [1.0f32; 6];
        let mut st = AdamMoments::zeros(6);
        st.step_slice(2, &mut all[2..4], &[1.0, 1.0], 0.1, 1, &cfg);
        assert_eq!(&all[..2], &[1.0, 1.0]);
        assert_eq!(&all[4..], &[1.0, 1.0]);
        assert_eq!(st.m[0], 0.0);
        assert!(st.m[2] > 0.0);
    }
}
