use serde::{Deserialize, Serialize};

use super::network::Gradient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self::with_betas(n, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    /// One Adam update of `params` in place (descent on `g`).
    pub fn step(&mut self, params: &mut [f64], g: &Gradient) {
        assert_eq!(params.len(), self.m.len(), "parameter length");
        assert_eq!(g.len(), self.m.len(), "gradient length");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, &gi)) in params.iter_mut().zip(g.as_slice()).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], g: &Gradient) -> (Vec<f64>, AdamState) {
    let mut s = state.clone();
    let mut p = params.to_vec();
    s.step(&mut p, g);
    (p, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..10 {
            s.step(&mut p, &Gradient::zeros(3));
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 10);
    }

    #[test]
    fn first_step_is_sign_step() {
        let s = AdamState::new(2, 1e-3);
        let g = Gradient(vec![0.5, -4.0]);
        let (p, s) = adam_step(&s, &[0.0, 0.0], &g);
        for (pi, gi) in p.iter().zip(&g.0) {
            assert!((pi + 1e-3 * gi / (gi.abs() + 1e-8)).abs() < 1e-12);
        }
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }
}
