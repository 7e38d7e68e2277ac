use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 3e-4, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn unit_gradient_steps_by_learning_rate() {
        let mut adam = Adam::new(1, 3e-4, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0]);
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p[0] + 3e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        for _ in 0..9 {
            adam.step(&mut p, &[1.0]);
        }
        assert!((p[0] + 10.0 * 3e-4 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut adam = Adam::new(2, 1e-2, 0.9, 0.999, 1e-8);
            let mut p = vec![0.5, -0.5];
            for k in 0..50 {
                let g = [p[0] * 2.0 + k as f64 * 1e-3, p[1].sin()];
                adam.step(&mut p, &g);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
