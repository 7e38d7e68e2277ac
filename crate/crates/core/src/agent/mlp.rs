//! Fully connected network with tanh hidden layers, a linear output layer
//! and hand-written backpropagation. Parameters live in one flat vector so
//! optimizers and checkpoints can treat them uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer outputs recorded during a forward pass. `acts[0]` is the input and
/// `acts[k]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        }
    }

    /// Uniform init in `+-1/sqrt(fan_in)`; the output layer is further
    /// scaled by `output_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes);
        let layers = mlp.sizes.len() - 1;
        let mut offset = 0;
        for k in 0..layers {
            let (fan_in, fan_out) = (mlp.sizes[k], mlp.sizes[k + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if k + 1 == layers { output_scale } else { 1.0 };
            for p in &mut mlp.params[offset..offset + fan_in * fan_out + fan_out] {
                *p = scale * rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = self.forward_trace(x);
        trace.acts.pop().unwrap()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for k in 0..layers {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &acts[k];
            let mut out: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if k + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            offset += n_in * n_out + n_out;
        }
        Trace { acts }
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut delta = grad_out.to_vec();
        let mut end = self.params.len();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let start = end - (n_in * n_out + n_out);
            let input = &trace.acts[k];
            let (gw, gb) = grads[start..end].split_at_mut(n_in * n_out);
            for (j, d) in delta.iter().enumerate() {
                gb[j] += d;
                for (g, a) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if k > 0 {
                let w = &self.params[start..start + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (j, d) in delta.iter().enumerate() {
                    for (p, wij) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += d * wij;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
            end = start;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward re-derivation of the forward pass from explicit
    /// weight matrices, independent of the flat-slice arithmetic above.
    fn reference_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let sizes = m.sizes();
        let mut h = x.to_vec();
        let mut off = 0;
        for k in 0..sizes.len() - 1 {
            let (ni, no) = (sizes[k], sizes[k + 1]);
            let mut w = vec![vec![0.0; ni]; no];
            for (j, row) in w.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = m.params()[off + j * ni + i];
                }
            }
            let b = &m.params()[off + ni * no..off + ni * no + no];
            let mut out = vec![0.0; no];
            for j in 0..no {
                let mut s = b[j];
                for i in 0..ni {
                    s += w[j][i] * h[i];
                }
                out[j] = if k + 2 < sizes.len() { s.tanh() } else { s };
            }
            h = out;
            off += ni * no + no;
        }
        h
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = Mlp::zeros(&[4, 8, 3]);
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5]), vec![0.0; 3]);
        assert_eq!(m.n_params(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[6, 5, 4, 2], 1.0, &mut rng);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = m.forward(&x);
            let b = reference_forward(&m, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let c = [0.8, -1.3];
        let loss = |m: &Mlp| {
            m.forward(&x)
                .iter()
                .zip(&c)
                .map(|(o, c)| o * c)
                .sum::<f64>()
        };
        let trace = m.forward_trace(&x);
        let mut g = vec![0.0; m.n_params()];
        m.backward(&trace, &c, &mut g);
        for (i, &gi) in g.iter().enumerate() {
            let mut p = m.clone();
            p.params_mut()[i] += 1e-6;
            let mut q = m.clone();
            q.params_mut()[i] -= 1e-6;
            let fd = (loss(&p) - loss(&q)) / 2e-6;
            assert!((fd - gi).abs() < 1e-8, "param {i}: {fd} vs {gi}");
        }
    }
}
