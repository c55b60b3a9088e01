//! Peephole LSTM layer followed by a dense output layer.
//!
//! Per step, with input `x` (scalar), previous hidden `h` and cell `c`:
//!
//! ```text
//! i  = σ(W_i x + R_i h + p_i ⊙ c  + b_i)
//! f  = σ(W_f x + R_f h + p_f ⊙ c  + b_f)
//! z  = tanh(W_z x + R_z h + b_z)
//! c' = z ⊙ i + c ⊙ f
//! o  = σ(W_o x + R_o h + p_o ⊙ c' + b_o)
//! h' = tanh(c') ⊙ o
//! ```
//!
//! The final hidden state goes through (inverted) dropout and a dense layer
//! `y = D h + d` of width `horizon`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    /// Input weights, one per unit.
    pub w: Vec<f64>,
    /// Recurrent weights, row-major `n_units x n_units`.
    pub r: Vec<f64>,
    /// Peephole weights; empty for the block input.
    pub p: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(n: usize, peephole: bool) -> Self {
        Self {
            w: vec![0.0; n],
            r: vec![0.0; n * n],
            p: if peephole { vec![0.0; n] } else { Vec::new() },
            b: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub n_units: usize,
    pub horizon: usize,
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub block_input: Gate,
    pub output_gate: Gate,
    /// Row-major `horizon x n_units`.
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

impl LstmWeights {
    pub fn zeros(n_units: usize, horizon: usize) -> Self {
        Self {
            n_units,
            horizon,
            input_gate: Gate::zeros(n_units, true),
            forget_gate: Gate::zeros(n_units, true),
            block_input: Gate::zeros(n_units, false),
            output_gate: Gate::zeros(n_units, true),
            dense_w: vec![0.0; horizon * n_units],
            dense_b: vec![0.0; horizon],
        }
    }

    /// Every tensor uniform in `[-1/sqrt(n_units), 1/sqrt(n_units)]`.
    pub fn random<R: Rng>(n_units: usize, horizon: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(n_units, horizon);
        let bound = 1.0 / (n_units as f64).sqrt();
        for (_, t) in w.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        w
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("W_i", &self.input_gate.w[..]),
            ("R_i", &self.input_gate.r[..]),
            ("p_i", &self.input_gate.p[..]),
            ("b_i", &self.input_gate.b[..]),
            ("W_f", &self.forget_gate.w[..]),
            ("R_f", &self.forget_gate.r[..]),
            ("p_f", &self.forget_gate.p[..]),
            ("b_f", &self.forget_gate.b[..]),
            ("W_z", &self.block_input.w[..]),
            ("R_z", &self.block_input.r[..]),
            ("b_z", &self.block_input.b[..]),
            ("W_o", &self.output_gate.w[..]),
            ("R_o", &self.output_gate.r[..]),
            ("p_o", &self.output_gate.p[..]),
            ("b_o", &self.output_gate.b[..]),
            ("dense_w", &self.dense_w[..]),
            ("dense_b", &self.dense_b[..]),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("W_i", &mut self.input_gate.w),
            ("R_i", &mut self.input_gate.r),
            ("p_i", &mut self.input_gate.p),
            ("b_i", &mut self.input_gate.b),
            ("W_f", &mut self.forget_gate.w),
            ("R_f", &mut self.forget_gate.r),
            ("p_f", &mut self.forget_gate.p),
            ("b_f", &mut self.forget_gate.b),
            ("W_z", &mut self.block_input.w),
            ("R_z", &mut self.block_input.r),
            ("b_z", &mut self.block_input.b),
            ("W_o", &mut self.output_gate.w),
            ("R_o", &mut self.output_gate.r),
            ("p_o", &mut self.output_gate.p),
            ("b_o", &mut self.output_gate.b),
            ("dense_w", &mut self.dense_w),
            ("dense_b", &mut self.dense_b),
        ]
    }

    pub fn n_params(&self) -> usize {
        let h = self.n_units;
        4 * (h + h * h + h) + 3 * h + self.horizon * (h + 1)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one unrolled window, kept for BPTT.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    steps: usize,
    n: usize,
    xs: Vec<f64>,
    /// `(steps + 1) x n`, row 0 is the zero initial state.
    h: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    z: Vec<f64>,
    o: Vec<f64>,
    /// Final hidden state after dropout.
    h_out: Vec<f64>,
    pub y: Vec<f64>,
}

impl ForwardCache {
    fn reset(&mut self, steps: usize, n: usize, horizon: usize) {
        self.steps = steps;
        self.n = n;
        let sized = |v: &mut Vec<f64>, len: usize| {
            v.clear();
            v.resize(len, 0.0);
        };
        sized(&mut self.h, (steps + 1) * n);
        sized(&mut self.c, (steps + 1) * n);
        sized(&mut self.tanh_c, steps * n);
        sized(&mut self.i, steps * n);
        sized(&mut self.f, steps * n);
        sized(&mut self.z, steps * n);
        sized(&mut self.o, steps * n);
        sized(&mut self.h_out, n);
        sized(&mut self.y, horizon);
    }
}

/// `out[u] = w[u] x + b[u] + sum_k r[u, k] h[k]`
#[inline]
fn affine(g: &Gate, x: f64, h: &[f64], out: &mut [f64]) {
    let n = h.len();
    for (u, o) in out.iter_mut().enumerate() {
        let row = &g.r[u * n..(u + 1) * n];
        let mut acc = g.w[u] * x + g.b[u];
        for (r, hv) in row.iter().zip(h) {
            acc += r * hv;
        }
        *o = acc;
    }
}

impl LstmWeights {
    /// Unroll over `input`. `dropout_mask` scales the final hidden state
    /// (already divided by the keep probability); `None` means inference.
    pub fn forward(&self, input: &[f64], dropout_mask: Option<&[f64]>, cache: &mut ForwardCache) {
        let n = self.n_units;
        let steps = input.len();
        cache.reset(steps, n, self.horizon);
        cache.xs.clear();
        cache.xs.extend_from_slice(input);
        let mut a = vec![0.0; n];
        for (t, &x) in input.iter().enumerate() {
            let (prev, cur) = cache.h.split_at_mut((t + 1) * n);
            let h_prev = &prev[t * n..];
            let h_cur = &mut cur[..n];
            let (cprev_all, ccur_all) = cache.c.split_at_mut((t + 1) * n);
            let c_prev = &cprev_all[t * n..];
            let c_cur = &mut ccur_all[..n];
            let s = t * n..(t + 1) * n;

            affine(&self.input_gate, x, h_prev, &mut a);
            for u in 0..n {
                cache.i[s.start + u] = sigmoid(a[u] + self.input_gate.p[u] * c_prev[u]);
            }
            affine(&self.forget_gate, x, h_prev, &mut a);
            for u in 0..n {
                cache.f[s.start + u] = sigmoid(a[u] + self.forget_gate.p[u] * c_prev[u]);
            }
            affine(&self.block_input, x, h_prev, &mut a);
            for u in 0..n {
                cache.z[s.start + u] = a[u].tanh();
            }
            for u in 0..n {
                let k = s.start + u;
                c_cur[u] = cache.z[k] * cache.i[k] + c_prev[u] * cache.f[k];
            }
            affine(&self.output_gate, x, h_prev, &mut a);
            for u in 0..n {
                let k = s.start + u;
                cache.o[k] = sigmoid(a[u] + self.output_gate.p[u] * c_cur[u]);
                cache.tanh_c[k] = c_cur[u].tanh();
                h_cur[u] = cache.tanh_c[k] * cache.o[k];
            }
        }
        let h_last = &cache.h[steps * n..];
        for u in 0..n {
            cache.h_out[u] = match dropout_mask {
                Some(m) => h_last[u] * m[u],
                None => h_last[u],
            };
        }
        for (j, y) in cache.y.iter_mut().enumerate() {
            let row = &self.dense_w[j * n..(j + 1) * n];
            *y = self.dense_b[j] + row.iter().zip(&cache.h_out).map(|(w, h)| w * h).sum::<f64>();
        }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = ForwardCache::default();
        self.forward(input, None, &mut cache);
        cache.y
    }

    /// Accumulate into `grads` the gradient of a loss whose derivative with
    /// respect to the output is `dy`, for the window stored in `cache`.
    pub fn backward(&self, cache: &ForwardCache, dropout_mask: Option<&[f64]>, dy: &[f64], grads: &mut LstmWeights) {
        let n = self.n_units;
        let steps = cache.steps;
        // dense layer
        let mut dh = vec![0.0; n];
        for (j, &g) in dy.iter().enumerate() {
            grads.dense_b[j] += g;
            let row = &self.dense_w[j * n..(j + 1) * n];
            let grow = &mut grads.dense_w[j * n..(j + 1) * n];
            for u in 0..n {
                grow[u] += g * cache.h_out[u];
                dh[u] += g * row[u];
            }
        }
        if let Some(m) = dropout_mask {
            for u in 0..n {
                dh[u] *= m[u];
            }
        }

        let mut dc_next = vec![0.0; n];
        let (mut da_i, mut da_f, mut da_z, mut da_o) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for t in (0..steps).rev() {
            let x = cache.xs[t];
            let s = t * n;
            let h_prev = &cache.h[t * n..(t + 1) * n];
            let c_prev = &cache.c[t * n..(t + 1) * n];
            let c_cur = &cache.c[(t + 1) * n..(t + 2) * n];
            for u in 0..n {
                let k = s + u;
                let (i, f, z, o, tc) = (cache.i[k], cache.f[k], cache.z[k], cache.o[k], cache.tanh_c[k]);
                da_o[u] = dh[u] * tc * o * (1.0 - o);
                let dc = dc_next[u] + dh[u] * o * (1.0 - tc * tc) + da_o[u] * self.output_gate.p[u];
                da_i[u] = dc * z * i * (1.0 - i);
                da_z[u] = dc * i * (1.0 - z * z);
                da_f[u] = dc * c_prev[u] * f * (1.0 - f);
                grads.output_gate.p[u] += da_o[u] * c_cur[u];
                grads.input_gate.p[u] += da_i[u] * c_prev[u];
                grads.forget_gate.p[u] += da_f[u] * c_prev[u];
                dc_next[u] = dc * f + da_i[u] * self.input_gate.p[u] + da_f[u] * self.forget_gate.p[u];
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (gate, ggrad, da) in [
                (&self.input_gate, &mut grads.input_gate, &da_i),
                (&self.forget_gate, &mut grads.forget_gate, &da_f),
                (&self.block_input, &mut grads.block_input, &da_z),
                (&self.output_gate, &mut grads.output_gate, &da_o),
            ] {
                for u in 0..n {
                    let g = da[u];
                    ggrad.w[u] += g * x;
                    ggrad.b[u] += g;
                    let row = &gate.r[u * n..(u + 1) * n];
                    let grow = &mut ggrad.r[u * n..(u + 1) * n];
                    for k in 0..n {
                        grow[k] += g * h_prev[k];
                        dh[k] += g * row[k];
                    }
                }
            }
        }
    }
}

/// Scratch space for one mini-batch: reusable cache and gradient buffers.
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    pub cache: ForwardCache,
    pub grads: LstmWeights,
    pub mask: Vec<f64>,
    pub dy: Vec<f64>,
}

impl BatchWorkspace {
    pub fn new(n_units: usize, horizon: usize) -> Self {
        Self {
            cache: ForwardCache::default(),
            grads: LstmWeights::zeros(n_units, horizon),
            mask: vec![1.0; n_units],
            dy: vec![0.0; horizon],
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill_zero();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let w = LstmWeights::zeros(5, 6);
        let y = w.predict(&[0.3, -1.0, 2.0, 0.1, 0.0, 0.5, 0.2, 0.9, 1.1, -0.4, 0.3, 0.7]);
        assert_eq!(y, vec![0.0; 6]);
    }

    #[test]
    fn output_width_is_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = LstmWeights::random(7, 6, &mut rng);
        for len in [1, 5, 12] {
            assert_eq!(w.predict(&vec![0.5; len]).len(), 6);
        }
    }

    #[test]
    fn single_unit_single_step_by_hand() {
        let mut w = LstmWeights::zeros(1, 1);
        let set = |g: &mut Gate, wv: f64, pv: f64, bv: f64| {
            g.w[0] = wv;
            g.r[0] = 0.7; // h_prev = 0 on the first step, so R has no effect
            if !g.p.is_empty() {
                g.p[0] = pv;
            }
            g.b[0] = bv;
        };
        set(&mut w.input_gate, 0.5, 0.3, 0.1);
        set(&mut w.forget_gate, -0.4, 0.2, 0.2);
        set(&mut w.block_input, 0.9, 0.0, -0.1);
        set(&mut w.output_gate, 0.6, 0.8, 0.05);
        w.dense_w[0] = 1.5;
        w.dense_b[0] = -0.2;
        let x = 0.8f64;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // c_prev = 0 kills the input/forget peepholes on step one
        let i = sig(0.5 * x + 0.1);
        let z = (0.9 * x - 0.1).tanh();
        let c = z * i;
        let o = sig(0.6 * x + 0.8 * c + 0.05);
        let h = c.tanh() * o;
        let expect = 1.5 * h - 0.2;
        let y = w.predict(&[x]);
        assert!((y[0] - expect).abs() < 1e-10, "{} vs {expect}", y[0]);
    }

    #[test]
    fn tensor_views_cover_all_parameters() {
        let mut w = LstmWeights::zeros(4, 6);
        let count: usize = w.tensors_mut().iter().map(|(_, t)| t.len()).sum();
        assert_eq!(count, w.n_params());
    }
}
