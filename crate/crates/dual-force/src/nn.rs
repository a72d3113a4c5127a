//! Minimal feed-forward approximator with hand-rolled reverse-mode
//! gradients and an Adam optimizer. Parameters live in one flat vector so
//! optimizer state, serialization, and hashing stay trivial.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two standard normals via Box-Muller; keeps the crate free of extra
/// distribution dependencies and deterministic under ChaCha streams.
pub fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Fully connected network, tanh on hidden layers, linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations recorded during a forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// layer inputs: x_0 (network input) through x_{L-1}
    inputs: Vec<Vec<f64>>,
    /// post-activation outputs are the next layer's inputs; we also keep
    /// the final linear output
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Xavier-style init, deterministic under the provided stream.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("mlp sizes", format!("{sizes:?}")));
        }
        let n = Self::param_count(sizes);
        let mut params = vec![0.0; n];
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let wcount = fan_in * fan_out;
            let mut i = 0;
            while i < wcount {
                let (a, b) = normal_pair(rng);
                params[off + i] = a * scale;
                if i + 1 < wcount {
                    params[off + i + 1] = b * scale;
                }
                i += 2;
            }
            off += wcount + fan_out; // biases stay zero
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        // (w_offset, b_offset, in, out) per layer
        let mut out = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            out.push((off, off + w[0] * w[1], w[0], w[1]));
            off += w[0] * w[1] + w[1];
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        debug_assert_eq!(input.len(), self.input_dim());
        let layers = self.layer_offsets();
        let last = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut x = input.to_vec();
        for (li, &(wo, bo, n_in, n_out)) in layers.iter().enumerate() {
            inputs.push(x.clone());
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &self.params[wo + o * n_in..wo + (o + 1) * n_in];
                let mut acc = self.params[bo + o];
                for (xi, wi) in x.iter().zip(row) {
                    acc += xi * wi;
                }
                z[o] = if li == last { acc } else { acc.tanh() };
            }
            x = z;
        }
        ForwardCache { inputs, output: x }
    }

    /// Convenience for scalar-output networks.
    pub fn eval_scalar(&self, input: &[f64]) -> f64 {
        self.forward(input).output[0]
    }

    /// Accumulate dL/dparams into `grads` given dL/doutput; returns
    /// dL/dinput. `grads` must have `params.len()` entries.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let layers = self.layer_offsets();
        let last = layers.len() - 1;
        let mut delta = grad_out.to_vec();
        for li in (0..layers.len()).rev() {
            let (wo, bo, n_in, n_out) = layers[li];
            let x_in = &cache.inputs[li];
            // post-activation of this layer = input of next layer (or output)
            if li != last {
                let act = &cache.inputs[li + 1];
                for o in 0..n_out {
                    delta[o] *= 1.0 - act[o] * act[o]; // tanh'
                }
            }
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                grads[bo + o] += d;
                let row = wo + o * n_in;
                for i in 0..n_in {
                    grads[row + i] += d * x_in[i];
                    grad_in[i] += d * self.params[row + i];
                }
            }
            delta = grad_in;
        }
        delta
    }

    /// FNV-1a over the raw parameter bytes; used to assert frozen models
    /// and slot independence.
    pub fn param_hash(&self) -> u64 {
        hash_f64s(&self.params)
    }
}

pub fn hash_f64s(xs: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for x in xs {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
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
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Plain gradient step; used where monotone-descent guarantees matter.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}
