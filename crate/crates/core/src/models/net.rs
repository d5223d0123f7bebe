//! Native scorer internals: feature encoding and a small feed-forward
//! network trained by mini-batch gradient descent.
//!
//! A logistic regression is the zero-hidden-layer case of the same network.
//! Parameters live in one flat vector so gradients can be checked against
//! finite differences coordinate by coordinate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{numeric_stats, FeatureStats, Instance};
use crate::error::{Error, Result};
use crate::schema::Schema;

/// Frozen preprocessing: per-feature standardization statistics fitted on the
/// training split, plus one-hot widths for categoricals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub stats: Vec<FeatureStats>,
    pub vocab_sizes: Vec<usize>,
}

impl FeatureEncoder {
    /// Fit standardization statistics on the given rows (population std).
    pub fn fit<'a>(
        schema: &Schema,
        rows: impl Iterator<Item = &'a Instance> + Clone,
    ) -> FeatureEncoder {
        FeatureEncoder {
            stats: numeric_stats(schema.n_numerical(), rows),
            vocab_sizes: schema.vocab_sizes(),
        }
    }

    /// Encoded width: numerical features plus one-hot blocks.
    pub fn dim(&self) -> usize {
        self.stats.len() + self.vocab_sizes.iter().sum::<usize>()
    }

    pub fn check(&self, inst: &Instance) -> Result<()> {
        if inst.numeric_values.len() != self.stats.len()
            || inst.category_codes.len() != self.vocab_sizes.len()
            || inst
                .category_codes
                .iter()
                .zip(&self.vocab_sizes)
                .any(|(c, v)| c >= v)
        {
            return Err(Error::Type(
                "instance does not conform to the trained schema".into(),
            ));
        }
        Ok(())
    }

    /// Standardize numericals with the frozen statistics (zero-variance
    /// features collapse to 0) and one-hot encode categoricals.
    pub fn encode_into(&self, inst: &Instance, out: &mut Vec<f64>) {
        out.clear();
        for (v, s) in inst.numeric_values.iter().zip(&self.stats) {
            let sigma = if s.std > 0.0 { s.std } else { 1.0 };
            out.push((v - s.mean) / sigma);
        }
        for (code, &size) in inst.category_codes.iter().zip(&self.vocab_sizes) {
            let base = out.len();
            out.resize(base + size, 0.0);
            out[base + code] = 1.0;
        }
    }

    pub fn encode(&self, inst: &Instance) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.encode_into(inst, &mut out);
        out
    }
}

/// Network shape: input width and hidden layer sizes. Empty `hidden` is a
/// plain logistic regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpArch {
    /// (in, out) per layer, ending in the scalar output layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, 1));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Feed-forward scorer: tanh hidden activations, sigmoid output, binary
/// cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub arch: MlpArch,
    pub params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl Mlp {
    pub fn zeros(arch: MlpArch) -> Mlp {
        let n = arch.n_params();
        Mlp {
            arch,
            params: vec![0.0; n],
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases at 0.
    pub fn init(arch: MlpArch, rng: &mut impl Rng) -> Mlp {
        let mut params = Vec::with_capacity(arch.n_params());
        for (fan_in, fan_out) in arch.layer_dims() {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push((rng.random::<f64>() * 2.0 - 1.0) * scale);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp { arch, params }
    }

    /// Pre-sigmoid output for one encoded row.
    fn raw(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arch.input_dim);
        let mut cur: Vec<f64> = x.to_vec();
        let mut offset = 0usize;
        let dims = self.arch.layer_dims();
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut z = b[o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (wi, xi) in row.iter().zip(&cur) {
                    z += wi * xi;
                }
                next[o] = if layer + 1 < dims.len() { z.tanh() } else { z };
            }
            cur = next;
        }
        cur[0]
    }

    /// Score one encoded row in [0, 1].
    pub fn forward(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw(x))
    }

    /// Mean binary cross-entropy over a batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        debug_assert_eq!(xs.len(), ys.len());
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.raw(x);
            let y_f = if y { 1.0 } else { 0.0 };
            total += softplus(-z) + (1.0 - y_f) * z;
        }
        total / xs.len() as f64
    }

    /// Mean loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[bool]) -> (f64, Vec<f64>) {
        debug_assert_eq!(xs.len(), ys.len());
        let dims = self.arch.layer_dims();
        let mut grad = vec![0.0; self.params.len()];
        let mut total_loss = 0.0;
        let inv_n = 1.0 / xs.len() as f64;

        for (x, &y) in xs.iter().zip(ys) {
            // forward, retaining activations per layer
            let mut activations: Vec<Vec<f64>> = Vec::with_capacity(dims.len() + 1);
            activations.push(x.clone());
            let mut offset = 0usize;
            for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
                let w = &self.params[offset..offset + fan_in * fan_out];
                let b = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
                offset += (fan_in + 1) * fan_out;
                let prev = activations.last().unwrap();
                let mut next = vec![0.0; fan_out];
                for o in 0..fan_out {
                    let mut z = b[o];
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (wi, xi) in row.iter().zip(prev) {
                        z += wi * xi;
                    }
                    next[o] = if layer + 1 < dims.len() { z.tanh() } else { z };
                }
                activations.push(next);
            }

            let z = activations.last().unwrap()[0];
            let y_f = if y { 1.0 } else { 0.0 };
            total_loss += softplus(-z) + (1.0 - y_f) * z;

            // backward
            let mut delta = vec![sigmoid(z) - y_f]; // dL/dz at the output
            let mut offsets: Vec<usize> = Vec::with_capacity(dims.len());
            {
                let mut off = 0;
                for &(fan_in, fan_out) in &dims {
                    offsets.push(off);
                    off += (fan_in + 1) * fan_out;
                }
            }
            for layer in (0..dims.len()).rev() {
                let (fan_in, fan_out) = dims[layer];
                let off = offsets[layer];
                let w = &self.params[off..off + fan_in * fan_out];
                let prev = &activations[layer];
                // parameter gradients
                for o in 0..fan_out {
                    let d = delta[o] * inv_n;
                    let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                    for (g, xi) in row.iter_mut().zip(prev) {
                        *g += d * xi;
                    }
                    grad[off + fan_in * fan_out + o] += d;
                }
                // propagate to the previous layer
                if layer > 0 {
                    let mut prev_delta = vec![0.0; fan_in];
                    for o in 0..fan_out {
                        let row = &w[o * fan_in..(o + 1) * fan_in];
                        for (pd, wi) in prev_delta.iter_mut().zip(row) {
                            *pd += delta[o] * wi;
                        }
                    }
                    // through tanh: h = tanh(z) so dz = (1 - h^2) dh
                    for (pd, h) in prev_delta.iter_mut().zip(&activations[layer]) {
                        *pd *= 1.0 - h * h;
                    }
                    delta = prev_delta;
                }
            }
        }

        (total_loss * inv_n, grad)
    }

    /// One gradient-descent step.
    pub fn step(&mut self, grad: &[f64], learning_rate: f64) {
        debug_assert_eq!(grad.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }
}
