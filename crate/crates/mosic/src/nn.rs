//! Small feed-forward network with manual backpropagation.
//!
//! This is the shared engine behind the outcome regressors and the
//! differentiable subgroup surrogate. It deliberately supports exactly what
//! those need — rectifier hidden layers, a linear final layer, batched
//! forward passes with cached activations, and the gradient of a per-sample
//! weighted sum of outputs — rather than a general autodiff graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::seeding::rng_from_seed;

/// One affine layer, weights stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Dense {
        // scaled-uniform by fan-in keeps pre-activations O(1) at the start
        let scale = 1.0 / (n_in as f64).sqrt();
        Dense {
            n_in,
            n_out,
            w: (0..n_in * n_out)
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
            b: vec![0.0; n_out],
        }
    }

    fn zeroed(n_in: usize, n_out: usize) -> Dense {
        Dense {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    #[inline]
    fn w_row(&self, o: usize) -> &[f64] {
        &self.w[o * self.n_in..(o + 1) * self.n_in]
    }
}

/// Rectifier multilayer perceptron with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-batch forward caches: post-activation values of every layer
/// (rectified for hidden layers, raw affine output for the last).
#[derive(Debug, Default, Clone)]
pub struct MlpCache {
    acts: Vec<Matrix>,
}

impl Mlp {
    /// Builds a network with the given layer widths, e.g. `[d, h, h, 1]`.
    ///
    /// Hidden weights are scaled-uniform by fan-in with zero biases. When
    /// `zero_output_layer` is set, the final layer starts at exactly zero so
    /// the initial output is a constant bias — callers that need a
    /// deterministic, uniform starting score use this to avoid committing to
    /// arbitrary init structure during the largest early optimizer steps.
    pub fn new(dims: &[usize], seed: u64, zero_output_layer: bool) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::parameter("network needs at least one layer"));
        }
        if dims.iter().any(|&w| w == 0) {
            return Err(Error::parameter("layer widths must be >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let last = l == dims.len() - 2;
            if last && zero_output_layer {
                layers.push(Dense::zeroed(dims[l], dims[l + 1]));
            } else {
                layers.push(Dense::new(dims[l], dims[l + 1], &mut rng));
            }
        }
        Ok(Mlp { layers })
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.n_in).collect();
        d.push(self.layers.last().map_or(0, |l| l.n_out));
        d
    }

    /// Width of the final layer.
    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Total parameter count.
    pub fn params_len(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattened parameters: per layer, weight matrix row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params_len());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Restores parameters from [`flatten`](Mlp::flatten) order.
    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params_len() {
            return Err(Error::parameter(format!(
                "parameter vector has length {}, expected {}",
                theta.len(),
                self.params_len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (wn, bn) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&theta[off..off + wn]);
            off += wn;
            l.b.copy_from_slice(&theta[off..off + bn]);
            off += bn;
        }
        Ok(())
    }

    /// Batched forward pass: fills `cache` with every layer's activations and
    /// returns a reference to the final raw outputs (`n x n_out`).
    pub fn forward_batch<'c>(&self, x: &Matrix, cache: &'c mut MlpCache) -> &'c Matrix {
        let n = x.nrows();
        cache.acts.clear();
        for (li, layer) in self.layers.iter().enumerate() {
            let last = li + 1 == self.layers.len();
            let mut out = Matrix::zeros(n, layer.n_out);
            {
                let input: &Matrix = if li == 0 { x } else { &cache.acts[li - 1] };
                for i in 0..n {
                    let row_in = input.row(i);
                    let row_out = out.row_mut(i);
                    for (o, slot) in row_out.iter_mut().enumerate() {
                        let z = dot(layer.w_row(o), row_in) + layer.b[o];
                        *slot = if last { z } else { z.max(0.0) };
                    }
                }
            }
            cache.acts.push(out);
        }
        cache.acts.last().unwrap()
    }

    /// Raw output for a single row (allocation-light convenience path).
    pub fn forward_row(&self, x_row: &[f64]) -> Vec<f64> {
        let mut cur = x_row.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let last = li + 1 == self.layers.len();
            let mut next = vec![0.0; layer.n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let z = dot(layer.w_row(o), &cur) + layer.b[o];
                *slot = if last { z } else { z.max(0.0) };
            }
            cur = next;
        }
        cur
    }

    /// Backpropagates per-sample output gradients through the cached batch
    /// and accumulates parameter gradients (flatten order) into `grad`.
    ///
    /// `dout` holds d(loss)/d(raw output) per sample, `n x n_out` row-major.
    /// The cache must come from a `forward_batch` call on the same `x`.
    pub fn backward_batch(&self, x: &Matrix, cache: &MlpCache, dout: &[f64], grad: &mut [f64]) {
        let n = x.nrows();
        debug_assert_eq!(dout.len(), n * self.n_out());
        debug_assert_eq!(grad.len(), self.params_len());

        // layer offsets into the flat gradient
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.w.len() + l.b.len();
        }

        let widest = self.layers.iter().map(|l| l.n_in.max(l.n_out)).max().unwrap_or(0);
        let mut delta = vec![0.0; widest];
        let mut delta_prev = vec![0.0; widest];

        for i in 0..n {
            let lcount = self.layers.len();
            let out_w = self.n_out();
            delta[..out_w].copy_from_slice(&dout[i * out_w..(i + 1) * out_w]);
            for li in (0..lcount).rev() {
                let layer = &self.layers[li];
                let input_row: &[f64] = if li == 0 {
                    x.row(i)
                } else {
                    cache.acts[li - 1].row(i)
                };
                // gradient for this layer's weights and bias
                let base = offsets[li];
                let wlen = layer.w.len();
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let gw = &mut grad[base + o * layer.n_in..base + (o + 1) * layer.n_in];
                        axpy(d, input_row, gw);
                    }
                }
                for o in 0..layer.n_out {
                    grad[base + wlen + o] += delta[o];
                }
                if li == 0 {
                    break;
                }
                // propagate: delta_prev = W' delta, gated by the rectifier
                let prev_w = layer.n_in;
                delta_prev[..prev_w].iter_mut().for_each(|v| *v = 0.0);
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        axpy(d, layer.w_row(o), &mut delta_prev[..prev_w]);
                    }
                }
                let acts = cache.acts[li - 1].row(i);
                for (dv, &a) in delta_prev[..prev_w].iter_mut().zip(acts) {
                    if a <= 0.0 {
                        *dv = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }

    /// In-place gradient-descent step over the flat gradient.
    pub fn apply_step(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), self.params_len());
        let mut off = 0;
        for l in &mut self.layers {
            let (wn, bn) = (l.w.len(), l.b.len());
            for (wv, gv) in l.w.iter_mut().zip(&grad[off..off + wn]) {
                *wv -= lr * gv;
            }
            off += wn;
            for (bv, gv) in l.b.iter_mut().zip(&grad[off..off + bn]) {
                *bv -= lr * gv;
            }
            off += bn;
        }
    }

    /// Indices (in flatten order) that belong to weight matrices, as a mask;
    /// biases are excluded. Used by L1 penalties that only touch weights.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.params_len());
        for l in &self.layers {
            mask.extend(std::iter::repeat(true).take(l.w.len()));
            mask.extend(std::iter::repeat(false).take(l.b.len()));
        }
        mask
    }
}
