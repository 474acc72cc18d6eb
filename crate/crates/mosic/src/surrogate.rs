//! Differentiable subgroup scoring models.
//!
//! A surrogate maps covariates to membership scores in `(0, 1)`; the fitted
//! subgroup is the region where the score exceeds one half. Three families
//! are provided — a sigmoid-headed multilayer perceptron, a soft decision
//! tree with learned feature selection, and an averaged forest of such trees.
//! All of them expose the exact gradient of a per-sample weighted score sum,
//! which is the only derivative the optimizer needs.
//!
//! Every family standardizes its inputs internally (fitted on the training
//! features at construction) and starts from a state with a constant score,
//! so early optimizer steps are driven by the effect signal instead of the
//! arbitrary geometry of a random initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Mlp, MlpCache};
use crate::nuisance::Standardizer;
use crate::seeding::{derive_seed, rng_from_seed};
use rand::Rng;

/// Scores are clamped into `[SCORE_CLAMP, 1 - SCORE_CLAMP]`.
pub const SCORE_CLAMP: f64 = 1e-6;

/// Which scoring family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Mlp,
    SoftTree,
    Forest,
}

/// Structural settings for surrogate construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    /// Hidden-layer widths for the perceptron family.
    pub hidden: Vec<usize>,
    /// Tree depth (number of decision levels) for the tree families.
    pub depth: usize,
    /// Number of trees in the forest family.
    pub trees: usize,
    /// Routing temperature for soft trees; smaller is closer to hard splits.
    pub temperature: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            kind: SurrogateKind::Mlp,
            hidden: vec![50, 50],
            depth: 3,
            trees: 4,
            temperature: 0.5,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::parameter(
                "surrogate hidden widths must be non-empty and positive".to_string(),
            ));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::parameter("tree depth must be in 1..=8"));
        }
        if self.trees == 0 {
            return Err(Error::parameter("forest needs at least one tree"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::parameter("routing temperature must be > 0"));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Scratch buffers reused across optimizer iterations.
#[derive(Debug, Clone, Default)]
pub struct SurrogateCache {
    /// Standardized inputs.
    zx: Matrix,
    mlp: MlpCache,
    /// Final clamped membership scores for each row.
    raw: Vec<f64>,
    /// Per-tree forward state (tree and forest families).
    trees: Vec<TreeCache>,
}

impl SurrogateCache {
    /// Scores left behind by the most recent [`SurrogateModel::scores`] call
    /// on this cache. Valid only while the model parameters are unchanged.
    pub fn cached_scores(&self) -> &[f64] {
        &self.raw
    }
}

/// A sigmoid-headed perceptron scorer.
///
/// The output layer starts at zero with bias `logit(s0)`, so every initial
/// score equals `s0` exactly; the first descent steps then move weights in
/// the direction of the effect signal rather than fighting a random head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSurrogate {
    pub net: Mlp,
    pub standardizer: Standardizer,
}

/// A soft, differentiable decision tree.
///
/// Internal nodes are stored in heap order (node `m` has children `2m+1`,
/// `2m+2`). Each internal node holds feature-mixing logits (softmax-combined
/// into one routing coordinate) and a threshold; each leaf holds a value
/// logit. The score is the routing-probability mixture of leaf sigmoids, so
/// it lies in `(0, 1)` by construction. Thresholds start at standard-normal
/// quantiles of the standardized inputs and all leaf logits start at
/// `logit(s0)`, making the initial score exactly `s0` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTreeSurrogate {
    pub d: usize,
    pub depth: usize,
    pub temperature: f64,
    /// Flat parameters: per internal node `d` feature logits then the
    /// threshold, nodes in heap order; then one value logit per leaf.
    pub params: Vec<f64>,
    pub standardizer: Standardizer,
}

/// Per-tree forward buffers.
#[derive(Debug, Clone, Default)]
struct TreeCache {
    /// Per-node softmax over feature logits (data independent), `m x d`.
    probs: Vec<f64>,
    /// Per-row, per-node mixed coordinate.
    mixed: Vec<f64>,
    /// Per-row, per-node probability of routing right.
    right: Vec<f64>,
    /// Per-row, per-node reach probability.
    reach: Vec<f64>,
    /// Per-row, per-(node+leaf) expected leaf sigmoid below each subtree.
    mu: Vec<f64>,
    rows: usize,
}

/// Averaged forest of soft trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSurrogate {
    pub trees: Vec<SoftTreeSurrogate>,
}

/// A fitted or in-training subgroup scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurrogateModel {
    Mlp(MlpSurrogate),
    SoftTree(SoftTreeSurrogate),
    Forest(ForestSurrogate),
}

impl SoftTreeSurrogate {
    fn n_nodes(&self) -> usize {
        (1 << self.depth) - 1
    }

    fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    fn leaf_base(&self) -> usize {
        self.n_nodes() * (self.d + 1)
    }

    fn new(
        d: usize,
        depth: usize,
        temperature: f64,
        standardizer: Standardizer,
        s0: f64,
        seed: u64,
    ) -> SoftTreeSurrogate {
        let nodes = (1 << depth) - 1;
        let leaves = 1usize << depth;
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(nodes * (d + 1) + leaves);
        for m in 0..nodes {
            // small random feature logits: near-uniform mixing to start
            for _ in 0..d {
                params.push(rng.gen_range(-0.1..0.1));
            }
            // threshold at the standard-normal quantile of this node's
            // in-order position within its depth level
            let level = (m + 1).ilog2() as usize;
            let pos = m + 1 - (1 << level);
            let q = (pos as f64 + 1.0) / ((1usize << level) as f64 + 1.0);
            params.push(normal_quantile(q));
        }
        let v0 = logit(s0);
        params.extend(std::iter::repeat(v0).take(leaves));
        SoftTreeSurrogate {
            d,
            depth,
            temperature,
            params,
            standardizer,
        }
    }

    /// Forward pass over standardized rows, filling `tc` and appending
    /// clamped scores.
    fn forward(&self, zx: &Matrix, tc: &mut TreeCache, out: &mut [f64]) {
        let n = zx.nrows();
        let m = self.n_nodes();
        let leaves = self.n_leaves();
        let d = self.d;
        tc.rows = n;
        tc.probs.resize(m * d, 0.0);
        tc.mixed.resize(n * m, 0.0);
        tc.right.resize(n * m, 0.0);
        tc.reach.resize(n * m, 0.0);
        tc.mu.resize(n * (m + leaves), 0.0);
        // data-independent softmax per node
        for node in 0..m {
            let a = &self.params[node * (d + 1)..node * (d + 1) + d];
            let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &av) in tc.probs[node * d..(node + 1) * d].iter_mut().zip(a) {
                *p = (av - amax).exp();
                z += *p;
            }
            tc.probs[node * d..(node + 1) * d]
                .iter_mut()
                .for_each(|p| *p /= z);
        }
        let leaf_base = self.leaf_base();
        for i in 0..n {
            let row = zx.row(i);
            // routing
            for node in 0..m {
                let p = &tc.probs[node * d..(node + 1) * d];
                let mixed: f64 = p.iter().zip(row).map(|(pj, xj)| pj * xj).sum();
                let t = self.params[node * (d + 1) + d];
                tc.mixed[i * m + node] = mixed;
                tc.right[i * m + node] = sigmoid((mixed - t) / self.temperature);
            }
            // reach probabilities, root downward
            tc.reach[i * m] = 1.0;
            for node in 0..m {
                let r = tc.right[i * m + node];
                let reach = tc.reach[i * m + node];
                let (lc, rc) = (2 * node + 1, 2 * node + 2);
                if lc < m {
                    tc.reach[i * m + lc] = reach * (1.0 - r);
                }
                if rc < m {
                    tc.reach[i * m + rc] = reach * r;
                }
            }
            // expected leaf sigmoid per subtree, leaves upward
            let mu = &mut tc.mu[i * (m + leaves)..(i + 1) * (m + leaves)];
            for leaf in 0..leaves {
                mu[m + leaf] = sigmoid(self.params[leaf_base + leaf]);
            }
            for node in (0..m).rev() {
                let r = tc.right[i * m + node];
                let (lc, rc) = (2 * node + 1, 2 * node + 2);
                mu[node] = (1.0 - r) * mu[lc] + r * mu[rc];
            }
            out[i] = mu[0].clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        }
    }

    /// Accumulates the gradient of `sum_i u_i * s_i` into `grad`
    /// (same layout as `params`).
    fn backward(&self, zx: &Matrix, tc: &TreeCache, u: &[f64], grad: &mut [f64]) {
        let n = zx.nrows();
        let m = self.n_nodes();
        let leaves = self.n_leaves();
        let d = self.d;
        let leaf_base = self.leaf_base();
        for i in 0..n {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            let row = zx.row(i);
            let mu = &tc.mu[i * (m + leaves)..(i + 1) * (m + leaves)];
            for node in 0..m {
                let reach = tc.reach[i * m + node];
                if reach == 0.0 {
                    continue;
                }
                let r = tc.right[i * m + node];
                let (lc, rc) = (2 * node + 1, 2 * node + 2);
                // d s / d r at this node
                let ds_dr = reach * (mu[rc] - mu[lc]);
                let c = ui * ds_dr * r * (1.0 - r) / self.temperature;
                if c == 0.0 {
                    continue;
                }
                let off = node * (d + 1);
                let mixed = tc.mixed[i * m + node];
                let p = &tc.probs[node * d..(node + 1) * d];
                for j in 0..d {
                    grad[off + j] += c * p[j] * (row[j] - mixed);
                }
                grad[off + d] -= c;
            }
            for leaf in 0..leaves {
                let v = self.params[leaf_base + leaf];
                let sv = sigmoid(v);
                grad[leaf_base + leaf] += ui * tc.reach_leaf(i, m, leaf) * sv * (1.0 - sv);
            }
        }
    }

}

impl TreeCache {
    /// Reach probability of a leaf, derived from its parent.
    #[inline]
    fn reach_leaf(&self, i: usize, m: usize, leaf: usize) -> f64 {
        // leaf index within the full heap is m + leaf; its parent is
        // (m + leaf - 1) / 2 and it is the right child when the heap index
        // is even
        let heap = m + leaf;
        let parent = (heap - 1) / 2;
        let r = self.right[i * m + parent];
        let reach = self.reach[i * m + parent];
        if heap % 2 == 0 {
            reach * r
        } else {
            reach * (1.0 - r)
        }
    }
}

impl SurrogateModel {
    /// Builds a fresh surrogate whose initial score is `s0` everywhere.
    /// The standardizer is fitted on `x_train`.
    pub fn new(cfg: &SurrogateConfig, x_train: &Matrix, s0: f64, seed: u64) -> Result<SurrogateModel> {
        cfg.validate()?;
        if !(s0 > 0.0 && s0 < 1.0) {
            return Err(Error::parameter("initial score must be in (0, 1)"));
        }
        let d = x_train.ncols();
        let standardizer = Standardizer::fit(x_train);
        Ok(match cfg.kind {
            SurrogateKind::Mlp => {
                let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
                dims.push(d);
                dims.extend_from_slice(&cfg.hidden);
                dims.push(1);
                let mut net = Mlp::new(&dims, seed, true)?;
                let last = net.layers.last_mut().expect("at least one layer");
                last.b[0] = logit(s0);
                SurrogateModel::Mlp(MlpSurrogate { net, standardizer })
            }
            SurrogateKind::SoftTree => SurrogateModel::SoftTree(SoftTreeSurrogate::new(
                d,
                cfg.depth,
                cfg.temperature,
                standardizer,
                s0,
                seed,
            )),
            SurrogateKind::Forest => {
                let trees = (0..cfg.trees)
                    .map(|k| {
                        SoftTreeSurrogate::new(
                            d,
                            cfg.depth,
                            cfg.temperature,
                            standardizer.clone(),
                            s0,
                            derive_seed(seed, k as u64),
                        )
                    })
                    .collect();
                SurrogateModel::Forest(ForestSurrogate { trees })
            }
        })
    }

    /// Number of free parameters.
    pub fn params_len(&self) -> usize {
        match self {
            SurrogateModel::Mlp(s) => s.net.params_len(),
            SurrogateModel::SoftTree(s) => s.params.len(),
            SurrogateModel::Forest(f) => f.trees.iter().map(|t| t.params.len()).sum(),
        }
    }

    /// Flat parameter vector.
    pub fn params(&self) -> Vec<f64> {
        match self {
            SurrogateModel::Mlp(s) => s.net.flatten(),
            SurrogateModel::SoftTree(s) => s.params.clone(),
            SurrogateModel::Forest(f) => {
                let mut out = Vec::with_capacity(self.params_len());
                for t in &f.trees {
                    out.extend_from_slice(&t.params);
                }
                out
            }
        }
    }

    /// Restores parameters from [`params`](SurrogateModel::params) order.
    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params_len() {
            return Err(Error::parameter(format!(
                "parameter vector has length {}, expected {}",
                theta.len(),
                self.params_len()
            )));
        }
        match self {
            SurrogateModel::Mlp(s) => s.net.set_flat(theta)?,
            SurrogateModel::SoftTree(s) => s.params.copy_from_slice(theta),
            SurrogateModel::Forest(f) => {
                let mut off = 0;
                for t in &mut f.trees {
                    let len = t.params.len();
                    t.params.copy_from_slice(&theta[off..off + len]);
                    off += len;
                }
            }
        }
        Ok(())
    }

    /// Mask over the flat parameters marking entries subject to L1
    /// shrinkage: perceptron weight matrices (biases excluded) and tree
    /// feature-mixing logits (thresholds and leaf values excluded).
    pub fn l1_mask(&self) -> Vec<bool> {
        fn tree_mask(t: &SoftTreeSurrogate, mask: &mut Vec<bool>) {
            for _ in 0..t.n_nodes() {
                mask.extend(std::iter::repeat(true).take(t.d));
                mask.push(false);
            }
            mask.extend(std::iter::repeat(false).take(t.n_leaves()));
        }
        match self {
            SurrogateModel::Mlp(s) => s.net.weight_mask(),
            SurrogateModel::SoftTree(s) => {
                let mut mask = Vec::with_capacity(s.params.len());
                tree_mask(s, &mut mask);
                mask
            }
            SurrogateModel::Forest(f) => {
                let mut mask = Vec::with_capacity(self.params_len());
                for t in &f.trees {
                    tree_mask(t, &mut mask);
                }
                mask
            }
        }
    }

    /// Membership scores in `[SCORE_CLAMP, 1 - SCORE_CLAMP]` for each row.
    /// `cache` is reused across calls; the returned slice lives in it.
    pub fn scores<'c>(&self, x: &Matrix, cache: &'c mut SurrogateCache) -> Result<&'c [f64]> {
        let n = x.nrows();
        self.check_width(x)?;
        cache.zx = self.standardizer().apply(x);
        cache.raw.resize(n, 0.0);
        match self {
            SurrogateModel::Mlp(s) => {
                let out = s.net.forward_batch(&cache.zx, &mut cache.mlp);
                for i in 0..n {
                    cache.raw[i] = sigmoid(out.get(i, 0));
                }
                // clamp after the fact; raw keeps the sigmoid value for the
                // backward pass
                for v in cache.raw.iter_mut() {
                    *v = v.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
                }
            }
            SurrogateModel::SoftTree(s) => {
                cache.trees.resize_with(1, TreeCache::default);
                s.forward(&cache.zx, &mut cache.trees[0], &mut cache.raw);
            }
            SurrogateModel::Forest(f) => {
                cache.trees.resize_with(f.trees.len(), TreeCache::default);
                let mut acc = vec![0.0; n];
                let mut one = vec![0.0; n];
                for (t, tc) in f.trees.iter().zip(cache.trees.iter_mut()) {
                    t.forward(&cache.zx, tc, &mut one);
                    for (a, v) in acc.iter_mut().zip(&one) {
                        *a += v;
                    }
                }
                let k = f.trees.len() as f64;
                for (r, a) in cache.raw.iter_mut().zip(&acc) {
                    *r = (a / k).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
                }
            }
        }
        Ok(&cache.raw)
    }

    /// Accumulates the gradient of `sum_i u_i * s_i(theta)` into `grad`
    /// (flat, [`params`](SurrogateModel::params) order). Must be called with
    /// the cache produced by the immediately preceding
    /// [`scores`](SurrogateModel::scores) call on the same `x`.
    pub fn backward_weighted(
        &self,
        x: &Matrix,
        cache: &SurrogateCache,
        u: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let n = x.nrows();
        if u.len() != n || grad.len() != self.params_len() || cache.raw.len() != n {
            return Err(Error::parameter(
                "weighted backward pass needs matching rows, weights, and gradient length"
                    .to_string(),
            ));
        }
        match self {
            SurrogateModel::Mlp(s) => {
                // chain through the sigmoid head: d s / d z = s (1 - s)
                let dout: Vec<f64> = (0..n)
                    .map(|i| {
                        let sv = cache.raw[i];
                        u[i] * sv * (1.0 - sv)
                    })
                    .collect();
                s.net.backward_batch(&cache.zx, &cache.mlp, &dout, grad);
            }
            SurrogateModel::SoftTree(s) => {
                s.backward(&cache.zx, &cache.trees[0], u, grad);
            }
            SurrogateModel::Forest(f) => {
                let k = f.trees.len() as f64;
                let us: Vec<f64> = u.iter().map(|v| v / k).collect();
                let mut off = 0;
                for (t, tc) in f.trees.iter().zip(&cache.trees) {
                    t.backward(&cache.zx, tc, &us, &mut grad[off..off + t.params.len()]);
                    off += t.params.len();
                }
            }
        }
        Ok(())
    }

    /// In-place descent step over the flat gradient.
    pub fn apply_step(&mut self, grad: &[f64], lr: f64) {
        match self {
            SurrogateModel::Mlp(s) => s.net.apply_step(grad, lr),
            SurrogateModel::SoftTree(s) => {
                for (p, g) in s.params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            SurrogateModel::Forest(f) => {
                let mut off = 0;
                for t in &mut f.trees {
                    let len = t.params.len();
                    for (p, g) in t.params.iter_mut().zip(&grad[off..off + len]) {
                        *p -= lr * g;
                    }
                    off += len;
                }
            }
        }
    }

    /// Hard subgroup membership: scores strictly above one half.
    pub fn select(&self, x: &Matrix, cache: &mut SurrogateCache) -> Result<Vec<bool>> {
        Ok(self.scores(x, cache)?.iter().map(|&s| s > 0.5).collect())
    }

    /// Walks `(parameter value, l1-mask flag)` pairs in flat order without
    /// materializing the parameter vector.
    fn for_each_param(&self, mut visit: impl FnMut(usize, f64, bool)) {
        fn walk_tree(t: &SoftTreeSurrogate, idx: &mut usize, visit: &mut impl FnMut(usize, f64, bool)) {
            let d = t.d;
            let nodes = t.n_nodes();
            for (local, &p) in t.params.iter().enumerate() {
                let masked = if local < nodes * (d + 1) {
                    local % (d + 1) != d
                } else {
                    false
                };
                visit(*idx, p, masked);
                *idx += 1;
            }
        }
        let mut idx = 0;
        match self {
            SurrogateModel::Mlp(s) => {
                for l in &s.net.layers {
                    for &w in &l.w {
                        visit(idx, w, true);
                        idx += 1;
                    }
                    for &b in &l.b {
                        visit(idx, b, false);
                        idx += 1;
                    }
                }
            }
            SurrogateModel::SoftTree(s) => walk_tree(s, &mut idx, &mut visit),
            SurrogateModel::Forest(f) => {
                for t in &f.trees {
                    walk_tree(t, &mut idx, &mut visit);
                }
            }
        }
    }

    /// Sum of absolute values over L1-penalized parameters.
    pub fn l1_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each_param(|_, p, masked| {
            if masked {
                acc += p.abs();
            }
        });
        acc
    }

    /// Adds `coef * sign(theta_j)` to `grad[j]` for every L1-penalized
    /// parameter; the subgradient at exactly zero is zero.
    pub fn add_l1_subgradient(&self, coef: f64, grad: &mut [f64]) {
        if coef == 0.0 {
            return;
        }
        self.for_each_param(|j, p, masked| {
            if masked && p != 0.0 {
                grad[j] += coef * p.signum();
            }
        });
    }

    fn standardizer(&self) -> &Standardizer {
        match self {
            SurrogateModel::Mlp(s) => &s.standardizer,
            SurrogateModel::SoftTree(s) => &s.standardizer,
            SurrogateModel::Forest(f) => &f.trees[0].standardizer,
        }
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        let d = self.standardizer().mean.len();
        if x.ncols() != d {
            return Err(Error::parameter(format!(
                "surrogate expects {} features, got {}",
                d,
                x.ncols()
            )));
        }
        Ok(())
    }
}

/// Inverse standard-normal CDF (Acklam's rational approximation, absolute
/// error below 1.2e-9 on (0, 1)).
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_x(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn fd_directional(model: &mut SurrogateModel, x: &Matrix, u: &[f64], seed: u64) -> (f64, f64) {
        // analytic directional derivative vs central finite difference of
        // L(theta) = sum_i u_i s_i(theta) along a random direction
        let mut cache = SurrogateCache::default();
        model.scores(x, &mut cache).unwrap();
        let mut grad = vec![0.0; model.params_len()];
        model.backward_weighted(x, &cache, u, &mut grad).unwrap();

        let mut rng = rng_from_seed(seed);
        let dir: Vec<f64> = (0..model.params_len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();

        let theta = model.params();
        let h = 1e-5;
        let eval = |model: &mut SurrogateModel, t: &[f64]| -> f64 {
            model.set_params(t).unwrap();
            let mut c = SurrogateCache::default();
            let s = model.scores(x, &mut c).unwrap();
            s.iter().zip(u).map(|(si, ui)| si * ui).sum()
        };
        let plus: Vec<f64> = theta.iter().zip(&dir).map(|(t, v)| t + h * v).collect();
        let minus: Vec<f64> = theta.iter().zip(&dir).map(|(t, v)| t - h * v).collect();
        let fd = (eval(model, &plus) - eval(model, &minus)) / (2.0 * h);
        model.set_params(&theta).unwrap();
        (analytic, fd)
    }

    fn perturb(model: &mut SurrogateModel, seed: u64, scale: f64) {
        let mut rng = rng_from_seed(seed);
        let theta: Vec<f64> = model
            .params()
            .iter()
            .map(|t| t + rng.gen_range(-scale..scale))
            .collect();
        model.set_params(&theta).unwrap();
    }

    #[test]
    fn initial_scores_are_constant_for_all_families() {
        let x = toy_x(40, 6, 9);
        for kind in [SurrogateKind::Mlp, SurrogateKind::SoftTree, SurrogateKind::Forest] {
            let cfg = SurrogateConfig {
                kind,
                hidden: vec![8, 8],
                ..SurrogateConfig::default()
            };
            let model = SurrogateModel::new(&cfg, &x, 0.75, 3).unwrap();
            let mut cache = SurrogateCache::default();
            let s = model.scores(&x, &mut cache).unwrap();
            for &v in s {
                assert!((v - 0.75).abs() < 1e-12, "initial score {}", v);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = toy_x(25, 5, 11);
        let mut rng = rng_from_seed(13);
        let u: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (kind, tag) in [
            (SurrogateKind::Mlp, "mlp"),
            (SurrogateKind::SoftTree, "soft_tree"),
            (SurrogateKind::Forest, "forest"),
        ] {
            let cfg = SurrogateConfig {
                kind,
                hidden: vec![8, 8],
                depth: 3,
                trees: 3,
                ..SurrogateConfig::default()
            };
            let mut model = SurrogateModel::new(&cfg, &x, 0.6, 21).unwrap();
            perturb(&mut model, 31, 0.4);
            for rep in 0..5 {
                let (analytic, fd) = fd_directional(&mut model, &x, &u, 100 + rep);
                let denom = analytic.abs().max(fd.abs()).max(1e-10);
                assert!(
                    (analytic - fd).abs() / denom < 1e-5,
                    "{}: analytic {} vs fd {}",
                    tag,
                    analytic,
                    fd
                );
            }
        }
    }

    #[test]
    fn params_round_trip_and_step() {
        let x = toy_x(10, 4, 17);
        for kind in [SurrogateKind::Mlp, SurrogateKind::SoftTree, SurrogateKind::Forest] {
            let cfg = SurrogateConfig {
                kind,
                hidden: vec![6],
                depth: 2,
                trees: 2,
                ..SurrogateConfig::default()
            };
            let mut model = SurrogateModel::new(&cfg, &x, 0.5, 5).unwrap();
            let theta = model.params();
            assert_eq!(theta.len(), model.params_len());
            let grad: Vec<f64> = (0..theta.len()).map(|i| (i % 3) as f64).collect();
            model.apply_step(&grad, 0.1);
            let after = model.params();
            for ((t, g), a) in theta.iter().zip(&grad).zip(&after) {
                assert!((a - (t - 0.1 * g)).abs() < 1e-12);
            }
            model.set_params(&theta).unwrap();
            assert_eq!(model.params(), theta);
        }
    }

    #[test]
    fn l1_mask_has_expected_structure() {
        let x = toy_x(10, 4, 19);
        let cfg = SurrogateConfig {
            kind: SurrogateKind::SoftTree,
            depth: 2,
            ..SurrogateConfig::default()
        };
        let model = SurrogateModel::new(&cfg, &x, 0.5, 5).unwrap();
        let mask = model.l1_mask();
        assert_eq!(mask.len(), model.params_len());
        // 3 nodes x (4 logits + threshold) + 4 leaves
        let true_count = mask.iter().filter(|&&b| b).count();
        assert_eq!(true_count, 3 * 4);
        // thresholds and leaves excluded
        assert!(!mask[4]);
        assert!(!mask[mask.len() - 1]);
    }

    #[test]
    fn selection_thresholds_scores_at_one_half() {
        let x = toy_x(30, 3, 23);
        let cfg = SurrogateConfig {
            kind: SurrogateKind::Mlp,
            hidden: vec![5],
            ..SurrogateConfig::default()
        };
        let mut model = SurrogateModel::new(&cfg, &x, 0.5, 7).unwrap();
        perturb(&mut model, 41, 0.8);
        let mut cache = SurrogateCache::default();
        let s: Vec<f64> = model.scores(&x, &mut cache).unwrap().to_vec();
        let sel = model.select(&x, &mut cache).unwrap();
        for (si, seli) in s.iter().zip(&sel) {
            assert_eq!(*seli, *si > 0.5);
        }
    }

    #[test]
    fn scores_stay_clamped() {
        let x = toy_x(20, 3, 29);
        let cfg = SurrogateConfig {
            kind: SurrogateKind::Mlp,
            hidden: vec![4],
            ..SurrogateConfig::default()
        };
        let mut model = SurrogateModel::new(&cfg, &x, 0.5, 7).unwrap();
        perturb(&mut model, 43, 50.0);
        let mut cache = SurrogateCache::default();
        let s = model.scores(&x, &mut cache).unwrap();
        assert!(s
            .iter()
            .all(|&v| (SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&v)));
    }

    #[test]
    fn normal_quantile_matches_known_values() {
        assert!((normal_quantile(0.5)).abs() < 1e-9);
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-5);
        assert!((normal_quantile(0.25) + 0.674490).abs() < 1e-5);
    }
}
