//! Nuisance models: a logistic-regression propensity model, per-arm neural
//! outcome regressors, and the weighted covariate-balance diagnostic.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::{Mlp, MlpCache};
use crate::seeding::{derive_seed, rng_from_seed};
use rand::seq::SliceRandom;

/// Propensity predictions are clipped into `[E_CLIP, 1 - E_CLIP]` so inverse
/// weights stay finite.
pub const E_CLIP: f64 = 1e-3;

/// A feature is flagged as unbalanced when its weighted standardized mean
/// difference exceeds this threshold.
pub const SMD_THRESHOLD: f64 = 0.2;

/// Per-feature affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits per-column mean and population standard deviation; zero-variance
    /// columns get scale 1 so they pass through unchanged.
    pub fn fit(x: &Matrix) -> Standardizer {
        let (n, d) = (x.nrows(), x.ncols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    /// Applies the transform to a whole matrix.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.nrows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
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

/// Logistic-regression propensity model on standardized features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    /// Whether gradient descent reached the tolerance before the iteration cap.
    pub converged: bool,
    /// Iterations actually performed.
    pub iterations: usize,
}

/// Fits the propensity model by full-batch gradient descent on the
/// L2-penalized mean Bernoulli log-likelihood (intercept unpenalized).
///
/// Descent uses the fixed step `1 / ((d + 1) / 4 + l2)`, a bound on the
/// curvature of the standardized-feature objective; it stops when the
/// gradient max-norm drops below `tol`.
pub fn fit_propensity(ds: &Dataset, l2: f64, max_iters: usize, tol: f64) -> Result<PropensityModel> {
    if l2 < 0.0 {
        return Err(Error::parameter("l2 must be >= 0"));
    }
    if max_iters == 0 || tol <= 0.0 {
        return Err(Error::parameter("max_iters must be >= 1 and tol > 0"));
    }
    let treated = ds.n_treated();
    if treated == 0 || treated == ds.n() {
        return Err(Error::data(
            "propensity fit needs both treatment arms non-empty".to_string(),
        ));
    }
    let standardizer = Standardizer::fit(&ds.features);
    let xs = standardizer.apply(&ds.features);
    let (n, d) = (xs.nrows(), xs.ncols());
    let nf = n as f64;

    let mut w = vec![0.0; d];
    let mut bias = 0.0;
    let step = 1.0 / ((d as f64 + 1.0) / 4.0 + l2);
    let mut grad_w = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            let row = xs.row(i);
            let p = sigmoid(dot(&w, row) + bias);
            let r = p - f64::from(ds.treatment[i]);
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += r * v;
            }
            grad_b += r;
        }
        let mut max_abs = grad_b.abs() / nf;
        for (g, wv) in grad_w.iter_mut().zip(&w) {
            *g = *g / nf + l2 * wv;
            max_abs = max_abs.max(g.abs());
        }
        grad_b /= nf;
        if max_abs < tol {
            converged = true;
            break;
        }
        for (wv, g) in w.iter_mut().zip(&grad_w) {
            *wv -= step * g;
        }
        bias -= step * grad_b;
    }
    Ok(PropensityModel {
        weights: w,
        bias,
        standardizer,
        converged,
        iterations,
    })
}

impl PropensityModel {
    /// Predicted treatment probabilities, clipped into `[E_CLIP, 1 - E_CLIP]`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::parameter(format!(
                "propensity model expects {} features, got {}",
                self.weights.len(),
                x.ncols()
            )));
        }
        let xs = self.standardizer.apply(x);
        Ok((0..xs.nrows())
            .map(|i| sigmoid(dot(&self.weights, xs.row(i)) + self.bias).clamp(E_CLIP, 1.0 - E_CLIP))
            .collect())
    }
}

/// Per-arm outcome regressors sharing one feature standardizer.
///
/// Continuous outcomes are internally standardized for training stability and
/// un-standardized at prediction; binary outcomes use a logistic output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub arm0: Mlp,
    pub arm1: Mlp,
    pub standardizer: Standardizer,
    pub y_mean: f64,
    pub y_scale: f64,
    pub binary: bool,
}

/// Training batch size for the outcome networks.
const OUTCOME_BATCH: usize = 128;

/// Fits one network per treatment arm (`d -> hidden -> hidden -> 1`,
/// rectifier hidden layers) by seeded mini-batch gradient descent.
///
/// Squared-error loss for continuous outcomes, logistic loss when every
/// outcome is exactly 0 or 1.
pub fn fit_outcome(
    ds: &Dataset,
    hidden_size: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<OutcomeModel> {
    if hidden_size == 0 || epochs == 0 || lr <= 0.0 {
        return Err(Error::parameter(
            "hidden_size and epochs must be >= 1 and lr > 0".to_string(),
        ));
    }
    let treated = ds.n_treated();
    if treated == 0 || treated == ds.n() {
        return Err(Error::data(
            "outcome fit needs both treatment arms non-empty".to_string(),
        ));
    }
    let binary = ds.outcome.iter().all(|&y| y == 0.0 || y == 1.0);
    let standardizer = Standardizer::fit(&ds.features);
    let xs = standardizer.apply(&ds.features);

    let (y_mean, y_scale) = if binary {
        (0.0, 1.0)
    } else {
        let m = ds.outcome.iter().sum::<f64>() / ds.n() as f64;
        let v = ds.outcome.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / ds.n() as f64;
        let s = v.sqrt();
        (m, if s > 0.0 { s } else { 1.0 })
    };

    let fit_arm = |arm: u8, arm_seed: u64| -> Result<Mlp> {
        let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.treatment[i] == arm).collect();
        let x_arm = xs.select_rows(&rows);
        let y_arm: Vec<f64> = rows
            .iter()
            .map(|&i| (ds.outcome[i] - y_mean) / y_scale)
            .collect();
        let mut net = Mlp::new(&[ds.d(), hidden_size, hidden_size, 1], arm_seed, false)?;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = rng_from_seed(derive_seed(arm_seed, 1));
        let mut grad = vec![0.0; net.params_len()];
        let mut cache = MlpCache::default();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(OUTCOME_BATCH) {
                let xb = x_arm.select_rows(chunk);
                let out = net.forward_batch(&xb, &mut cache);
                let bf = chunk.len() as f64;
                let dout: Vec<f64> = chunk
                    .iter()
                    .enumerate()
                    .map(|(k, &ri)| {
                        let z = out.get(k, 0);
                        let pred = if binary { sigmoid(z) } else { z };
                        (pred - y_arm[ri]) / bf
                    })
                    .collect();
                grad.iter_mut().for_each(|g| *g = 0.0);
                net.backward_batch(&xb, &cache, &dout, &mut grad);
                net.apply_step(&grad, lr);
            }
        }
        Ok(net)
    };

    let arm0 = fit_arm(0, derive_seed(seed, 10))?;
    let arm1 = fit_arm(1, derive_seed(seed, 11))?;
    Ok(OutcomeModel {
        arm0,
        arm1,
        standardizer,
        y_mean,
        y_scale,
        binary,
    })
}

impl OutcomeModel {
    /// Predicted potential outcomes `(mu0_hat, mu1_hat)` for each row.
    pub fn predict(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.ncols() != self.standardizer.mean.len() {
            return Err(Error::parameter(format!(
                "outcome model expects {} features, got {}",
                self.standardizer.mean.len(),
                x.ncols()
            )));
        }
        let xs = self.standardizer.apply(x);
        let mut mu0 = Vec::with_capacity(xs.nrows());
        let mut mu1 = Vec::with_capacity(xs.nrows());
        let mut cache = MlpCache::default();
        let out0 = self.arm0.forward_batch(&xs, &mut cache).clone();
        let out1 = self.arm1.forward_batch(&xs, &mut cache).clone();
        for i in 0..xs.nrows() {
            let (z0, z1) = (out0.get(i, 0), out1.get(i, 0));
            if self.binary {
                mu0.push(sigmoid(z0));
                mu1.push(sigmoid(z1));
            } else {
                mu0.push(z0 * self.y_scale + self.y_mean);
                mu1.push(z1 * self.y_scale + self.y_mean);
            }
        }
        Ok((mu0, mu1))
    }
}

/// Per-sample nuisance estimates consumed by the pseudo-outcome builders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub e_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
}

/// Predicts all nuisance quantities for a feature matrix.
pub fn predict_nuisance(
    propensity: &PropensityModel,
    outcome: &OutcomeModel,
    x: &Matrix,
) -> Result<NuisanceEstimates> {
    let e_hat = propensity.predict(x)?;
    let (mu0_hat, mu1_hat) = outcome.predict(x)?;
    Ok(NuisanceEstimates {
        e_hat,
        mu0_hat,
        mu1_hat,
    })
}

/// Weighted standardized mean differences per feature over a row selection,
/// using inverse-propensity frequency weights
/// `w_i = a_i / e_i + (1 - a_i) / (1 - e_i)`.
///
/// Returns the number of features with SMD above [`SMD_THRESHOLD`] together
/// with the per-feature values. Features with zero variance in both arms
/// (including the cases where a whole arm is missing from the selection)
/// define SMD = 0.
pub fn count_unbalanced(
    ds: &Dataset,
    e_hat: &[f64],
    selection: &[bool],
) -> Result<(usize, Vec<f64>)> {
    if e_hat.len() != ds.n() || selection.len() != ds.n() {
        return Err(Error::parameter(
            "e_hat and selection must match the dataset length".to_string(),
        ));
    }
    let d = ds.d();
    let mut smd = vec![0.0; d];
    // accumulate weighted moments per arm
    let mut sw = [0.0f64; 2];
    let mut sums = vec![[0.0f64; 2]; d];
    let mut sqs = vec![[0.0f64; 2]; d];
    for i in 0..ds.n() {
        if !selection[i] {
            continue;
        }
        let a = ds.treatment[i] as usize;
        let w = if a == 1 {
            1.0 / e_hat[i]
        } else {
            1.0 / (1.0 - e_hat[i])
        };
        sw[a] += w;
        for (j, &v) in ds.features.row(i).iter().enumerate() {
            sums[j][a] += w * v;
            sqs[j][a] += w * v * v;
        }
    }
    let mut count = 0;
    for j in 0..d {
        if sw[0] == 0.0 || sw[1] == 0.0 {
            smd[j] = 0.0;
            continue;
        }
        let m0 = sums[j][0] / sw[0];
        let m1 = sums[j][1] / sw[1];
        let v0 = (sqs[j][0] / sw[0] - m0 * m0).max(0.0);
        let v1 = (sqs[j][1] / sw[1] - m1 * m1).max(0.0);
        let pooled = ((v0 + v1) / 2.0).sqrt();
        smd[j] = if pooled > 0.0 {
            (m1 - m0).abs() / pooled
        } else {
            0.0
        };
        if smd[j] > SMD_THRESHOLD {
            count += 1;
        }
    }
    Ok((count, smd))
}
