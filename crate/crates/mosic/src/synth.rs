//! Synthetic data generation for the three benchmark scenarios: a
//! continuous-effect process with controllable treatment imbalance, a
//! binary-subgroup variant with a known positive-effect subpopulation, and a
//! null variant with zero effect everywhere.
//!
//! Covariates are equicorrelated Gaussians; treatment follows a logistic
//! model in the covariates; potential outcomes share a single noise draw per
//! sample so the per-sample true effect is exactly noiseless.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AuxColumns, Dataset};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::seeding::{derive_seed, rng_from_seed};

/// Which treatment-effect structure the generator produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpVariant {
    /// Linear effect `tau(x) = x . beta_tau`.
    Continuous,
    /// Step effect `tau(x) = sum_j beta_tau_j * 1(x_j > 0.05)` with the true
    /// subgroup defined by `tau(x) > 0`.
    BinarySubgroup,
    /// Zero effect for every sample (`beta_tau` ignored).
    Null,
}

/// Parameters of the synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    /// Covariate dimension.
    pub p: usize,
    /// Marginal covariate standard deviation.
    pub sigma_x: f64,
    /// Outcome noise standard deviation.
    pub sigma_y: f64,
    /// Pairwise covariate correlation (equicorrelation), in `[0, 1)`.
    pub rho: f64,
    /// Baseline-outcome weights applied to `sin(10 x) + 5 x^2` per coordinate.
    pub beta1: Vec<f64>,
    /// Effect weights (per variant semantics above).
    pub beta_tau: Vec<f64>,
    /// Treatment-imbalance scale; 0 gives a randomized trial (propensity 0.5).
    pub omega_tilde: f64,
    /// Pre-scale treatment weights; the logistic model uses
    /// `omega_tilde * omega_base`.
    pub omega_base: Vec<f64>,
    /// Sample count.
    pub n: usize,
    /// Effect structure.
    pub variant: DgpVariant,
}

impl Default for DgpConfig {
    /// Benchmark defaults: ten equicorrelated covariates (sd 0.1, correlation
    /// 0.3), a nonlinear baseline driven by the fifth covariate, a linear
    /// effect on the first four, and a strongly confounded treatment model.
    fn default() -> Self {
        DgpConfig {
            p: 10,
            sigma_x: 0.1,
            sigma_y: 0.1,
            rho: 0.3,
            beta1: vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            beta_tau: vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            omega_tilde: 5.0,
            omega_base: vec![0.0, -1.0, -1.0, 1.0, 1.0, -2.0, 0.0, 0.0, 0.0, 0.0],
            n: 5000,
            variant: DgpVariant::Continuous,
        }
    }
}

impl DgpConfig {
    /// Checks internal consistency of the configuration.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::parameter("p must be >= 1"));
        }
        if self.n == 0 {
            return Err(Error::parameter("n must be >= 1"));
        }
        if self.sigma_x < 0.0 || self.sigma_y < 0.0 {
            return Err(Error::parameter("sigma_x and sigma_y must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::parameter(format!(
                "rho must lie in [0,1), got {}",
                self.rho
            )));
        }
        if self.omega_tilde < 0.0 {
            return Err(Error::parameter("omega_tilde must be >= 0"));
        }
        for (name, v) in [
            ("beta1", &self.beta1),
            ("beta_tau", &self.beta_tau),
            ("omega_base", &self.omega_base),
        ] {
            if v.len() != self.p {
                return Err(Error::parameter(format!(
                    "{} has length {}, expected p={}",
                    name,
                    v.len(),
                    self.p
                )));
            }
        }
        Ok(())
    }

    /// Treatment-model weights `omega_tilde * omega_base`.
    pub fn omega(&self) -> Vec<f64> {
        self.omega_base.iter().map(|w| w * self.omega_tilde).collect()
    }

    /// Population standard deviation of the continuous-variant effect,
    /// `sqrt(beta_tau' Sigma beta_tau)` for the equicorrelated covariance.
    pub fn effect_sd(&self) -> f64 {
        let sum_sq: f64 = self.beta_tau.iter().map(|b| b * b).sum();
        let sum: f64 = self.beta_tau.iter().sum();
        (self.sigma_x * self.sigma_x * ((1.0 - self.rho) * sum_sq + self.rho * sum * sum)).sqrt()
    }
}

/// Lower-triangular Cholesky factor of a symmetric PSD matrix (row-major).
/// Zero pivots (e.g. a zero covariance) produce zero columns instead of
/// failing, so degenerate scales stay usable.
fn cholesky(a: &Matrix) -> Result<Matrix> {
    let p = a.nrows();
    let mut l = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s < -1e-12 {
                    return Err(Error::numerical(
                        "covariance matrix is not positive semi-definite".to_string(),
                    ));
                }
                l.set(i, j, s.max(0.0).sqrt());
            } else {
                let pivot = l.get(j, j);
                l.set(i, j, if pivot > 0.0 { s / pivot } else { 0.0 });
            }
        }
    }
    Ok(l)
}

/// Draws `n` rows from the equicorrelated Gaussian covariate model via the
/// Cholesky factor of `sigma_x^2 [(1-rho) I + rho 11']`.
pub fn sample_covariates(cfg: &DgpConfig, seed: u64) -> Result<Matrix> {
    cfg.validate()?;
    let p = cfg.p;
    let mut cov = Matrix::zeros(p, p);
    let s2 = cfg.sigma_x * cfg.sigma_x;
    for i in 0..p {
        for j in 0..p {
            cov.set(i, j, if i == j { s2 } else { s2 * cfg.rho });
        }
    }
    let l = cholesky(&cov)?;
    let mut rng = rng_from_seed(seed);
    let mut x = Matrix::zeros(cfg.n, p);
    let mut z = vec![0.0f64; p];
    for i in 0..cfg.n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        for j in 0..p {
            x.set(i, j, dot(&l.row(j)[..=j], &z[..=j]));
        }
    }
    Ok(x)
}

/// Assigns treatment from the logistic model `P(A=1|x) = sigmoid(x . omega)`.
/// Returns the assignment and the true propensity per sample.
pub fn assign_treatment(x: &Matrix, omega: &[f64], seed: u64) -> Result<(Vec<u8>, Vec<f64>)> {
    if omega.len() != x.ncols() {
        return Err(Error::parameter(format!(
            "omega has length {}, expected {}",
            omega.len(),
            x.ncols()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let n = x.nrows();
    let mut a = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    for i in 0..n {
        let ei = sigmoid(dot(x.row(i), omega));
        let u: f64 = rng.gen();
        a.push(u8::from(u < ei));
        e.push(ei);
    }
    Ok((a, e))
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

/// Baseline (control) mean outcome `sum_j beta1_j (sin(10 x_j) + 5 x_j^2)`.
pub(crate) fn baseline(x: &[f64], beta1: &[f64]) -> f64 {
    x.iter()
        .zip(beta1)
        .map(|(xj, b)| b * ((10.0 * xj).sin() + 5.0 * xj * xj))
        .sum()
}

/// Per-sample true effect under the configured variant.
fn true_effect(x: &[f64], cfg: &DgpConfig) -> f64 {
    match cfg.variant {
        DgpVariant::Continuous => dot(x, &cfg.beta_tau),
        DgpVariant::BinarySubgroup => x
            .iter()
            .zip(&cfg.beta_tau)
            .map(|(xj, b)| if *xj > 0.05 { *b } else { 0.0 })
            .sum(),
        DgpVariant::Null => 0.0,
    }
}

/// Generated outcomes plus ground truth.
#[derive(Debug, Clone)]
pub struct Outcomes {
    /// Observed outcome `Y = A Y(1) + (1-A) Y(0)`.
    pub y: Vec<f64>,
    /// Noiseless per-sample effect `Y(1) - Y(0)`.
    pub true_ite: Vec<f64>,
    /// `1(true_ite > 0)`, present only for the binary-subgroup variant.
    pub true_label: Option<Vec<f64>>,
}

/// Simulates potential outcomes with one shared noise draw per sample:
/// `Y(0) = baseline(x) + eps`, `Y(1) = Y(0) + tau(x)`.
pub fn gen_outcomes(x: &Matrix, treatment: &[u8], cfg: &DgpConfig, seed: u64) -> Result<Outcomes> {
    cfg.validate()?;
    if treatment.len() != x.nrows() {
        return Err(Error::parameter(format!(
            "treatment has length {}, expected {}",
            treatment.len(),
            x.nrows()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let n = x.nrows();
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let eps: f64 = {
            let z: f64 = rng.sample(StandardNormal);
            z * cfg.sigma_y
        };
        let t = true_effect(row, cfg);
        let y0 = baseline(row, &cfg.beta1) + eps;
        y.push(if treatment[i] == 1 { y0 + t } else { y0 });
        tau.push(t);
    }
    let true_label = match cfg.variant {
        DgpVariant::BinarySubgroup => {
            Some(tau.iter().map(|&t| f64::from(t > 0.0)).collect())
        }
        _ => None,
    };
    Ok(Outcomes {
        y,
        true_ite: tau,
        true_label,
    })
}

/// Computes the constraint auxiliary columns from covariates on unit-variance
/// scale: `risk = sigmoid(-(10 x_10 + 1))`, `cost = (x_3 + 5) / 5`,
/// `sensitive = 1(x_3 > 0.5)` (1-based coordinate indices).
///
/// The formulas reference standardized coordinates; [`generate`] passes
/// `x / sigma_x` here. Applying them to raw small-scale covariates would
/// make the downstream risk and fairness caps unsatisfiable for any
/// half-population subgroup.
pub fn attach_constraint_aux(x: &Matrix) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if x.ncols() < 10 {
        return Err(Error::parameter(format!(
            "constraint aux columns need p >= 10, got {}",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let mut risk = Vec::with_capacity(n);
    let mut cost = Vec::with_capacity(n);
    let mut sens = Vec::with_capacity(n);
    for i in 0..n {
        let x3 = x.get(i, 2);
        let x10 = x.get(i, 9);
        risk.push(1.0 / (1.0 + (10.0 * x10 + 1.0).exp()));
        cost.push((x3 + 5.0) / 5.0);
        sens.push(f64::from(x3 > 0.5));
    }
    Ok((risk, cost, sens))
}

/// Generates a complete synthetic dataset: covariates, treatment, outcomes,
/// ground-truth effect columns, and (when `p >= 10`) the risk/cost/sensitive
/// constraint columns.
///
/// Stage seeds are derived from `seed`, so a `(config, seed)` pair fully
/// determines every byte of the dataset.
pub fn generate(cfg: &DgpConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let x = sample_covariates(cfg, derive_seed(seed, 0))?;
    let (a, _e_true) = assign_treatment(&x, &cfg.omega(), derive_seed(seed, 1))?;
    let out = gen_outcomes(&x, &a, cfg, derive_seed(seed, 2))?;

    let mut aux = AuxColumns {
        true_ite: Some(out.true_ite),
        true_label: out.true_label,
        ..AuxColumns::default()
    };
    if cfg.p >= 10 {
        // Standardize to unit marginal variance before applying the aux
        // formulas; see attach_constraint_aux.
        let xs = if cfg.sigma_x > 0.0 {
            let mut m = x.clone();
            for i in 0..m.nrows() {
                for v in m.row_mut(i) {
                    *v /= cfg.sigma_x;
                }
            }
            m
        } else {
            x.clone()
        };
        let (risk, cost, sens) = attach_constraint_aux(&xs)?;
        aux.risk = Some(risk);
        aux.cost = Some(cost);
        aux.sensitive = Some(sens);
    }
    Dataset::new(x, a, out.y, aux)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize, variant: DgpVariant) -> DgpConfig {
        DgpConfig {
            n,
            variant,
            ..DgpConfig::default()
        }
    }

    #[test]
    fn validate_rejects_mismatched_vectors() {
        let mut cfg = DgpConfig::default();
        cfg.beta1 = vec![1.0; 3];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn baseline_vanishes_when_active_coordinate_is_zero() {
        let cfg = DgpConfig::default();
        let mut x = vec![0.3; 10];
        x[4] = 0.0; // beta1 only weights the fifth coordinate
        assert!(baseline(&x, &cfg.beta1).abs() < 1e-15);
    }

    #[test]
    fn continuous_effect_is_half_the_first_four_coordinates() {
        let cfg = DgpConfig::default();
        let x = vec![0.1, 0.2, -0.3, 0.4, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0];
        let t = true_effect(&x, &cfg);
        assert!((t - 0.5 * (0.1 + 0.2 - 0.3 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn null_variant_has_identically_zero_effect() {
        let cfg = small_cfg(500, DgpVariant::Null);
        let ds = generate(&cfg, 9).unwrap();
        assert!(ds.aux.true_ite.unwrap().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn shared_noise_makes_true_ite_independent_of_noise_seed() {
        let cfg = small_cfg(200, DgpVariant::Continuous);
        let x = sample_covariates(&cfg, 1).unwrap();
        let (a, _) = assign_treatment(&x, &cfg.omega(), 2).unwrap();
        let o1 = gen_outcomes(&x, &a, &cfg, 100).unwrap();
        let o2 = gen_outcomes(&x, &a, &cfg, 200).unwrap();
        assert_eq!(o1.true_ite, o2.true_ite);
        assert_ne!(o1.y, o2.y);
    }

    #[test]
    fn zero_imbalance_gives_uniform_propensity() {
        let cfg = DgpConfig {
            omega_tilde: 0.0,
            n: 100,
            ..DgpConfig::default()
        };
        let x = sample_covariates(&cfg, 3).unwrap();
        let (_, e) = assign_treatment(&x, &cfg.omega(), 4).unwrap();
        assert!(e.iter().all(|&ei| (ei - 0.5).abs() < 1e-15));
    }

    #[test]
    fn covariate_moments_match_the_equicorrelation_model() {
        let cfg = small_cfg(100_000, DgpVariant::Continuous);
        let x = sample_covariates(&cfg, 11).unwrap();
        let n = x.nrows() as f64;
        let col0 = x.column(0);
        let col1 = x.column(1);
        let mean0: f64 = col0.iter().sum::<f64>() / n;
        let var0: f64 = col0.iter().map(|v| (v - mean0) * (v - mean0)).sum::<f64>() / n;
        assert!(mean0.abs() < 3.0 * 0.1 / n.sqrt() * 3.0, "mean0 = {}", mean0);
        assert!((var0 - 0.01).abs() < 0.0005, "var0 = {}", var0);
        let mean1: f64 = col1.iter().sum::<f64>() / n;
        let cov01: f64 = col0
            .iter()
            .zip(&col1)
            .map(|(a, b)| (a - mean0) * (b - mean1))
            .sum::<f64>()
            / n;
        // target covariance rho * sigma_x^2 = 0.003
        assert!((cov01 - 0.003).abs() < 0.0003, "cov01 = {}", cov01);
    }

    #[test]
    fn effect_sd_matches_monte_carlo_and_closed_form() {
        let cfg = small_cfg(100_000, DgpVariant::Continuous);
        // closed form: 0.01 * (0.7 * 1.0 + 0.3 * 4.0) = 0.019
        assert!((cfg.effect_sd() - 0.019f64.sqrt()).abs() < 1e-12);
        let ds = generate(&cfg, 21).unwrap();
        let tau = ds.aux.true_ite.unwrap();
        let m: f64 = tau.iter().sum::<f64>() / tau.len() as f64;
        let sd: f64 =
            (tau.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / tau.len() as f64).sqrt();
        assert!((sd - 0.13784).abs() < 0.004, "sd = {}", sd);
        // zero-mean effect: |sample mean| <= 3 sd / sqrt(n)
        assert!(m.abs() <= 3.0 * 0.13784 / (tau.len() as f64).sqrt(), "m = {}", m);
    }

    #[test]
    fn binary_subgroup_positive_fraction_is_about_two_thirds() {
        // Monte Carlo oracle (2e6 samples, independent implementation):
        // fraction 0.6692 under the elementwise step effect with rho = 0.3.
        let cfg = small_cfg(100_000, DgpVariant::BinarySubgroup);
        let ds = generate(&cfg, 31).unwrap();
        let lab = ds.aux.true_label.unwrap();
        let frac: f64 = lab.iter().sum::<f64>() / lab.len() as f64;
        assert!(
            (0.655..=0.684).contains(&frac),
            "positive fraction = {}",
            frac
        );
    }

    #[test]
    fn confounded_model_stays_half_treated_on_average() {
        let cfg = small_cfg(50_000, DgpVariant::Continuous);
        let ds = generate(&cfg, 41).unwrap();
        let frac = ds.n_treated() as f64 / ds.n() as f64;
        assert!((frac - 0.5).abs() < 0.02, "treated fraction = {}", frac);
    }

    #[test]
    fn aux_formulas_match_hand_computed_values() {
        let mut x = Matrix::zeros(2, 10);
        x.set(1, 2, 0.6); // x3 = 0.6 in row 1
        let (risk, cost, sens) = attach_constraint_aux(&x).unwrap();
        assert!((risk[0] - 0.26894).abs() < 1e-5, "risk = {}", risk[0]);
        assert!((cost[0] - 1.0).abs() < 1e-12);
        assert_eq!(sens[0], 0.0);
        assert!((cost[1] - 1.12).abs() < 1e-12, "cost = {}", cost[1]);
        assert_eq!(sens[1], 1.0);
    }

    #[test]
    fn aux_columns_use_standardized_scale_in_generate() {
        let cfg = small_cfg(20_000, DgpVariant::Continuous);
        let ds = generate(&cfg, 55).unwrap();
        let sens = ds.aux.sensitive.unwrap();
        let frac: f64 = sens.iter().sum::<f64>() / sens.len() as f64;
        // P(Z > 0.5) ~ 0.3085 for a standard normal coordinate
        assert!((frac - 0.3085).abs() < 0.02, "sensitive fraction = {}", frac);
        let risk = ds.aux.risk.unwrap();
        let mean_risk: f64 = risk.iter().sum::<f64>() / risk.len() as f64;
        // E[sigmoid(-(10 Z + 1))] ~ 0.4602 for a standard normal coordinate
        assert!((mean_risk - 0.4602).abs() < 0.02, "mean risk = {}", mean_risk);
    }

    #[test]
    fn generate_is_seed_deterministic() {
        let cfg = small_cfg(300, DgpVariant::Continuous);
        assert_eq!(generate(&cfg, 77).unwrap(), generate(&cfg, 77).unwrap());
        assert_ne!(generate(&cfg, 77).unwrap(), generate(&cfg, 78).unwrap());
    }
}
