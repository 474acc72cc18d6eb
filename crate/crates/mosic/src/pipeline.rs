//! End-to-end composition: fit nuisances on training data, build
//! pseudo-outcomes and constraints, run the solver, and evaluate the fitted
//! subgroup on held-out data.

use serde::{Deserialize, Serialize};

use crate::constraints::{
    budget_linear, build_constraint_set, fairness_ratios, safety_ratio, Constraint,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{subgroup_metrics, SubgroupMetrics};
use crate::gda::{self, GdaConfig, TrainReport};
use crate::nuisance::{
    fit_outcome, fit_propensity, predict_nuisance, NuisanceEstimates, OutcomeModel,
    PropensityModel,
};
use crate::pseudo::{aiptw_phi, iptw_phi, overlap_h, Estimator, PseudoOutcomes};
use crate::seeding::derive_seed;
use crate::surrogate::{SurrogateCache, SurrogateConfig};

/// Nuisance-model training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    /// L2 penalty on the propensity model's coefficients.
    pub propensity_l2: f64,
    pub propensity_max_iters: usize,
    pub propensity_tol: f64,
    /// Hidden width of the per-arm outcome networks.
    pub outcome_hidden: usize,
    pub outcome_epochs: usize,
    pub outcome_lr: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            propensity_l2: 1e-4,
            propensity_max_iters: 2000,
            propensity_tol: 1e-6,
            outcome_hidden: 50,
            outcome_epochs: 300,
            outcome_lr: 0.05,
        }
    }
}

/// Declarative extra constraint, resolved against auxiliary dataset columns
/// at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExtraConstraintSpec {
    /// Mean of `aux` over the selected group at most `cap`.
    Safety { aux: String, cap: f64 },
    /// Total of `aux` over the soft selection at most
    /// `fraction_of_n * n_train`.
    Budget { aux: String, fraction_of_n: f64 },
    /// Selected-group mean of the binary `aux` within `target ± tol`.
    Fairness { aux: String, target: f64, tol: f64 },
    /// Raw linear form `a + sum_i aux_i s_i <= 0`.
    Linear { name: String, aux: String, a: f64 },
    /// Raw ratio form `a + (sum_i aux_i s_i) / sum_i s_i <= 0`.
    Ratio { name: String, aux: String, a: f64 },
}

impl ExtraConstraintSpec {
    fn aux_name(&self) -> &str {
        match self {
            ExtraConstraintSpec::Safety { aux, .. }
            | ExtraConstraintSpec::Budget { aux, .. }
            | ExtraConstraintSpec::Fairness { aux, .. }
            | ExtraConstraintSpec::Linear { aux, .. }
            | ExtraConstraintSpec::Ratio { aux, .. } => aux,
        }
    }

    /// Materializes data-backed constraints for a training set.
    pub fn materialize(&self, ds: &Dataset) -> Result<Vec<Constraint>> {
        let values = ds.aux.by_name(self.aux_name()).ok_or_else(|| {
            Error::data(format!(
                "constraint needs auxiliary column '{}', absent from the dataset",
                self.aux_name()
            ))
        })?;
        Ok(match self {
            ExtraConstraintSpec::Safety { aux, cap } => {
                vec![safety_ratio(&format!("safety_{}", aux), values, *cap)]
            }
            ExtraConstraintSpec::Budget { aux, fraction_of_n } => {
                let budget = fraction_of_n * ds.n() as f64;
                vec![budget_linear(&format!("budget_{}", aux), values, budget)]
            }
            ExtraConstraintSpec::Fairness { aux, target, tol } => {
                let (upper, lower) = fairness_ratios(&format!("fair_{}", aux), values, *target, *tol);
                vec![upper, lower]
            }
            ExtraConstraintSpec::Linear { name, a, .. } => vec![Constraint::Linear {
                name: name.clone(),
                a: *a,
                b: values.clone(),
            }],
            ExtraConstraintSpec::Ratio { name, a, .. } => vec![Constraint::Ratio {
                name: name.clone(),
                a: *a,
                b: values.clone(),
            }],
        })
    }
}

/// Everything needed to fit one subgroup model on one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub estimator: Estimator,
    /// Minimum group-size fraction.
    pub size_c: f64,
    /// Propensity-overlap cutoff; 0 disables overlap constraints.
    pub alpha: f64,
    pub extra_constraints: Vec<ExtraConstraintSpec>,
    pub nuisance: NuisanceConfig,
    pub surrogate: SurrogateConfig,
    pub gda: GdaConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            estimator: Estimator::Aiptw,
            size_c: 0.5,
            alpha: 0.02,
            extra_constraints: Vec::new(),
            nuisance: NuisanceConfig::default(),
            surrogate: SurrogateConfig::default(),
            gda: GdaConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.size_c > 0.0 && self.size_c < 1.0) {
            return Err(Error::parameter(format!(
                "size_c must lie in (0, 1), got {}",
                self.size_c
            )));
        }
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(Error::parameter(format!(
                "alpha must lie in [0, 0.5), got {}",
                self.alpha
            )));
        }
        self.surrogate.validate()?;
        self.gda.validate()
    }
}

/// A fitted subgroup model with its nuisances and training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedSubgroup {
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
    /// Pseudo-outcomes on the training rows.
    pub train_phi: PseudoOutcomes,
    pub constraint_names: Vec<String>,
    pub report: TrainReport,
    pub estimator: Estimator,
}

/// Fits the full pipeline on a training set: propensity and outcome models,
/// pseudo-outcomes, overlap scores, the constraint set, and the solver run.
/// All randomness derives from `seed`.
pub fn fit_subgroup(train: &Dataset, cfg: &FitConfig, seed: u64) -> Result<FittedSubgroup> {
    cfg.validate()?;
    let propensity = fit_propensity(
        train,
        cfg.nuisance.propensity_l2,
        cfg.nuisance.propensity_max_iters,
        cfg.nuisance.propensity_tol,
    )?;
    let outcome = fit_outcome(
        train,
        cfg.nuisance.outcome_hidden,
        cfg.nuisance.outcome_epochs,
        cfg.nuisance.outcome_lr,
        derive_seed(seed, 1),
    )?;
    let est = predict_nuisance(&propensity, &outcome, &train.features)?;
    let train_phi = build_phi(cfg.estimator, &est, &train.treatment, &train.outcome)?;
    let overlap = overlap_h(&est.e_hat, cfg.alpha)?;
    let mut extra = Vec::new();
    for spec in &cfg.extra_constraints {
        extra.extend(spec.materialize(train)?);
    }
    let set = build_constraint_set(cfg.size_c, &overlap, extra)?;
    let gda_cfg = GdaConfig {
        seed: derive_seed(seed, 2),
        ..cfg.gda.clone()
    };
    let report = gda::run(&train.features, &train_phi, &set, &cfg.surrogate, &gda_cfg)?;
    Ok(FittedSubgroup {
        propensity,
        outcome,
        train_phi,
        constraint_names: set.names(),
        report,
        estimator: cfg.estimator,
    })
}

/// Builds pseudo-outcomes with the configured estimator.
pub fn build_phi(
    estimator: Estimator,
    est: &NuisanceEstimates,
    treatment: &[u8],
    outcome: &[f64],
) -> Result<PseudoOutcomes> {
    match estimator {
        Estimator::Aiptw => aiptw_phi(est, treatment, outcome),
        Estimator::Iptw => iptw_phi(est, treatment, outcome),
    }
}

impl FittedSubgroup {
    /// Nuisance predictions on new rows (training-fitted models).
    pub fn predict_nuisance(&self, ds: &Dataset) -> Result<NuisanceEstimates> {
        predict_nuisance(&self.propensity, &self.outcome, &ds.features)
    }

    /// Pseudo-outcomes for new rows from the training-fitted nuisances.
    pub fn predict_phi(&self, ds: &Dataset) -> Result<PseudoOutcomes> {
        let est = self.predict_nuisance(ds)?;
        build_phi(self.estimator, &est, &ds.treatment, &ds.outcome)
    }

    /// Hard selection on new rows.
    pub fn select(&self, ds: &Dataset) -> Result<Vec<bool>> {
        let mut cache = SurrogateCache::default();
        self.report.model.select(&ds.features, &mut cache)
    }

    /// Full evaluation of the fitted subgroup on a dataset: hard selection,
    /// pseudo-outcome metrics, balance diagnostics, auxiliary summaries.
    pub fn evaluate(&self, ds: &Dataset) -> Result<SubgroupMetrics> {
        let est = self.predict_nuisance(ds)?;
        let phi = build_phi(self.estimator, &est, &ds.treatment, &ds.outcome)?;
        let mask = self.select(ds)?;
        subgroup_metrics(ds, &est, &phi, &mask)
    }
}
