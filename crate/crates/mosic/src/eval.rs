//! Subgroup evaluation: effect metrics over a hard selection,
//! precision/recall against ground-truth labels, the subsampling null study
//! for selected-group effects, and hyperparameter cross-validation.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_indices, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{count_unbalanced, NuisanceEstimates};
use crate::pipeline::{fit_subgroup, FitConfig};
use crate::pseudo::PseudoOutcomes;
use crate::seeding::{derive_seed, rng_from_seed};
use crate::surrogate::SurrogateKind;
use crate::synth::{generate, DgpConfig, DgpVariant};

/// Size-band half-width for the cross-validation selection rule: a grid cell
/// qualifies when its mean validation group size is within this distance of
/// the target fraction `c`.
pub const CV_SIZE_BAND: f64 = 0.05;

/// Evaluation record for one hard selection on one dataset.
///
/// An empty selection yields a record with every effect metric absent and
/// `undefined_reason` set; callers keep going instead of aborting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    /// Selected fraction of the dataset, in `[0, 1]`.
    pub group_size_fraction: f64,
    /// Number of selected rows.
    pub selected: usize,
    /// Mean pseudo-outcome over the selection.
    pub est_ate: Option<f64>,
    /// Mean of the `true_ite` auxiliary column over the selection, when the
    /// column exists.
    pub true_ate: Option<f64>,
    /// `|est_ate - true_ate|`; present exactly when `true_ate` is.
    pub ate_error: Option<f64>,
    /// Features with reweighted standardized mean difference above the
    /// balance threshold, restricted to the selection.
    pub unbalanced_count: Option<usize>,
    /// Named summaries of the auxiliary columns over the selection
    /// (`mean_risk`, `total_cost`, `sensitive_ratio`) plus `ate_improvement`
    /// (selected-mean pseudo-outcome minus the full-sample mean).
    pub aux_metrics: BTreeMap<String, f64>,
    /// Why the metrics are undefined, for degenerate selections.
    pub undefined_reason: Option<String>,
}

fn masked_mean(values: &[f64], mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &m) in values.iter().zip(mask) {
        if m {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

/// Computes all selection metrics for one dataset.
///
/// `est` and `phi` must come from nuisance models fitted elsewhere (on
/// training data, when `ds` is a held-out split). An empty mask produces a
/// well-formed record flagged via `undefined_reason` rather than an error.
pub fn subgroup_metrics(
    ds: &Dataset,
    est: &NuisanceEstimates,
    phi: &PseudoOutcomes,
    mask: &[bool],
) -> Result<SubgroupMetrics> {
    let n = ds.n();
    if mask.len() != n || phi.phi.len() != n || est.e_hat.len() != n {
        return Err(Error::parameter(format!(
            "subgroup_metrics length mismatch: dataset {}, mask {}, phi {}, e_hat {}",
            n,
            mask.len(),
            phi.phi.len(),
            est.e_hat.len()
        )));
    }
    let selected = mask.iter().filter(|&&m| m).count();
    if selected == 0 {
        return Ok(SubgroupMetrics {
            group_size_fraction: 0.0,
            selected: 0,
            est_ate: None,
            true_ate: None,
            ate_error: None,
            unbalanced_count: None,
            aux_metrics: BTreeMap::new(),
            undefined_reason: Some("empty selection: no sample scored above the threshold".into()),
        });
    }
    let est_ate = masked_mean(&phi.phi, mask);
    let true_ate = ds
        .aux
        .true_ite
        .as_ref()
        .and_then(|t| masked_mean(t, mask));
    let ate_error = match (est_ate, true_ate) {
        (Some(e), Some(t)) => Some((e - t).abs()),
        _ => None,
    };
    let (unbalanced, _) = count_unbalanced(ds, &est.e_hat, mask)?;

    let mut aux_metrics = BTreeMap::new();
    if let Some(risk) = &ds.aux.risk {
        if let Some(m) = masked_mean(risk, mask) {
            aux_metrics.insert("mean_risk".to_string(), m);
        }
    }
    if let Some(cost) = &ds.aux.cost {
        let total: f64 = cost
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum();
        aux_metrics.insert("total_cost".to_string(), total);
    }
    if let Some(sens) = &ds.aux.sensitive {
        if let Some(m) = masked_mean(sens, mask) {
            aux_metrics.insert("sensitive_ratio".to_string(), m);
        }
    }
    if let Some(e) = est_ate {
        let overall = phi.phi.iter().sum::<f64>() / n as f64;
        aux_metrics.insert("ate_improvement".to_string(), e - overall);
    }

    Ok(SubgroupMetrics {
        group_size_fraction: selected as f64 / n as f64,
        selected,
        est_ate,
        true_ate,
        ate_error,
        unbalanced_count: Some(unbalanced),
        aux_metrics,
        undefined_reason: None,
    })
}

/// Precision and recall of a selection against a 0/1 ground-truth label.
///
/// Empty selection leaves precision undefined; no positive labels leaves
/// recall undefined (the 0/0 cases).
pub fn precision_recall(mask: &[bool], true_label: &[f64]) -> Result<(Option<f64>, Option<f64>)> {
    if mask.len() != true_label.len() {
        return Err(Error::parameter(format!(
            "mask length {} != label length {}",
            mask.len(),
            true_label.len()
        )));
    }
    if let Some(bad) = true_label.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::data(format!(
            "true_label must be 0/1, found {}",
            bad
        )));
    }
    let selected = mask.iter().filter(|&&m| m).count();
    let positives = true_label.iter().filter(|&&v| v == 1.0).count();
    let tp = mask
        .iter()
        .zip(true_label)
        .filter(|&(&m, &l)| m && l == 1.0)
        .count();
    let precision = if selected > 0 {
        Some(tp as f64 / selected as f64)
    } else {
        None
    };
    let recall = if positives > 0 {
        Some(tp as f64 / positives as f64)
    } else {
        None
    };
    Ok((precision, recall))
}

/// Fraction of selected rows whose propensity estimate lies outside
/// `[alpha, 1 - alpha]`; `None` for an empty selection.
pub fn overlap_violation_fraction(e_hat: &[f64], mask: &[bool], alpha: f64) -> Option<f64> {
    let mut selected = 0usize;
    let mut outside = 0usize;
    for (&e, &m) in e_hat.iter().zip(mask) {
        if m {
            selected += 1;
            if e < alpha || e > 1.0 - alpha {
                outside += 1;
            }
        }
    }
    if selected == 0 {
        None
    } else {
        Some(outside as f64 / selected as f64)
    }
}

/// One-sided subsampling p-value for an observed group mean.
///
/// Draws `iters` subsets of `draw_size` rows without replacement from `phi`,
/// takes each subset's mean as a null sample, and returns the fraction of
/// null samples at or above `observed`.
pub fn subsample_null_test(
    phi: &[f64],
    observed: f64,
    draw_size: usize,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if phi.is_empty() || draw_size == 0 || draw_size > phi.len() {
        return Err(Error::parameter(format!(
            "draw_size must lie in [1, {}], got {}",
            phi.len(),
            draw_size
        )));
    }
    if iters == 0 {
        return Err(Error::parameter("iters must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut at_or_above = 0usize;
    for _ in 0..iters {
        let idx = sample(&mut rng, phi.len(), draw_size);
        let mean: f64 = idx.iter().map(|i| phi[i]).sum::<f64>() / draw_size as f64;
        if mean >= observed {
            at_or_above += 1;
        }
    }
    Ok(at_or_above as f64 / iters as f64)
}

/// Parameters of the null-effect rejection study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TypeIStudyConfig {
    /// Independently generated datasets.
    pub instances: usize,
    /// Null-distribution subsample draws per instance.
    pub bootstrap_iters: usize,
    /// Rejection threshold on the one-sided p-value.
    pub significance: f64,
    /// Target group-size fraction (also the subsample-size fraction).
    pub size_c: f64,
    /// Fraction of each instance held out for inference.
    pub split_fraction: f64,
    /// Base seed; per-instance seeds derive from it.
    pub seed_base: u64,
}

impl Default for TypeIStudyConfig {
    fn default() -> Self {
        TypeIStudyConfig {
            instances: 30,
            bootstrap_iters: 2000,
            significance: 0.05,
            size_c: 0.5,
            split_fraction: 0.5,
            seed_base: 0,
        }
    }
}

impl TypeIStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::parameter("instances must be >= 1"));
        }
        if self.bootstrap_iters < 100 {
            return Err(Error::parameter(format!(
                "bootstrap_iters must be >= 100, got {}",
                self.bootstrap_iters
            )));
        }
        if !(0.0 < self.significance && self.significance <= 1.0) {
            return Err(Error::parameter(format!(
                "significance must lie in (0, 1], got {}",
                self.significance
            )));
        }
        if !(self.size_c > 0.0 && self.size_c < 1.0) {
            return Err(Error::parameter(format!(
                "size_c must lie in (0, 1), got {}",
                self.size_c
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::parameter(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

/// Per-instance outcome of the null study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeIRecord {
    pub instance: usize,
    pub seed: u64,
    /// Mean holdout pseudo-outcome over the selection; absent when the run
    /// degenerated.
    pub ate_holdout: Option<f64>,
    pub p_value: Option<f64>,
    pub rejected: bool,
    /// True when training collapsed or the holdout selection came back
    /// empty; such instances count as non-rejections.
    pub collapsed: bool,
}

/// Aggregate result of the null study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeIStudy {
    pub rejection_rate: f64,
    pub records: Vec<TypeIRecord>,
}

/// Runs the false-rejection study on a zero-effect generator: per instance,
/// fit the full pipeline on a training half, select on the holdout half, and
/// test the selected-group mean pseudo-outcome against a subsampling null.
///
/// Instances run in parallel with seeds derived from `study.seed_base`, so
/// results are independent of scheduling order.
pub fn type_i_error_study(
    study: &TypeIStudyConfig,
    dgp: &DgpConfig,
    fit: &FitConfig,
) -> Result<TypeIStudy> {
    study.validate()?;
    if dgp.variant != DgpVariant::Null {
        return Err(Error::parameter(
            "the rejection study requires the zero-effect generator variant".to_string(),
        ));
    }
    let mut fit_cfg = fit.clone();
    fit_cfg.size_c = study.size_c;
    let records: Vec<TypeIRecord> = (0..study.instances)
        .into_par_iter()
        .map(|i| -> Result<TypeIRecord> {
            let seed = derive_seed(study.seed_base, i as u64);
            let ds = generate(dgp, seed)?;
            let (train, holdout) = train_test_split(&ds, study.split_fraction, derive_seed(seed, 1))?;
            let fitted = fit_subgroup(&train, &fit_cfg, derive_seed(seed, 2))?;
            if fitted.report.collapsed {
                return Ok(TypeIRecord {
                    instance: i,
                    seed,
                    ate_holdout: None,
                    p_value: None,
                    rejected: false,
                    collapsed: true,
                });
            }
            let phi = fitted.predict_phi(&holdout)?;
            let mask = fitted.select(&holdout)?;
            let ate = match masked_mean(&phi.phi, &mask) {
                Some(a) => a,
                None => {
                    return Ok(TypeIRecord {
                        instance: i,
                        seed,
                        ate_holdout: None,
                        p_value: None,
                        rejected: false,
                        collapsed: true,
                    })
                }
            };
            let draw = ((study.size_c * holdout.n() as f64).round() as usize)
                .clamp(1, holdout.n());
            let p = subsample_null_test(
                &phi.phi,
                ate,
                draw,
                study.bootstrap_iters,
                derive_seed(seed, 3),
            )?;
            Ok(TypeIRecord {
                instance: i,
                seed,
                ate_holdout: Some(ate),
                p_value: Some(p),
                rejected: p < study.significance,
                collapsed: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rejections = records.iter().filter(|r| r.rejected).count();
    Ok(TypeIStudy {
        rejection_rate: rejections as f64 / records.len() as f64,
        records,
    })
}

/// Hyperparameter grid: damping coefficients crossed with surrogate sizes
/// (hidden width for network surrogates, depth for tree surrogates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvGrid {
    pub betas: Vec<f64>,
    pub model_sizes: Vec<usize>,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            betas: vec![1e-2, 1e-3, 1e-4, 1e-5],
            model_sizes: vec![50, 100, 200],
        }
    }
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.model_sizes.is_empty() {
            return Err(Error::parameter("the hyperparameter grid must be non-empty"));
        }
        Ok(())
    }
}

/// Validation summary for one grid cell, averaged over its live folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCellSummary {
    pub beta: f64,
    pub model_size: usize,
    pub mean_val_size: f64,
    pub mean_est_ate: f64,
    pub mean_unbalanced: f64,
    /// Folds whose run collapsed or selected nothing on validation.
    pub folds_collapsed: usize,
    pub folds: usize,
}

impl CvCellSummary {
    fn dead(&self) -> bool {
        self.folds_collapsed >= self.folds
    }
}

/// Chosen hyperparameters with the full grid record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub beta: f64,
    pub model_size: usize,
    pub cell_index: usize,
    /// Whether the winning cell sat inside the group-size band.
    pub in_band: bool,
    pub cells: Vec<CvCellSummary>,
}

impl CvSelection {
    /// Returns `base` with the winning cell's hyperparameters substituted in.
    pub fn apply(&self, base: &FitConfig) -> FitConfig {
        apply_cell(base, self.beta, self.model_size)
    }
}

/// The selection rule over completed cell summaries: among live cells whose
/// mean validation size is within [`CV_SIZE_BAND`] of `c`, maximize mean
/// validation effect, breaking ties by fewer unbalanced features and then by
/// smaller beta; if no cell is in the band, minimize `|size - c|` with the
/// same tie chain. Errors when every cell is dead.
pub fn select_cv_cell(cells: &[CvCellSummary], c: f64) -> Result<(usize, bool)> {
    let live: Vec<usize> = (0..cells.len()).filter(|&i| !cells[i].dead()).collect();
    if live.is_empty() {
        return Err(Error::numerical(
            "every cross-validation cell collapsed; no hyperparameters are usable".to_string(),
        ));
    }
    let in_band: Vec<usize> = live
        .iter()
        .copied()
        .filter(|&i| (cells[i].mean_val_size - c).abs() <= CV_SIZE_BAND)
        .collect();
    let tie_chain = |a: &CvCellSummary, b: &CvCellSummary| {
        b.mean_est_ate
            .partial_cmp(&a.mean_est_ate)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.mean_unbalanced
                    .partial_cmp(&b.mean_unbalanced)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.beta.partial_cmp(&b.beta).unwrap_or(std::cmp::Ordering::Equal))
    };
    if !in_band.is_empty() {
        let best = *in_band
            .iter()
            .min_by(|&&a, &&b| tie_chain(&cells[a], &cells[b]))
            .expect("non-empty");
        return Ok((best, true));
    }
    let best = *live
        .iter()
        .min_by(|&&a, &&b| {
            let da = (cells[a].mean_val_size - c).abs();
            let db = (cells[b].mean_val_size - c).abs();
            da.partial_cmp(&db)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(tie_chain(&cells[a], &cells[b]))
        })
        .expect("non-empty");
    Ok((best, false))
}

fn apply_cell(base: &FitConfig, beta: f64, model_size: usize) -> FitConfig {
    let mut cfg = base.clone();
    cfg.gda.beta = beta;
    match cfg.surrogate.kind {
        SurrogateKind::Mlp => {
            let layers = cfg.surrogate.hidden.len().max(1);
            cfg.surrogate.hidden = vec![model_size; layers];
        }
        SurrogateKind::SoftTree | SurrogateKind::Forest => {
            cfg.surrogate.depth = model_size;
        }
    }
    cfg
}

/// K-fold cross-validation over the hyperparameter grid. Every (cell, fold)
/// job runs in parallel with a seed derived from (`seed`, job index); a fold
/// whose training fails numerically, collapses, or selects nothing counts as
/// collapsed for its cell rather than aborting the search.
pub fn cross_validate(
    train: &Dataset,
    base: &FitConfig,
    grid: &CvGrid,
    k: usize,
    seed: u64,
) -> Result<CvSelection> {
    grid.validate()?;
    let folds = kfold_indices(train.n(), k, derive_seed(seed, 1))?;
    let n_cells = grid.betas.len() * grid.model_sizes.len();
    let jobs: Vec<(usize, usize)> = (0..n_cells)
        .flat_map(|cell| (0..k).map(move |fold| (cell, fold)))
        .collect();

    struct FoldResult {
        cell: usize,
        collapsed: bool,
        val_size: f64,
        est_ate: f64,
        unbalanced: f64,
    }

    let results: Vec<FoldResult> = jobs
        .par_iter()
        .enumerate()
        .map(|(job_idx, &(cell, fold))| -> Result<FoldResult> {
            let beta = grid.betas[cell / grid.model_sizes.len()];
            let model_size = grid.model_sizes[cell % grid.model_sizes.len()];
            let cfg = apply_cell(base, beta, model_size);
            let sub_train = train.select_rows(&folds[fold].train)?;
            let val = train.select_rows(&folds[fold].test)?;
            let job_seed = derive_seed(seed, 100 + job_idx as u64);
            let collapsed_result = FoldResult {
                cell,
                collapsed: true,
                val_size: 0.0,
                est_ate: 0.0,
                unbalanced: 0.0,
            };
            let fitted = match fit_subgroup(&sub_train, &cfg, job_seed) {
                Ok(f) => f,
                Err(Error::Numerical(_)) => return Ok(collapsed_result),
                Err(e) => return Err(e),
            };
            if fitted.report.collapsed {
                return Ok(collapsed_result);
            }
            let metrics = fitted.evaluate(&val)?;
            match metrics.est_ate {
                Some(est_ate) => Ok(FoldResult {
                    cell,
                    collapsed: false,
                    val_size: metrics.group_size_fraction,
                    est_ate,
                    unbalanced: metrics.unbalanced_count.unwrap_or(0) as f64,
                }),
                None => Ok(collapsed_result),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells: Vec<CvCellSummary> = (0..n_cells)
        .map(|cell| CvCellSummary {
            beta: grid.betas[cell / grid.model_sizes.len()],
            model_size: grid.model_sizes[cell % grid.model_sizes.len()],
            mean_val_size: 0.0,
            mean_est_ate: 0.0,
            mean_unbalanced: 0.0,
            folds_collapsed: 0,
            folds: k,
        })
        .collect();
    let mut live_counts = vec![0usize; n_cells];
    for r in &results {
        let c = &mut cells[r.cell];
        if r.collapsed {
            c.folds_collapsed += 1;
        } else {
            live_counts[r.cell] += 1;
            c.mean_val_size += r.val_size;
            c.mean_est_ate += r.est_ate;
            c.mean_unbalanced += r.unbalanced;
        }
    }
    for (c, &live) in cells.iter_mut().zip(&live_counts) {
        if live > 0 {
            c.mean_val_size /= live as f64;
            c.mean_est_ate /= live as f64;
            c.mean_unbalanced /= live as f64;
        }
    }

    let (cell_index, in_band) = select_cv_cell(&cells, base.size_c)?;
    Ok(CvSelection {
        beta: cells[cell_index].beta,
        model_size: cells[cell_index].model_size,
        cell_index,
        in_band,
        cells,
    })
}
