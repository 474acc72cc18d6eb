//! Per-sample pseudo-outcomes whose mean over any subgroup estimates that
//! subgroup's average treatment effect, plus the per-sample overlap score
//! used to build propensity-bound constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::NuisanceEstimates;

/// Which pseudo-outcome construction was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Inverse-propensity weighting only.
    Iptw,
    /// Augmented inverse-propensity weighting (doubly robust).
    Aiptw,
}

/// Per-sample pseudo-outcomes plus summary scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoOutcomes {
    pub phi: Vec<f64>,
    pub estimator: Estimator,
    /// `max_i |phi_i|`; feeds the damping-coefficient feasibility bound.
    pub phi_max: f64,
}

impl PseudoOutcomes {
    /// Wraps precomputed pseudo-outcomes (validates finiteness and records
    /// the scale); used when carrying values across data splits.
    pub fn from_phi(phi: Vec<f64>, estimator: Estimator) -> Result<PseudoOutcomes> {
        finalize(phi, estimator)
    }

    /// Restriction to a row subset, preserving the estimator tag.
    pub fn select_rows(&self, rows: &[usize]) -> Result<PseudoOutcomes> {
        finalize(
            rows.iter().map(|&i| self.phi[i]).collect(),
            self.estimator,
        )
    }
}

fn finalize(phi: Vec<f64>, estimator: Estimator) -> Result<PseudoOutcomes> {
    if let Some(bad) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(format!(
            "pseudo-outcome at row {} is not finite (check propensity clipping)",
            bad
        )));
    }
    let phi_max = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(PseudoOutcomes {
        phi,
        estimator,
        phi_max,
    })
}

fn check_lengths(est: &NuisanceEstimates, treatment: &[u8], outcome: &[f64]) -> Result<usize> {
    let n = est.e_hat.len();
    if treatment.len() != n || outcome.len() != n || est.mu0_hat.len() != n || est.mu1_hat.len() != n
    {
        return Err(Error::parameter(
            "treatment/outcome/nuisance vectors must share one length".to_string(),
        ));
    }
    if let Some(bad) = est
        .e_hat
        .iter()
        .position(|&e| !(e > 0.0 && e < 1.0))
    {
        return Err(Error::parameter(format!(
            "propensity at row {} must lie strictly inside (0,1), got {}",
            bad, est.e_hat[bad]
        )));
    }
    Ok(n)
}

/// Doubly robust pseudo-outcome:
/// `mu1 - mu0 + a (y - mu1) / e - (1 - a) (y - mu0) / (1 - e)`.
pub fn aiptw_phi(
    est: &NuisanceEstimates,
    treatment: &[u8],
    outcome: &[f64],
) -> Result<PseudoOutcomes> {
    let n = check_lengths(est, treatment, outcome)?;
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        let e = est.e_hat[i];
        let (mu0, mu1) = (est.mu0_hat[i], est.mu1_hat[i]);
        let base = mu1 - mu0;
        let correction = if treatment[i] == 1 {
            (outcome[i] - mu1) / e
        } else {
            -(outcome[i] - mu0) / (1.0 - e)
        };
        phi.push(base + correction);
    }
    finalize(phi, Estimator::Aiptw)
}

/// Pure inverse-propensity pseudo-outcome:
/// `a y / e - (1 - a) y / (1 - e)`.
pub fn iptw_phi(
    est: &NuisanceEstimates,
    treatment: &[u8],
    outcome: &[f64],
) -> Result<PseudoOutcomes> {
    let n = check_lengths(est, treatment, outcome)?;
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        let e = est.e_hat[i];
        phi.push(if treatment[i] == 1 {
            outcome[i] / e
        } else {
            -outcome[i] / (1.0 - e)
        });
    }
    finalize(phi, Estimator::Iptw)
}

/// Per-sample overlap scores `h_i = 1 - e_i (1 - e_i) / (alpha (1 - alpha))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapScores {
    pub h: Vec<f64>,
    pub alpha: f64,
}

/// Computes overlap scores for the propensity bound `alpha <= e <= 1-alpha`.
///
/// The sign of `h_i` characterizes the bound exactly: `h_i <= 0` iff `e_i`
/// lies inside `[alpha, 1-alpha]`. Setting `alpha = 0` disables the bound;
/// every score becomes negative infinity so no constraint can materialize.
pub fn overlap_h(e_hat: &[f64], alpha: f64) -> Result<OverlapScores> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(Error::parameter(format!(
            "alpha must lie in [0, 0.5), got {}",
            alpha
        )));
    }
    let h = if alpha == 0.0 {
        vec![f64::NEG_INFINITY; e_hat.len()]
    } else {
        let denom = alpha * (1.0 - alpha);
        e_hat
            .iter()
            .map(|&e| 1.0 - e * (1.0 - e) / denom)
            .collect()
    };
    Ok(OverlapScores { h, alpha })
}
