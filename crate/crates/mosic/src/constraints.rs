//! Constraint assembly and residual evaluation.
//!
//! Four families are supported: a minimum group-size constraint, per-sample
//! propensity-overlap constraints, general linear constraints on the soft
//! selection, and ratio-form constraints whose denominator is the soft group
//! size. All residuals use the convention `g <= 0` means satisfied.
//!
//! Overlap rows whose score `h` is non-positive are pruned at construction:
//! for those rows `s * h <= 0` holds for every score in `(0, 1)`, so dropping
//! them never changes the feasible set. Pruning fixes the constraint count —
//! and therefore the multiplier indexing — for the whole training run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudo::OverlapScores;

/// One materialized constraint with residual convention `g <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Constraint {
    /// Minimum group size: `g = c - mean(s)`.
    Size { c: f64 },
    /// Propensity overlap at one sample: `g = s[row] * h`.
    OverlapRow { row: usize, h: f64 },
    /// General linear form: `g = a + sum_i b_i s_i`.
    Linear { name: String, a: f64, b: Vec<f64> },
    /// Ratio form: `g = a + (sum_i b_i s_i) / denom`, where `denom` is the
    /// soft group size captured at the current iterate. Gradient flow
    /// through the denominator is blocked: the declared coefficients are
    /// those of the numerator alone, divided by the frozen denominator.
    Ratio { name: String, a: f64, b: Vec<f64> },
}

impl Constraint {
    /// Stable display name used in reports and traces.
    pub fn name(&self) -> String {
        match self {
            Constraint::Size { .. } => "size".to_string(),
            Constraint::OverlapRow { row, .. } => format!("overlap[{}]", row),
            Constraint::Linear { name, .. } | Constraint::Ratio { name, .. } => name.clone(),
        }
    }
}

/// Mean selected risk at most `cap`, as a ratio constraint.
pub fn safety_ratio(name: &str, risk: &[f64], cap: f64) -> Constraint {
    Constraint::Ratio {
        name: name.to_string(),
        a: -cap,
        b: risk.to_vec(),
    }
}

/// Total selected cost at most `budget`, as a linear constraint.
///
/// The residual is stored in per-sample units, `mean(cost · s) − budget/n`,
/// rather than raw totals. Dividing both sides by `n` leaves the feasible
/// set unchanged but keeps the residual on the same scale as the size and
/// ratio families, so one multiplier step size conditions every constraint;
/// a raw total in the hundreds would blow its multiplier up within a few
/// iterations and drag every score to zero.
pub fn budget_linear(name: &str, cost: &[f64], budget: f64) -> Constraint {
    let n = cost.len().max(1) as f64;
    Constraint::Linear {
        name: name.to_string(),
        a: -budget / n,
        b: cost.iter().map(|v| v / n).collect(),
    }
}

/// Selected-group prevalence of a binary attribute within `target ± tol`,
/// as a pair of ratio constraints (upper bound first).
pub fn fairness_ratios(name: &str, attribute: &[f64], target: f64, tol: f64) -> (Constraint, Constraint) {
    let upper = Constraint::Ratio {
        name: format!("{}_upper", name),
        a: -(target + tol),
        b: attribute.to_vec(),
    };
    let lower = Constraint::Ratio {
        name: format!("{}_lower", name),
        a: target - tol,
        b: attribute.iter().map(|v| -v).collect(),
    };
    (upper, lower)
}

/// Ordered, immutable constraint collection for one training run.
///
/// Order: the size constraint first, then overlap rows in ascending row
/// order, then extra constraints in their declared order. Multiplier index
/// `k` refers to `constraints[k]` for the life of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
    n: usize,
}

/// Builds the constraint set for `n` samples: the size constraint, one
/// overlap constraint per row with positive overlap score, then the extra
/// linear/ratio constraints in order.
pub fn build_constraint_set(
    size_c: f64,
    overlap: &OverlapScores,
    extra: Vec<Constraint>,
) -> Result<ConstraintSet> {
    if !(size_c > 0.0 && size_c < 1.0) {
        return Err(Error::parameter(format!(
            "group-size fraction must lie in (0, 1), got {}",
            size_c
        )));
    }
    let n = overlap.h.len();
    if n == 0 {
        return Err(Error::parameter("constraint set needs at least one sample"));
    }
    let mut constraints = Vec::with_capacity(1 + extra.len());
    constraints.push(Constraint::Size { c: size_c });
    for (row, &h) in overlap.h.iter().enumerate() {
        if h > 0.0 {
            constraints.push(Constraint::OverlapRow { row, h });
        }
    }
    for con in extra {
        match &con {
            Constraint::Linear { name, a: _, b } => {
                if b.len() != n {
                    return Err(Error::parameter(format!(
                        "linear constraint '{}' has {} coefficients, expected {}",
                        name,
                        b.len(),
                        n
                    )));
                }
                let bsum: f64 = b.iter().sum();
                if bsum == 0.0 {
                    return Err(Error::parameter(format!(
                        "linear constraint '{}' has zero coefficient sum; the multiplier \
                         feasibility guarantee requires |sum b| > 0",
                        name
                    )));
                }
            }
            Constraint::Ratio { name, a: _, b } => {
                if b.len() != n {
                    return Err(Error::parameter(format!(
                        "ratio constraint '{}' has {} coefficients, expected {}",
                        name,
                        b.len(),
                        n
                    )));
                }
            }
            Constraint::Size { .. } | Constraint::OverlapRow { .. } => {
                return Err(Error::parameter(
                    "extra constraints must be linear or ratio form".to_string(),
                ));
            }
        }
        constraints.push(con);
    }
    Ok(ConstraintSet { constraints, n })
}

impl ConstraintSet {
    /// Builds a set from explicit constraints without the standard
    /// size-then-overlap assembly; useful for bespoke scenarios (including a
    /// fully unconstrained run with an empty list).
    pub fn from_constraints(n: usize, constraints: Vec<Constraint>) -> Result<ConstraintSet> {
        if n == 0 {
            return Err(Error::parameter("constraint set needs at least one sample"));
        }
        for c in &constraints {
            match c {
                Constraint::Size { c } => {
                    if !(*c > 0.0 && *c < 1.0) {
                        return Err(Error::parameter(format!(
                            "group-size fraction must lie in (0, 1), got {}",
                            c
                        )));
                    }
                }
                Constraint::OverlapRow { row, .. } => {
                    if *row >= n {
                        return Err(Error::parameter(format!(
                            "overlap row {} out of range for {} samples",
                            row, n
                        )));
                    }
                }
                Constraint::Linear { name, b, .. } | Constraint::Ratio { name, b, .. } => {
                    if b.len() != n {
                        return Err(Error::parameter(format!(
                            "constraint '{}' has {} coefficients, expected {}",
                            name,
                            b.len(),
                            n
                        )));
                    }
                }
            }
        }
        Ok(ConstraintSet { constraints, n })
    }

    /// The size constraint's minimum fraction, when one is present.
    pub fn size_c(&self) -> Option<f64> {
        self.constraints.iter().find_map(|c| match c {
            Constraint::Size { c } => Some(*c),
            _ => None,
        })
    }

    /// Number of constraints (multiplier dimension).
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Number of samples the constraints are defined over.
    pub fn n(&self) -> usize {
        self.n
    }

    /// The ordered constraints.
    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Display names, aligned with multiplier indices.
    pub fn names(&self) -> Vec<String> {
        self.constraints.iter().map(Constraint::name).collect()
    }

    /// Whether any ratio constraint is present (requires a positive frozen
    /// denominator at evaluation).
    pub fn has_ratio(&self) -> bool {
        self.constraints
            .iter()
            .any(|c| matches!(c, Constraint::Ratio { .. }))
    }

    fn check_eval_inputs(&self, s: &[f64], frozen_denominator: f64) -> Result<()> {
        if s.len() != self.n {
            return Err(Error::parameter(format!(
                "score vector has length {}, expected {}",
                s.len(),
                self.n
            )));
        }
        if self.has_ratio() && !(frozen_denominator > 0.0) {
            return Err(Error::numerical(format!(
                "ratio constraints need a positive frozen denominator, got {}",
                frozen_denominator
            )));
        }
        Ok(())
    }

    /// Residual vector `g` at the given scores. `frozen_denominator` is the
    /// soft group size `sum(s)` captured at the current iterate; it only
    /// enters ratio constraints.
    pub fn eval_g(&self, s: &[f64], frozen_denominator: f64) -> Result<Vec<f64>> {
        self.check_eval_inputs(s, frozen_denominator)?;
        let n = self.n as f64;
        Ok(self
            .constraints
            .iter()
            .map(|c| match c {
                Constraint::Size { c } => c - s.iter().sum::<f64>() / n,
                Constraint::OverlapRow { row, h } => s[*row] * h,
                Constraint::Linear { a, b, .. } => {
                    a + b.iter().zip(s).map(|(bi, si)| bi * si).sum::<f64>()
                }
                Constraint::Ratio { a, b, .. } => {
                    a + b.iter().zip(s).map(|(bi, si)| bi * si).sum::<f64>() / frozen_denominator
                }
            })
            .collect())
    }

    /// Adds `sum_k mult[k] * (d g_k / d s_i)` into `u[i]` for every sample.
    /// Entries of `mult` that are zero are skipped, so passing gated
    /// multipliers costs nothing for inactive constraints.
    pub fn accumulate_coeffs(
        &self,
        mult: &[f64],
        frozen_denominator: f64,
        u: &mut [f64],
    ) -> Result<()> {
        if mult.len() != self.constraints.len() || u.len() != self.n {
            return Err(Error::parameter(
                "multiplier and accumulator lengths must match the constraint set".to_string(),
            ));
        }
        if self.has_ratio() && !(frozen_denominator > 0.0) {
            return Err(Error::numerical(format!(
                "ratio constraints need a positive frozen denominator, got {}",
                frozen_denominator
            )));
        }
        let n = self.n as f64;
        for (c, &m) in self.constraints.iter().zip(mult) {
            if m == 0.0 {
                continue;
            }
            match c {
                Constraint::Size { .. } => {
                    let v = -m / n;
                    u.iter_mut().for_each(|ui| *ui += v);
                }
                Constraint::OverlapRow { row, h } => {
                    u[*row] += m * h;
                }
                Constraint::Linear { b, .. } => {
                    for (ui, bi) in u.iter_mut().zip(b) {
                        *ui += m * bi;
                    }
                }
                Constraint::Ratio { b, .. } => {
                    let scale = m / frozen_denominator;
                    for (ui, bi) in u.iter_mut().zip(b) {
                        *ui += scale * bi;
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense gradient-coefficient vector of constraint `k` (length `n`),
    /// materialized for diagnostics and tests.
    pub fn coeff_dense(&self, k: usize, frozen_denominator: f64) -> Result<Vec<f64>> {
        let c = self
            .constraints
            .get(k)
            .ok_or_else(|| Error::parameter(format!("constraint index {} out of range", k)))?;
        let n = self.n as f64;
        Ok(match c {
            Constraint::Size { .. } => vec![-1.0 / n; self.n],
            Constraint::OverlapRow { row, h } => {
                let mut v = vec![0.0; self.n];
                v[*row] = *h;
                v
            }
            Constraint::Linear { b, .. } => b.clone(),
            Constraint::Ratio { b, .. } => {
                if !(frozen_denominator > 0.0) {
                    return Err(Error::numerical(format!(
                        "ratio constraints need a positive frozen denominator, got {}",
                        frozen_denominator
                    )));
                }
                b.iter().map(|bi| bi / frozen_denominator).collect()
            }
        })
    }
}
