//! Property-based invariants: pseudo-outcome exactness, constraint pruning
//! and affinity, surrogate equivariance, multiplier positivity, split
//! partitioning, and solver determinism.

use proptest::prelude::*;

use mosic::constraints::{build_constraint_set, Constraint, ConstraintSet};
use mosic::data::kfold_indices;
use mosic::gda::{self, grad_lambda, GdaConfig, ObjectiveKind};
use mosic::matrix::Matrix;
use mosic::nuisance::NuisanceEstimates;
use mosic::pseudo::{aiptw_phi, iptw_phi, overlap_h, Estimator, PseudoOutcomes};
use mosic::surrogate::{SurrogateCache, SurrogateConfig, SurrogateKind, SurrogateModel};
use mosic::synth::{generate, DgpConfig};

/// Equal-length bundles of (propensity, control mean, treated mean).
fn nuisance_rows() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.01f64..0.99, -5.0f64..5.0, -5.0f64..5.0), 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With exact nuisances and outcomes equal to their arm means, the
    /// doubly robust pseudo-outcome equals the true effect row by row,
    /// whichever arm was observed.
    #[test]
    fn aiptw_is_exact_under_true_nuisances(
        rows in nuisance_rows(),
        arm_picks in prop::collection::vec(any::<bool>(), 120),
    ) {
        let est = NuisanceEstimates {
            e_hat: rows.iter().map(|r| r.0).collect(),
            mu0_hat: rows.iter().map(|r| r.1).collect(),
            mu1_hat: rows.iter().map(|r| r.2).collect(),
        };
        let treatment: Vec<u8> = rows
            .iter()
            .zip(&arm_picks)
            .map(|(_, &a)| a as u8)
            .collect();
        let outcome: Vec<f64> = rows
            .iter()
            .zip(&arm_picks)
            .map(|(r, &a)| if a { r.2 } else { r.1 })
            .collect();
        let phi = aiptw_phi(&est, &treatment, &outcome).unwrap();
        for (p, r) in phi.phi.iter().zip(&rows) {
            let expected = r.2 - r.1;
            prop_assert!(
                (p - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                "phi = {}, expected {}",
                p,
                expected
            );
        }
    }

    /// Averaging the weighting-only pseudo-outcome over both arms with the
    /// true propensity recovers the effect: the weights cancel exactly.
    #[test]
    fn iptw_arm_average_recovers_the_effect(rows in nuisance_rows()) {
        let est = NuisanceEstimates {
            e_hat: rows.iter().map(|r| r.0).collect(),
            mu0_hat: rows.iter().map(|r| r.1).collect(),
            mu1_hat: rows.iter().map(|r| r.2).collect(),
        };
        let n = rows.len();
        let y1: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let y0: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let treated = iptw_phi(&est, &vec![1u8; n], &y1).unwrap();
        let control = iptw_phi(&est, &vec![0u8; n], &y0).unwrap();
        for i in 0..n {
            let (e, mu0, mu1) = rows[i];
            let avg = e * treated.phi[i] + (1.0 - e) * control.phi[i];
            let expected = mu1 - mu0;
            prop_assert!(
                (avg - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
                "arm-averaged phi = {}, expected {}",
                avg,
                expected
            );
        }
    }

    /// The overlap constraint materializes for exactly the rows whose
    /// propensity leaves `[alpha, 1 - alpha]`; rows on the safe side are
    /// pruned. Rows within 1e-9 of the boundary are skipped: there the
    /// comparison itself is ill-conditioned.
    #[test]
    fn overlap_pruning_matches_the_propensity_band(
        e in prop::collection::vec(0.001f64..0.999, 2..120),
        alpha in 0.005f64..0.4,
    ) {
        let overlap = overlap_h(&e, alpha).unwrap();
        let set = build_constraint_set(0.5, &overlap, vec![]).unwrap();
        let constrained: std::collections::HashSet<usize> = set
            .constraints()
            .iter()
            .filter_map(|c| match c {
                Constraint::OverlapRow { row, .. } => Some(*row),
                _ => None,
            })
            .collect();
        for (i, &ei) in e.iter().enumerate() {
            if (ei - alpha).abs() < 1e-9 || (ei - (1.0 - alpha)).abs() < 1e-9 {
                continue;
            }
            let outside = ei < alpha || ei > 1.0 - alpha;
            prop_assert_eq!(
                constrained.contains(&i),
                outside,
                "row {} with e = {} at alpha = {}",
                i,
                ei,
                alpha
            );
        }
    }

    /// With the ratio denominator frozen, every residual family is affine in
    /// the score vector: the residual at a midpoint equals the midpoint of
    /// the residuals.
    #[test]
    fn residuals_are_affine_in_the_scores(
        bundle in (3usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec(0.01f64..0.99, n),
                prop::collection::vec(0.01f64..0.99, n),
                0.05f64..0.9,
                -1.0f64..1.0,
            )
        }),
    ) {
        let (b, s1, s2, c, a) = bundle;
        let n = b.len();
        prop_assume!(b.iter().sum::<f64>().abs() > 1e-6);
        let set = ConstraintSet::from_constraints(
            n,
            vec![
                Constraint::Size { c },
                Constraint::OverlapRow { row: 0, h: 0.7 },
                Constraint::Linear { name: "lin".to_string(), a, b: b.clone() },
                Constraint::Ratio { name: "rat".to_string(), a, b: b.clone() },
            ],
        )
        .unwrap();
        let frozen = 1.7;
        let mid: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| (x + y) / 2.0).collect();
        let g1 = set.eval_g(&s1, frozen).unwrap();
        let g2 = set.eval_g(&s2, frozen).unwrap();
        let gm = set.eval_g(&mid, frozen).unwrap();
        for k in 0..set.len() {
            let expected = (g1[k] + g2[k]) / 2.0;
            prop_assert!(
                (gm[k] - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
                "constraint {}: midpoint residual {} vs {}",
                k,
                gm[k],
                expected
            );
        }
    }

    /// The rectified multiplier gradient is exact at the boundary: a residual
    /// of exactly zero contributes nothing beyond the regularizer decay, and
    /// each side of zero matches its closed form bit for bit.
    #[test]
    fn multiplier_gradient_gates_exactly_at_zero(
        lambda in 0.0f64..10.0,
        beta in 1e-6f64..1e-1,
        g in -2.0f64..2.0,
    ) {
        let at_zero = grad_lambda(ObjectiveKind::Modified, &[lambda], &[0.0], beta);
        prop_assert_eq!(at_zero[0], -beta * lambda);
        let grad = grad_lambda(ObjectiveKind::Modified, &[lambda], &[g], beta);
        let expected = if g > 0.0 { g - beta * lambda } else { -beta * lambda };
        prop_assert_eq!(grad[0], expected);
        // the plain objective passes the raw residual through unchanged
        let plain = grad_lambda(ObjectiveKind::Plain, &[lambda], &[g], beta);
        prop_assert_eq!(plain[0], g);
    }

    /// Every k-fold assignment is a partition: the validation folds are
    /// disjoint, cover every row, and differ in size by at most one, and
    /// each fold's training half is exactly the complement.
    #[test]
    fn kfold_is_a_partition(
        n in 10usize..200,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= n);
        let folds = kfold_indices(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; n];
        let mut sizes = Vec::new();
        for fold in &folds {
            sizes.push(fold.test.len());
            for &i in &fold.test {
                seen[i] += 1;
            }
            let mut in_test = vec![false; n];
            for &i in &fold.test {
                in_test[i] = true;
            }
            prop_assert_eq!(fold.train.len() + fold.test.len(), n);
            prop_assert!(fold.train.iter().all(|&i| !in_test[i]));
        }
        prop_assert!(seen.iter().all(|&c| c == 1), "each row validates exactly once");
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Scoring is row-local: rotating the rows of the feature matrix rotates
    /// the score vector bit for bit, for every surrogate family.
    #[test]
    fn scores_are_permutation_equivariant(
        seed in any::<u64>(),
        shift in 1usize..59,
        kind_pick in 0usize..3,
    ) {
        let ds = generate(&DgpConfig { n: 60, ..DgpConfig::default() }, seed).unwrap();
        let x = &ds.features;
        let n = x.nrows();
        let rotated: Vec<Vec<f64>> = (0..n)
            .map(|i| x.row((i + shift) % n).to_vec())
            .collect();
        let xr = Matrix::from_rows(&rotated).unwrap();

        let kind = [SurrogateKind::Mlp, SurrogateKind::SoftTree, SurrogateKind::Forest][kind_pick];
        let cfg = SurrogateConfig {
            kind,
            hidden: vec![6],
            depth: 2,
            trees: 3,
            ..SurrogateConfig::default()
        };
        let model = SurrogateModel::new(&cfg, x, 0.55, seed).unwrap();
        let mut cache = SurrogateCache::default();
        let plain = model.scores(x, &mut cache)?.to_vec();
        let mut cache_r = SurrogateCache::default();
        let rot = model.scores(&xr, &mut cache_r)?.to_vec();
        for i in 0..n {
            prop_assert_eq!(
                rot[i].to_bits(),
                plain[(i + shift) % n].to_bits(),
                "row {} after shift {}",
                i,
                shift
            );
        }
    }
}

fn tiny_training_problem(seed: u64) -> (Matrix, PseudoOutcomes, ConstraintSet) {
    let ds = generate(&DgpConfig { n: 50, ..DgpConfig::default() }, seed).unwrap();
    let ite = ds.aux.true_ite.clone().expect("generated data carries the true effect");
    let phi = PseudoOutcomes::from_phi(ite, Estimator::Aiptw).unwrap();
    let risk = ds.aux.risk.clone().expect("generated data carries the risk column");
    let set = ConstraintSet::from_constraints(
        50,
        vec![
            Constraint::Size { c: 0.3 },
            Constraint::Ratio { name: "risk_cap".to_string(), a: -0.3, b: risk },
        ],
    )
    .unwrap();
    (ds.features, phi, set)
}

fn tiny_gda_config(seed: u64) -> (SurrogateConfig, GdaConfig) {
    (
        SurrogateConfig { hidden: vec![4], ..SurrogateConfig::default() },
        GdaConfig {
            t_max: 60,
            converge_window: 10,
            seed,
            ..GdaConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Multipliers are clamped ascent variables: no seed, at any point of
    /// the trace, may push one below zero.
    #[test]
    fn multipliers_never_go_negative(seed in any::<u64>()) {
        let (x, phi, set) = tiny_training_problem(seed);
        let (scfg, gcfg) = tiny_gda_config(seed);
        let report = gda::run(&x, &phi, &set, &scfg, &gcfg).unwrap();
        prop_assert!(report.lambda.iter().all(|&l| l >= 0.0));
        prop_assert!(report.traces.lambda_max.iter().all(|&l| l >= 0.0));
    }

    /// Two runs from the same seed produce identical reports, including the
    /// full iteration traces.
    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let (x, phi, set) = tiny_training_problem(seed);
        let (scfg, gcfg) = tiny_gda_config(seed);
        let a = gda::run(&x, &phi, &set, &scfg, &gcfg).unwrap();
        let b = gda::run(&x, &phi, &set, &scfg, &gcfg).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}

/// The saddle objective observes the same gate as the gradient: growing a
/// multiplier on a satisfied constraint only changes the value through the
/// quadratic regularizer.
#[test]
fn objective_ignores_satisfied_constraints_beyond_the_regularizer() {
    let (x, phi, set) = tiny_training_problem(11);
    let (scfg, gcfg) = tiny_gda_config(11);
    let model = SurrogateModel::new(&scfg, &x, 0.9, 7).unwrap();
    // at s ~ 0.9 everywhere both constraints are satisfied (size 0.3, risk cap
    // 0.3 vs mean risk ~ 0.25 of standardized magnitudes) unless the draw says
    // otherwise; verify first, then check the objective difference exactly.
    let mut cache = SurrogateCache::default();
    let s = model.scores(&x, &mut cache).unwrap().to_vec();
    let sum: f64 = s.iter().sum();
    let g = set.eval_g(&s, sum).unwrap();
    if g.iter().any(|&gi| gi > 0.0) {
        // the fixed seed keeps this path dead; guard it for robustness
        return;
    }
    let v0 = gda::objective(&model, &x, &phi, &set, &[0.0, 0.0], &gcfg).unwrap();
    let v1 = gda::objective(&model, &x, &phi, &set, &[2.0, 3.0], &gcfg).unwrap();
    let reg = gcfg.beta / 2.0 * (2.0f64 * 2.0 + 3.0 * 3.0);
    assert!(
        ((v1 - v0) + reg).abs() < 1e-12,
        "objective moved by {} instead of the pure regularizer {}",
        v1 - v0,
        -reg
    );
}
