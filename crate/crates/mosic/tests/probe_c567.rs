//! Scratch probes for the overlap, constraint-stack, and binary-recovery
//! acceptance scenarios (deleted on cleanup).

use std::time::Instant;

use mosic::constraints::build_constraint_set;
use mosic::data::train_test_split;
use mosic::eval::{overlap_violation_fraction, precision_recall};
use mosic::gda::{self, GdaConfig};
use mosic::pipeline::{fit_subgroup, ExtraConstraintSpec, FitConfig};
use mosic::pseudo::overlap_h;
use mosic::seeding::derive_seed;
use mosic::surrogate::SurrogateCache;
use mosic::synth::{generate, DgpConfig, DgpVariant};

#[test]
#[ignore]
fn probe_overlap_contrast() {
    // 3 replicates of the headline scenario, constrained vs alpha = 0
    for r in 0..3u64 {
        let rep_seed = derive_seed(990, r);
        let ds = generate(&DgpConfig::default(), derive_seed(rep_seed, 0)).unwrap();
        let (train, _test) = train_test_split(&ds, 0.5, derive_seed(rep_seed, 1)).unwrap();
        let fit_seed = derive_seed(rep_seed, 2);
        let fitted = fit_subgroup(&train, &FitConfig::default(), fit_seed).unwrap();
        let est = fitted.predict_nuisance(&train).unwrap();
        let sel = fitted.select(&train).unwrap();
        let frac_con = overlap_violation_fraction(&est.e_hat, &sel, 0.02).unwrap();

        // matched run without the overlap constraints, same surrogate seed
        let overlap = overlap_h(&est.e_hat, 0.0).unwrap();
        let set = build_constraint_set(0.5, &overlap, vec![]).unwrap();
        let gcfg = GdaConfig {
            seed: derive_seed(fit_seed, 2),
            ..GdaConfig::default()
        };
        let rep = gda::run(
            &train.features,
            &fitted.train_phi,
            &set,
            &Default::default(),
            &gcfg,
        )
        .unwrap();
        let mut cache = SurrogateCache::default();
        let sel_u = rep.model.select(&train.features, &mut cache).unwrap();
        let frac_unc = overlap_violation_fraction(&est.e_hat, &sel_u, 0.02).unwrap();
        let n_out = est
            .e_hat
            .iter()
            .filter(|&&e| !(0.02..=0.98).contains(&e))
            .count();
        println!(
            "rep {}: constrained {:?} unconstrained {:?} (train rows outside band: {})",
            r, frac_con, frac_unc, n_out
        );
    }
}

#[test]
#[ignore]
fn probe_constraint_stack() {
    let specs = vec![
        ExtraConstraintSpec::Safety {
            aux: "risk".to_string(),
            cap: 0.05,
        },
        ExtraConstraintSpec::Budget {
            aux: "cost".to_string(),
            fraction_of_n: 0.5,
        },
        ExtraConstraintSpec::Fairness {
            aux: "sensitive".to_string(),
            target: 0.5,
            tol: 0.01,
        },
    ];
    let reps: Vec<u64> = std::env::var("PROBE_REPS")
        .map(|v| v.split(',').map(|s| s.parse().unwrap()).collect())
        .unwrap_or_else(|_| (0..20).collect());
    let eta: f64 = std::env::var("PROBE_ETA")
        .map(|v| v.parse().unwrap())
        .unwrap_or(0.4);
    let t_max: usize = std::env::var("PROBE_TMAX")
        .map(|v| v.parse().unwrap())
        .unwrap_or(2500);
    let count = reps.len() as f64;
    let mut sums = [0.0f64; 8];
    for r in reps {
        let rep_seed = derive_seed(991, r);
        let ds = generate(&DgpConfig::default(), derive_seed(rep_seed, 0)).unwrap();
        let (train, test) = train_test_split(&ds, 0.5, derive_seed(rep_seed, 1)).unwrap();
        let cfg = FitConfig {
            extra_constraints: specs.clone(),
            gda: mosic::gda::GdaConfig {
                eta,
                t_max,
                ..mosic::gda::GdaConfig::default()
            },
            ..FitConfig::default()
        };
        let t0 = Instant::now();
        let fitted = fit_subgroup(&train, &cfg, derive_seed(rep_seed, 2)).unwrap();
        let mt = fitted.evaluate(&train).unwrap();
        let me = fitted.evaluate(&test).unwrap();
        println!(
            "rep {} ({:?}): collapsed={} term={:?}\n  train size={:.3} risk={:?} cost={:?} sens={:?}\n  test  size={:.3} risk={:?} cost={:?} sens={:?} ate {:?} err {:?}",
            r,
            t0.elapsed(),
            fitted.report.collapsed,
            fitted.report.termination,
            mt.group_size_fraction,
            mt.aux_metrics.get("mean_risk"),
            mt.aux_metrics.get("total_cost"),
            mt.aux_metrics.get("sensitive_ratio"),
            me.group_size_fraction,
            me.aux_metrics.get("mean_risk"),
            me.aux_metrics.get("total_cost"),
            me.aux_metrics.get("sensitive_ratio"),
            me.true_ate,
            me.ate_error,
        );
        for (acc, v) in sums.iter_mut().zip([
            mt.group_size_fraction,
            *mt.aux_metrics.get("mean_risk").unwrap_or(&f64::NAN),
            *mt.aux_metrics.get("total_cost").unwrap_or(&f64::NAN),
            *mt.aux_metrics.get("sensitive_ratio").unwrap_or(&f64::NAN),
            me.group_size_fraction,
            *me.aux_metrics.get("mean_risk").unwrap_or(&f64::NAN),
            *me.aux_metrics.get("total_cost").unwrap_or(&f64::NAN),
            *me.aux_metrics.get("sensitive_ratio").unwrap_or(&f64::NAN),
        ]) {
            *acc += v;
        }
    }
    let m: Vec<f64> = sums.iter().map(|s| s / count).collect();
    println!(
        "MEANS train: size={:.4} risk={:.4} cost={:.1} sens={:.4} | test: size={:.4} risk={:.4} cost={:.1} sens={:.4}",
        m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7]
    );
}

#[test]
#[ignore]
fn probe_binary_recovery() {
    let dgp = DgpConfig {
        variant: DgpVariant::BinarySubgroup,
        ..DgpConfig::default()
    };
    for r in 0..2u64 {
        let rep_seed = derive_seed(992, r);
        let ds = generate(&dgp, derive_seed(rep_seed, 0)).unwrap();
        let (train, test) = train_test_split(&ds, 0.5, derive_seed(rep_seed, 1)).unwrap();
        for (i, c) in [0.6, 0.8].iter().enumerate() {
            let cfg = FitConfig {
                size_c: *c,
                ..FitConfig::default()
            };
            let t0 = Instant::now();
            let fitted = fit_subgroup(&train, &cfg, derive_seed(rep_seed, 100 + i as u64)).unwrap();
            let mask = fitted.select(&test).unwrap();
            let label = test.aux.true_label.clone().unwrap();
            let (p, rec) = precision_recall(&mask, &label).unwrap();
            println!(
                "rep {} c={}: ({:?}, iters {}) precision {:?} recall {:?} size {:.3}",
                r,
                c,
                t0.elapsed(),
                fitted.report.iterations,
                p,
                rec,
                mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
            );
        }
    }
}
