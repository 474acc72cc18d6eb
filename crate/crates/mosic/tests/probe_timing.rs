//! Scratch timing probe for acceptance budgets (deleted on cleanup).

use std::time::Instant;

use mosic::data::train_test_split;
use mosic::eval::{subsample_null_test, type_i_error_study, TypeIStudyConfig};
use mosic::pipeline::{fit_subgroup, FitConfig};
use mosic::synth::{generate, DgpConfig, DgpVariant};

#[test]
#[ignore]
fn probe_one_typei_instance() {
    let dgp = DgpConfig {
        n: 2000,
        variant: DgpVariant::Null,
        ..DgpConfig::default()
    };
    let t0 = Instant::now();
    let ds = generate(&dgp, 42).unwrap();
    let (train, holdout) = train_test_split(&ds, 0.5, 1).unwrap();
    let t_gen = t0.elapsed();

    let t1 = Instant::now();
    let mut cfg = FitConfig {
        size_c: 0.6,
        ..FitConfig::default()
    };
    cfg.gda.t_max = 1800;
    let fitted = fit_subgroup(&train, &cfg, 7).unwrap();
    let t_fit = t1.elapsed();

    let t2 = Instant::now();
    let phi = fitted.predict_phi(&holdout).unwrap();
    let mask = fitted.select(&holdout).unwrap();
    let sel: Vec<f64> = phi
        .phi
        .iter()
        .zip(&mask)
        .filter(|&(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let ate = sel.iter().sum::<f64>() / sel.len().max(1) as f64;
    let p = subsample_null_test(&phi.phi, ate, 600, 2000, 3).unwrap();
    let t_test = t2.elapsed();

    println!(
        "gen+split {:?} | fit {:?} (iters {}, collapsed {}) | null test {:?} (p={:.3})",
        t_gen, t_fit, fitted.report.iterations, fitted.report.collapsed, t_test, p
    );
}

#[test]
#[ignore]
fn probe_small_typei_study() {
    let dgp = DgpConfig {
        n: 2000,
        variant: DgpVariant::Null,
        ..DgpConfig::default()
    };
    let study = TypeIStudyConfig {
        instances: 3,
        bootstrap_iters: 2000,
        significance: 0.05,
        size_c: 0.6,
        split_fraction: 0.5,
        seed_base: 11,
    };
    let t0 = Instant::now();
    let out = type_i_error_study(&study, &dgp, &FitConfig::default()).unwrap();
    println!(
        "3 instances in {:?} -> rate {:.3}, per-instance {:?}",
        t0.elapsed(),
        out.rejection_rate,
        t0.elapsed() / 3
    );
}

#[test]
#[ignore]
fn probe_headline_replicate() {
    let dgp = DgpConfig::default();
    let t0 = Instant::now();
    let ds = generate(&dgp, 42).unwrap();
    let (train, test) = train_test_split(&ds, 0.5, 1).unwrap();
    let fitted = fit_subgroup(&train, &FitConfig::default(), 7).unwrap();
    let m = fitted.evaluate(&test).unwrap();
    println!(
        "replicate wall {:?} | n={} iters={} test size {:.3} true ate {:?}",
        t0.elapsed(),
        ds.n(),
        fitted.report.iterations,
        m.group_size_fraction,
        m.true_ate
    );
}
