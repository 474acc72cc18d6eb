//! Scratch probe: hyperparameter ladder for the stacked-constraint scenario.
//! Not part of the suite; run with `--ignored --nocapture` and STACK_* env vars.

use mosic::pipeline::{fit_subgroup, ExtraConstraintSpec, FitConfig};
use mosic::seeding::derive_seed;
use mosic::synth::{generate, DgpConfig};
use mosic::data::train_test_split;

fn envf(key: &str, default: f64) -> f64 {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn envu(key: &str, default: usize) -> usize {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

#[test]
#[ignore]
fn probe_stack_ladder() {
    let reps: Vec<u64> = std::env::var("STACK_REPS")
        .unwrap_or_else(|_| "3,4,5,7".to_string())
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();

    let mut cfg = FitConfig {
        extra_constraints: vec![
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
        ],
        ..FitConfig::default()
    };
    cfg.gda.eta = envf("STACK_ETA", cfg.gda.eta);
    cfg.gda.zeta = envf("STACK_ZETA", cfg.gda.zeta);
    cfg.gda.beta = envf("STACK_BETA", cfg.gda.beta);
    cfg.gda.t_max = envu("STACK_TMAX", cfg.gda.t_max);
    cfg.gda.max_restarts = envu("STACK_RESTARTS", cfg.gda.max_restarts);
    let hid = envu("STACK_HIDDEN", 0);
    if hid > 0 {
        cfg.surrogate.hidden = vec![hid, hid];
    }
    println!(
        "ladder config: eta {} zeta {} beta {} t_max {} restarts {} hidden {:?}",
        cfg.gda.eta, cfg.gda.zeta, cfg.gda.beta, cfg.gda.t_max, cfg.gda.max_restarts,
        cfg.surrogate.hidden
    );

    let mut ok = 0usize;
    for &r in &reps {
        let rep_seed = derive_seed(991, r);
        let t0 = std::time::Instant::now();
        let ds = generate(&DgpConfig::default(), derive_seed(rep_seed, 0)).expect("dataset");
        let (train, test) = train_test_split(&ds, 0.5, derive_seed(rep_seed, 1)).expect("split");
        let fitted = fit_subgroup(&train, &cfg, derive_seed(rep_seed, 2)).expect("fit");
        let rep = &fitted.report;
        let m = fitted.evaluate(&test).expect("metrics");
        let (risk, cost, sens) = (
            m.aux_metrics.get("mean_risk").copied(),
            m.aux_metrics.get("total_cost").copied(),
            m.aux_metrics.get("sensitive_ratio").copied(),
        );
        let defined = risk.is_some() && cost.is_some() && sens.is_some();
        if defined && !rep.collapsed {
            ok += 1;
        }
        println!(
            "rep {:2} | collapsed {:5} feasible {:5} iters {:4} attempts {} | test size {:.3} \
             risk {:?} cost {:?} sens {:?} | {:.1}s",
            r,
            rep.collapsed,
            rep.all_feasible(),
            rep.iterations,
            rep.restarts_used + 1,
            m.group_size_fraction,
            risk.map(|v| (v * 1e4).round() / 1e4),
            cost.map(|v| v.round()),
            sens.map(|v| (v * 1e4).round() / 1e4),
            t0.elapsed().as_secs_f64()
        );
    }
    println!("survivors: {}/{}", ok, reps.len());
}
