//! Named, fully resolved run configurations for the benchmark studies.

use mosic::pipeline::ExtraConstraintSpec;
use mosic::synth::{DgpConfig, DgpVariant};

use crate::config::{RunConfig, TypeIBlock};

/// Names accepted by `--preset`.
pub const PRESET_NAMES: [&str; 4] = [
    "paper-synthetic-confounded",
    "appendix-E4",
    "appendix-F",
    "appendix-G",
];

/// Looks a preset up by name.
pub fn preset(name: &str) -> Option<RunConfig> {
    let mut cfg = RunConfig::default();
    match name {
        // Confounded continuous-effect benchmark: n=5000, 50/50 split,
        // c=0.5, overlap cutoff 0.02, replicated 20 times.
        "paper-synthetic-confounded" => {
            cfg.experiment.splits = 20;
        }
        // Adds the safety / budget / fairness constraint stack on top of the
        // confounded benchmark: selected-group mean risk at most 0.05, total
        // cost at most half the training size, sensitive-group share within
        // 0.50 +/- 0.01.
        "appendix-E4" => {
            cfg.experiment.splits = 20;
            cfg.fit.extra_constraints = vec![
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
        }
        // Binary-subgroup identification benchmark, swept over the two
        // reported group sizes.
        "appendix-F" => {
            cfg.dataset = crate::config::DatasetSpec::Generate {
                dgp: DgpConfig {
                    variant: DgpVariant::BinarySubgroup,
                    ..DgpConfig::default()
                },
            };
            cfg.fit.size_c = 0.6;
            cfg.experiment.splits = 20;
            cfg.experiment.c_sweep = vec![0.6, 0.8];
        }
        // Null-effect rejection study at desk scale. The shorter solver
        // horizon keeps 30 sequential instances affordable on one core;
        // null fits stabilize well before the default cap.
        "appendix-G" => {
            cfg.dataset = crate::config::DatasetSpec::Generate {
                dgp: DgpConfig {
                    n: 2000,
                    variant: DgpVariant::Null,
                    ..DgpConfig::default()
                },
            };
            cfg.fit.gda.t_max = 1800;
            cfg.typei = TypeIBlock {
                instances: 30,
                bootstrap_iters: 2000,
                significance: 0.05,
                size_c: 0.6,
                split_fraction: 0.5,
            };
        }
        _ => return None,
    }
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
        }
        assert!(preset("no-such-preset").is_none());
    }

    #[test]
    fn constraint_stack_preset_carries_three_specs() {
        let cfg = preset("appendix-E4").unwrap();
        assert_eq!(cfg.fit.extra_constraints.len(), 3);
    }

    #[test]
    fn null_study_preset_uses_the_null_variant() {
        let cfg = preset("appendix-G").unwrap();
        match cfg.dataset {
            crate::config::DatasetSpec::Generate { ref dgp } => {
                assert_eq!(dgp.variant, DgpVariant::Null)
            }
            _ => panic!("expected a generated dataset"),
        }
        assert_eq!(cfg.typei.bootstrap_iters, 2000);
    }
}
