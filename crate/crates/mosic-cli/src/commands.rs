//! The four subcommand implementations. Each resolves its configuration,
//! creates the output directory, runs the work, and writes its artifact set.
//! Commands return the process exit code for outcomes that still produce
//! reports (0 for success, 4 for a collapsed or infeasible fit); hard errors
//! propagate as `Error` and are mapped to exit codes by the caller.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mosic::data::{train_test_split, write_csv, Dataset};
use mosic::error::{Error, Result};
use mosic::eval::{cross_validate, type_i_error_study, TypeIStudy, TypeIStudyConfig};
use mosic::gda::FeasibilityDiagnostics;
use mosic::pipeline::{fit_subgroup, FittedSubgroup};
use mosic::pseudo::Estimator;
use mosic::seeding::derive_seed;
use mosic::synth::DgpConfig;

use crate::config::{
    DatasetSpec, RunConfig, STREAM_EXPERIMENT, STREAM_FIT, STREAM_TYPEI,
};
use crate::report::{
    aggregate, write_aggregates_csv, write_json, write_metrics_csv, write_trace_csv,
    ExperimentReport, SplitOutcome, SplitRecord, TrainSummary,
};

/// Exit code for runs that completed but produced a collapsed (infeasible)
/// subgroup; the report is still written.
pub const EXIT_COLLAPSED: i32 = 4;

/// Maps an error to the documented process exit code: configuration and data
/// problems are 2, I/O failures are 3, numerical failures are 5.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) | Error::Data(_) => 2,
        Error::Io(_) => 3,
        Error::Numerical(_) => 5,
    }
}

/// Optional per-command extras requested on the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct OutputOptions {
    /// Write the per-iteration training trace (`trace.csv`).
    pub trace: bool,
    /// Write per-row pseudo-outcomes and scores (`phi.csv`).
    pub dump_phi: bool,
}

/// Sidecar metadata for one invocation. Everything that can vary between
/// otherwise identical runs (wall-clock time) lives here so the reports
/// themselves stay byte-for-byte reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub exit_code: i32,
    pub wall_clock_seconds: f64,
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)?;
    Ok(dir)
}

/// Generation parameters and derived seed recorded next to the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    master_seed: u64,
    dataset_seed: u64,
    rows: usize,
    features: usize,
    dgp: DgpConfig,
}

/// `generate`: draw the configured synthetic dataset and write it as CSV
/// with a metadata sidecar.
pub fn cmd_generate(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let dgp = match &cfg.dataset {
        DatasetSpec::Generate { dgp } => dgp.clone(),
        DatasetSpec::Csv { .. } => {
            return Err(Error::parameter(
                "generate needs a synthetic dataset source, not a CSV file",
            ))
        }
    };
    let ds = cfg.load_dataset()?;
    let out = prepare_out_dir(cfg)?;
    write_csv(&ds, &out.join("dataset.csv"))?;
    let meta = DatasetMeta {
        master_seed: cfg.seed,
        dataset_seed: derive_seed(cfg.seed, crate::config::STREAM_DATASET),
        rows: ds.n(),
        features: ds.features.ncols(),
        dgp,
    };
    write_json(&meta, &out.join("dataset_meta.json"))?;
    cfg.emit_resolved(out)?;
    Ok(0)
}

/// Training diagnostics written by `fit`: the split-level summary fields at
/// the top level plus the full multiplier/residual state.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitReport {
    #[serde(flatten)]
    summary: TrainSummary,
    estimator: Estimator,
    lambda: Vec<f64>,
    residuals: Vec<f64>,
    feasible: Vec<bool>,
    diagnostics: FeasibilityDiagnostics,
}

fn write_fit_artifacts(
    fitted: &FittedSubgroup,
    ds: &Dataset,
    out: &Path,
    opts: OutputOptions,
) -> Result<()> {
    #[derive(Serialize)]
    struct NuisanceArtifact<'a> {
        propensity: &'a mosic::nuisance::PropensityModel,
        outcome: &'a mosic::nuisance::OutcomeModel,
    }
    write_json(
        &NuisanceArtifact {
            propensity: &fitted.propensity,
            outcome: &fitted.outcome,
        },
        &out.join("nuisance.json"),
    )?;
    write_json(&fitted.report.model, &out.join("surrogate.json"))?;
    write_json(
        &FitReport {
            summary: TrainSummary::from_report(&fitted.report, &fitted.constraint_names),
            estimator: fitted.estimator,
            lambda: fitted.report.lambda.clone(),
            residuals: fitted.report.residuals.clone(),
            feasible: fitted.report.feasible.clone(),
            diagnostics: fitted.report.diagnostics.clone(),
        },
        &out.join("train_report.json"),
    )?;
    write_json(&fitted.evaluate(ds)?, &out.join("fit_metrics.json"))?;
    if opts.trace {
        write_trace_csv(
            &fitted.report,
            &fitted.constraint_names,
            &out.join("trace.csv"),
        )?;
    }
    if opts.dump_phi {
        write_phi_csv(fitted, ds, &out.join("phi.csv"))?;
    }
    Ok(())
}

/// Per-row dump: pseudo-outcome, nuisance predictions, membership score,
/// and the hard selection flag.
fn write_phi_csv(fitted: &FittedSubgroup, ds: &Dataset, path: &Path) -> Result<()> {
    let est = fitted.predict_nuisance(ds)?;
    let phi = mosic::pipeline::build_phi(fitted.estimator, &est, &ds.treatment, &ds.outcome)?;
    let mut cache = mosic::surrogate::SurrogateCache::default();
    let scores = fitted.report.model.scores(&ds.features, &mut cache)?.to_vec();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot create {}: {}", path.display(), e)))?;
    w.write_record(["index", "phi", "e_hat", "mu0_hat", "mu1_hat", "score", "selected"])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    for i in 0..ds.n() {
        w.write_record([
            i.to_string(),
            phi.phi[i].to_string(),
            est.e_hat[i].to_string(),
            est.mu0_hat[i].to_string(),
            est.mu1_hat[i].to_string(),
            scores[i].to_string(),
            ((scores[i] > 0.5) as u8).to_string(),
        ])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("CSV flush failed: {}", e)))?;
    Ok(())
}

/// `fit`: train one subgroup model on the whole dataset and write the model,
/// nuisances, diagnostics, and training metrics. A collapsed fit still
/// writes every artifact and signals exit code 4.
pub fn cmd_fit(cfg: &RunConfig, opts: OutputOptions) -> Result<i32> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    let out = prepare_out_dir(cfg)?;
    let fitted = fit_subgroup(&ds, &cfg.fit, derive_seed(cfg.seed, STREAM_FIT))?;
    write_fit_artifacts(&fitted, &ds, out, opts)?;
    cfg.emit_resolved(out)?;
    Ok(if fitted.report.collapsed {
        EXIT_COLLAPSED
    } else {
        0
    })
}

/// One experiment work unit: a (split, group-size) pair, with the seeds that
/// make it independent of scheduling order.
struct Job {
    split: usize,
    c: f64,
    fit_seed: u64,
    cv_seed: u64,
}

fn run_job(job: &Job, train: &Dataset, test: &Dataset, cfg: &RunConfig) -> SplitRecord {
    let outcome = (|| -> Result<SplitOutcome> {
        let mut fit_cfg = cfg.fit.clone();
        fit_cfg.size_c = job.c;
        let cv = match &cfg.experiment.cv {
            Some(block) => {
                let sel = cross_validate(train, &fit_cfg, &block.grid(), block.folds, job.cv_seed)?;
                fit_cfg = sel.apply(&fit_cfg);
                Some(sel)
            }
            None => None,
        };
        let fitted = fit_subgroup(train, &fit_cfg, job.fit_seed)?;
        Ok(SplitOutcome::Success {
            cv,
            train: fitted.evaluate(train)?,
            test: fitted.evaluate(test)?,
            summary: TrainSummary::from_report(&fitted.report, &fitted.constraint_names),
        })
    })();
    match outcome {
        Ok(outcome) => SplitRecord {
            split: job.split,
            c: job.c,
            seed: job.fit_seed,
            outcome,
        },
        Err(e) => SplitRecord {
            split: job.split,
            c: job.c,
            seed: job.fit_seed,
            outcome: SplitOutcome::Failure {
                error: e.to_string(),
            },
        },
    }
}

/// `experiment`: replicate train/test splits, optionally sweep group-size
/// targets and cross-validate hyperparameters, and aggregate test metrics.
///
/// Per-unit failures are recorded in the report and the run continues; the
/// command only errors when every unit failed (with the first unit's error).
/// If every completed unit collapsed, exit code 4 is signalled.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    let out = prepare_out_dir(cfg)?;
    let exp = &cfg.experiment;
    let c_list: Vec<f64> = if exp.c_sweep.is_empty() {
        vec![cfg.fit.size_c]
    } else {
        exp.c_sweep.clone()
    };
    let exp_seed = derive_seed(cfg.seed, STREAM_EXPERIMENT);

    // one split of the data per replicate, shared by every swept c
    let mut splits = Vec::with_capacity(exp.splits);
    for split in 0..exp.splits {
        let split_seed = derive_seed(exp_seed, split as u64);
        let (train, test) = train_test_split(&ds, exp.split_fraction, split_seed)?;
        splits.push((split, split_seed, train, test));
    }
    let jobs: Vec<(usize, Job)> = splits
        .iter()
        .enumerate()
        .flat_map(|(slot, (split, split_seed, _, _))| {
            c_list.iter().enumerate().map(move |(c_idx, &c)| {
                (
                    slot,
                    Job {
                        split: *split,
                        c,
                        fit_seed: derive_seed(*split_seed, 100 + c_idx as u64),
                        cv_seed: derive_seed(*split_seed, 200 + c_idx as u64),
                    },
                )
            })
        })
        .collect();

    let records: Vec<SplitRecord> = jobs
        .par_iter()
        .map(|(slot, job)| {
            let (_, _, train, test) = &splits[*slot];
            run_job(job, train, test, cfg)
        })
        .collect();

    if records
        .iter()
        .all(|r| matches!(r.outcome, SplitOutcome::Failure { .. }))
    {
        if let Some(SplitOutcome::Failure { error }) = records.first().map(|r| &r.outcome) {
            return Err(Error::numerical(format!(
                "every experiment unit failed; first failure: {}",
                error
            )));
        }
        return Err(Error::parameter("experiment produced no work units"));
    }

    let aggregates = aggregate(&records);
    let report = ExperimentReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        resolved_config: cfg.clone(),
        records,
        aggregates,
    };
    write_json(&report, &out.join("experiment_report.json"))?;
    write_metrics_csv(&report.records, &out.join("metrics.csv"))?;
    write_aggregates_csv(&report.aggregates, &out.join("aggregates.csv"))?;
    cfg.emit_resolved(out)?;

    let all_collapsed = report.records.iter().all(|r| match &r.outcome {
        SplitOutcome::Success { summary, .. } => summary.collapsed,
        SplitOutcome::Failure { .. } => true,
    });
    Ok(if all_collapsed { EXIT_COLLAPSED } else { 0 })
}

/// `typei`: run the false-rejection study on a zero-effect generator and
/// write the aggregate rate plus per-instance records.
pub fn cmd_typei(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let dgp = match &cfg.dataset {
        DatasetSpec::Generate { dgp } => dgp.clone(),
        DatasetSpec::Csv { .. } => {
            return Err(Error::parameter(
                "the rejection study needs a synthetic dataset source, not a CSV file",
            ))
        }
    };
    let ti = &cfg.typei;
    let study = TypeIStudyConfig {
        instances: ti.instances,
        bootstrap_iters: ti.bootstrap_iters,
        significance: ti.significance,
        size_c: ti.size_c,
        split_fraction: ti.split_fraction,
        seed_base: derive_seed(cfg.seed, STREAM_TYPEI),
    };
    let result = type_i_error_study(&study, &dgp, &cfg.fit)?;
    let out = prepare_out_dir(cfg)?;
    write_json(&result, &out.join("typei_report.json"))?;
    write_typei_csv(&result, &out.join("typei_records.csv"))?;
    cfg.emit_resolved(out)?;
    Ok(0)
}

fn write_typei_csv(study: &TypeIStudy, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot create {}: {}", path.display(), e)))?;
    w.write_record(["instance", "seed", "ate_holdout", "p_value", "rejected", "collapsed"])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    for r in &study.records {
        w.write_record([
            r.instance.to_string(),
            r.seed.to_string(),
            r.ate_holdout.map(|v| v.to_string()).unwrap_or_default(),
            r.p_value.map(|v| v.to_string()).unwrap_or_default(),
            r.rejected.to_string(),
            r.collapsed.to_string(),
        ])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("CSV flush failed: {}", e)))?;
    Ok(())
}
