//! Experiment report assembly: per-split records, order-independent
//! aggregation, and the flat CSV exports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mosic::error::{Error, Result};
use mosic::eval::{CvSelection, SubgroupMetrics};
use mosic::gda::{Termination, TrainReport};

use crate::config::RunConfig;

/// Slimmed training diagnostics kept per split (the full model and traces
/// stay out of the experiment report).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub converged: bool,
    pub collapsed: bool,
    pub all_feasible: bool,
    pub restarts_used: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub lambda_max: f64,
    pub constraint_names: Vec<String>,
    pub warnings: Vec<String>,
}

impl TrainSummary {
    pub fn from_report(report: &TrainReport, constraint_names: &[String]) -> TrainSummary {
        TrainSummary {
            converged: report.converged,
            collapsed: report.collapsed,
            all_feasible: report.all_feasible(),
            restarts_used: report.restarts_used,
            iterations: report.iterations,
            termination: report.termination,
            lambda_max: report.lambda.iter().cloned().fold(0.0, f64::max),
            constraint_names: constraint_names.to_vec(),
            warnings: report.warnings.clone(),
        }
    }
}

/// What happened on one (split, group-size) unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SplitOutcome {
    Success {
        cv: Option<CvSelection>,
        train: SubgroupMetrics,
        test: SubgroupMetrics,
        summary: TrainSummary,
    },
    Failure {
        error: String,
    },
}

/// One unit of experiment work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: usize,
    pub c: f64,
    pub seed: u64,
    pub outcome: SplitOutcome,
}

/// Mean and standard error of one metric at one group-size target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub c: f64,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Full experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub resolved_config: RunConfig,
    pub records: Vec<SplitRecord>,
    /// Test-split aggregates, recomputable from `records`.
    pub aggregates: Vec<AggregateRow>,
}

/// Flattens the numeric test metrics of a successful record.
fn metric_values(m: &SubgroupMetrics) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    out.insert("group_size_fraction".to_string(), m.group_size_fraction);
    if let Some(v) = m.est_ate {
        out.insert("est_ate".to_string(), v);
    }
    if let Some(v) = m.true_ate {
        out.insert("true_ate".to_string(), v);
    }
    if let Some(v) = m.ate_error {
        out.insert("ate_error".to_string(), v);
    }
    if let Some(v) = m.unbalanced_count {
        out.insert("unbalanced_count".to_string(), v as f64);
    }
    for (k, v) in &m.aux_metrics {
        out.insert(k.clone(), *v);
    }
    out
}

/// Aggregates test metrics over successful splits, per swept `c`: mean and
/// standard error of the mean (sample standard deviation over sqrt(count);
/// zero for a single observation). Deterministic: sorted by (c, metric).
pub fn aggregate(records: &[SplitRecord]) -> Vec<AggregateRow> {
    let mut buckets: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for rec in records {
        if let SplitOutcome::Success { test, .. } = &rec.outcome {
            for (metric, value) in metric_values(test) {
                // order c values by their literal formatting, which is
                // stable and unambiguous for config-supplied constants
                buckets
                    .entry((format!("{}", rec.c), metric))
                    .or_default()
                    .push(value);
            }
        }
    }
    buckets
        .into_iter()
        .map(|((c_str, metric), values)| {
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let se = if count > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (count as f64 - 1.0);
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                c: c_str.parse().expect("formatted from an f64"),
                metric,
                mean,
                se,
                count,
            }
        })
        .collect()
}

/// Writes the flat per-record metric CSV (`split,c,phase,metric,value`).
pub fn write_metrics_csv(records: &[SplitRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot create {}: {}", path.display(), e)))?;
    w.write_record(["split", "c", "phase", "metric", "value"])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    for rec in records {
        if let SplitOutcome::Success { train, test, .. } = &rec.outcome {
            for (phase, metrics) in [("train", train), ("test", test)] {
                for (metric, value) in metric_values(metrics) {
                    w.write_record([
                        rec.split.to_string(),
                        rec.c.to_string(),
                        phase.to_string(),
                        metric,
                        value.to_string(),
                    ])
                    .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
                }
            }
        }
    }
    w.flush()
        .map_err(|e| Error::data(format!("CSV flush failed: {}", e)))?;
    Ok(())
}

/// Writes the aggregate CSV (`c,metric,mean,se,count`).
pub fn write_aggregates_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot create {}: {}", path.display(), e)))?;
    w.write_record(["c", "metric", "mean", "se", "count"])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    for r in rows {
        w.write_record([
            r.c.to_string(),
            r.metric.clone(),
            r.mean.to_string(),
            r.se.to_string(),
            r.count.to_string(),
        ])
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("CSV flush failed: {}", e)))?;
    Ok(())
}

/// Writes a training trace as CSV: iteration, objective columns, soft size,
/// largest multiplier, then one residual column per constraint.
pub fn write_trace_csv(
    report: &TrainReport,
    constraint_names: &[String],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot create {}: {}", path.display(), e)))?;
    let mut header = vec![
        "iteration".to_string(),
        "objective".to_string(),
        "objective_raw".to_string(),
        "f".to_string(),
        "size".to_string(),
        "lambda_max".to_string(),
    ];
    for name in constraint_names {
        header.push(format!("g_{}", name));
    }
    w.write_record(&header)
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    let t = &report.traces;
    for i in 0..t.objective.len() {
        let mut row = vec![
            i.to_string(),
            t.objective[i].to_string(),
            t.objective_raw[i].to_string(),
            t.f[i].to_string(),
            t.size[i].to_string(),
            t.lambda_max[i].to_string(),
        ];
        for series in &t.residuals {
            row.push(series[i].to_string());
        }
        w.write_record(&row)
            .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("CSV flush failed: {}", e)))?;
    Ok(())
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parameter(format!("serialization failed: {}", e)))?;
    fs::write(path, text + "\n")?;
    Ok(())
}
