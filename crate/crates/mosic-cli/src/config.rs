//! Declarative run configuration: one JSON document drives every subcommand.
//!
//! Loading resolves all defaults immediately; the fully resolved document is
//! re-emitted next to the outputs so any run can be replayed bit-for-bit from
//! its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mosic::data::CsvSchema;
use mosic::error::{Error, Result};
use mosic::eval::CvGrid;
use mosic::pipeline::FitConfig;
use mosic::seeding::derive_seed;
use mosic::synth::DgpConfig;

/// Schema version accepted by this binary.
pub const CONFIG_VERSION: u32 = 1;

/// Seed streams: every subcommand derives its randomness from the master
/// seed through a distinct stream, so artifacts stay reproducible and
/// commands never share random state.
pub const STREAM_DATASET: u64 = 1;
pub const STREAM_FIT: u64 = 2;
pub const STREAM_EXPERIMENT: u64 = 3;
pub const STREAM_TYPEI: u64 = 4;

/// Where the observational data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Draw a synthetic dataset; the seed derives from the master seed.
    Generate { dgp: DgpConfig },
    /// Load a CSV file. Without an explicit schema the canonical layout is
    /// assumed (features `x1..xd`, `treatment`, `outcome`, optional aux).
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<CsvSchema>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Generate {
            dgp: DgpConfig::default(),
        }
    }
}

/// Multi-split experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    /// Independent train/test splits.
    pub splits: usize,
    /// Fraction of rows held out for evaluation in each split.
    pub split_fraction: f64,
    /// Hyperparameter search; `None` fits with the configured values as-is.
    pub cv: Option<CvBlock>,
    /// Group-size fractions to sweep; empty means the single configured
    /// `fit.size_c`.
    pub c_sweep: Vec<f64>,
    /// Worker threads; `None` uses all available hardware parallelism.
    pub parallelism: Option<usize>,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            splits: 1,
            split_fraction: 0.5,
            cv: None,
            c_sweep: Vec::new(),
            parallelism: None,
        }
    }
}

/// Cross-validation block: the grid plus the fold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvBlock {
    pub betas: Vec<f64>,
    pub model_sizes: Vec<usize>,
    pub folds: usize,
}

impl Default for CvBlock {
    fn default() -> Self {
        let grid = CvGrid::default();
        CvBlock {
            betas: grid.betas,
            model_sizes: grid.model_sizes,
            folds: 5,
        }
    }
}

impl CvBlock {
    pub fn grid(&self) -> CvGrid {
        CvGrid {
            betas: self.betas.clone(),
            model_sizes: self.model_sizes.clone(),
        }
    }
}

/// Null-study settings (the master seed supplies the per-instance seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeIBlock {
    pub instances: usize,
    pub bootstrap_iters: usize,
    pub significance: f64,
    pub size_c: f64,
    pub split_fraction: f64,
}

impl Default for TypeIBlock {
    fn default() -> Self {
        TypeIBlock {
            instances: 30,
            bootstrap_iters: 2000,
            significance: 0.05,
            size_c: 0.5,
            split_fraction: 0.5,
        }
    }
}

/// The complete declarative run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; all command-level randomness derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub fit: FitConfig,
    pub experiment: ExperimentBlock,
    pub typei: TypeIBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            output_dir: PathBuf::from("mosic_out"),
            dataset: DatasetSpec::default(),
            fit: FitConfig::default(),
            experiment: ExperimentBlock::default(),
            typei: TypeIBlock::default(),
        }
    }
}

impl RunConfig {
    /// One-pass validation of every block, before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::parameter(format!(
                "config version {} is not supported (expected {})",
                self.version, CONFIG_VERSION
            )));
        }
        if let DatasetSpec::Generate { dgp } = &self.dataset {
            dgp.validate()?;
        }
        self.fit.validate()?;
        let exp = &self.experiment;
        if exp.splits == 0 {
            return Err(Error::parameter("experiment.splits must be >= 1"));
        }
        if !(exp.split_fraction > 0.0 && exp.split_fraction < 1.0) {
            return Err(Error::parameter(format!(
                "experiment.split_fraction must lie in (0, 1), got {}",
                exp.split_fraction
            )));
        }
        for &c in &exp.c_sweep {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::parameter(format!(
                    "c_sweep values must lie in (0, 1), got {}",
                    c
                )));
            }
        }
        if let Some(cv) = &exp.cv {
            cv.grid().validate()?;
            if cv.folds < 2 {
                return Err(Error::parameter("cv.folds must be >= 2"));
            }
        }
        let ti = &self.typei;
        if ti.instances == 0 {
            return Err(Error::parameter("typei.instances must be >= 1"));
        }
        if ti.bootstrap_iters < 100 {
            return Err(Error::parameter("typei.bootstrap_iters must be >= 100"));
        }
        if !(ti.significance > 0.0 && ti.significance <= 1.0) {
            return Err(Error::parameter(format!(
                "typei.significance must lie in (0, 1], got {}",
                ti.significance
            )));
        }
        if !(ti.size_c > 0.0 && ti.size_c < 1.0) {
            return Err(Error::parameter(format!(
                "typei.size_c must lie in (0, 1), got {}",
                ti.size_c
            )));
        }
        if !(ti.split_fraction > 0.0 && ti.split_fraction < 1.0) {
            return Err(Error::parameter(format!(
                "typei.split_fraction must lie in (0, 1), got {}",
                ti.split_fraction
            )));
        }
        Ok(())
    }

    /// Parses a config file (JSON), treating malformed documents as
    /// configuration errors.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parameter(format!("invalid config {}: {}", path.display(), e)))?;
        Ok(cfg)
    }

    /// Loads the dataset this run operates on.
    pub fn load_dataset(&self) -> Result<mosic::data::Dataset> {
        match &self.dataset {
            DatasetSpec::Generate { dgp } => {
                mosic::synth::generate(dgp, derive_seed(self.seed, STREAM_DATASET))
            }
            DatasetSpec::Csv { path, schema } => {
                let schema = match schema {
                    Some(s) => s.clone(),
                    None => CsvSchema::canonical(infer_feature_count(path)?),
                };
                mosic::data::load_csv(path, &schema)
            }
        }
    }

    /// Writes the fully resolved configuration next to the outputs.
    pub fn emit_resolved(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parameter(format!("config serialization failed: {}", e)))?;
        fs::write(out_dir.join("resolved_config.json"), text + "\n")?;
        Ok(())
    }
}

/// Counts `x1..xd` headers in a canonical-layout CSV.
fn infer_feature_count(path: &Path) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {}", path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("bad CSV header: {}", e)))?;
    let mut d = 0;
    while headers.iter().any(|h| h.trim() == format!("x{}", d + 1)) {
        d += 1;
    }
    if d == 0 {
        return Err(Error::data(format!(
            "{}: no x1..xd feature columns found; provide an explicit schema",
            path.display()
        )));
    }
    Ok(d)
}
