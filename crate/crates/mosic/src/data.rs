//! Dataset representation, CSV ingestion/serialization, and split utilities.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeding;

/// Names of the optional per-sample auxiliary columns, in canonical order.
pub const AUX_NAMES: [&str; 5] = ["true_ite", "true_label", "risk", "cost", "sensitive"];

/// Optional per-sample auxiliary columns carried alongside the observed data.
///
/// `true_ite` / `true_label` exist only for synthetic data where ground truth
/// is known; `risk` / `cost` / `sensitive` feed the extra constraint families.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxColumns {
    pub true_ite: Option<Vec<f64>>,
    pub true_label: Option<Vec<f64>>,
    pub risk: Option<Vec<f64>>,
    pub cost: Option<Vec<f64>>,
    pub sensitive: Option<Vec<f64>>,
}

impl AuxColumns {
    fn all_present(&self) -> Vec<(&'static str, &Vec<f64>)> {
        let mut v = Vec::new();
        if let Some(c) = &self.true_ite {
            v.push(("true_ite", c));
        }
        if let Some(c) = &self.true_label {
            v.push(("true_label", c));
        }
        if let Some(c) = &self.risk {
            v.push(("risk", c));
        }
        if let Some(c) = &self.cost {
            v.push(("cost", c));
        }
        if let Some(c) = &self.sensitive {
            v.push(("sensitive", c));
        }
        v
    }

    /// Looks an auxiliary column up by name.
    pub fn by_name(&self, name: &str) -> Option<&Vec<f64>> {
        match name {
            "true_ite" => self.true_ite.as_ref(),
            "true_label" => self.true_label.as_ref(),
            "risk" => self.risk.as_ref(),
            "cost" => self.cost.as_ref(),
            "sensitive" => self.sensitive.as_ref(),
            _ => None,
        }
    }

    fn select_rows(&self, idx: &[usize]) -> AuxColumns {
        let pick = |c: &Option<Vec<f64>>| c.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect());
        AuxColumns {
            true_ite: pick(&self.true_ite),
            true_label: pick(&self.true_label),
            risk: pick(&self.risk),
            cost: pick(&self.cost),
            sensitive: pick(&self.sensitive),
        }
    }
}

/// Observational dataset: covariates, binary treatment, outcome, and
/// optional auxiliary columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub aux: AuxColumns,
}

impl Dataset {
    /// Validates the shape/content invariants and assembles a dataset.
    pub fn new(
        features: Matrix,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        aux: AuxColumns,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 || features.ncols() == 0 {
            return Err(Error::data("dataset needs n >= 1 and d >= 1"));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::data(format!(
                "length mismatch: features {} rows, treatment {}, outcome {}",
                n,
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(&bad) = treatment.iter().find(|&&a| a > 1) {
            return Err(Error::data(format!(
                "treatment values must be 0 or 1, found {}",
                bad
            )));
        }
        if !features.all_finite() || outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite value in features or outcome"));
        }
        for (name, col) in aux.all_present() {
            if col.len() != n {
                return Err(Error::data(format!(
                    "aux column '{}' has {} entries, expected {}",
                    name,
                    col.len(),
                    n
                )));
            }
        }
        Ok(Dataset {
            features,
            treatment,
            outcome,
            aux,
        })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Covariate dimension.
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Number of treated samples.
    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    /// New dataset holding the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::parameter("row selection must be non-empty"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::parameter(format!(
                "row index {} out of bounds for {} samples",
                bad,
                self.n()
            )));
        }
        Dataset::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.treatment[i]).collect(),
            idx.iter().map(|&i| self.outcome[i]).collect(),
            self.aux.select_rows(idx),
        )
    }
}

/// Column mapping used by [`load_csv`].
///
/// `features` lists covariate column headers in matrix-column order. Aux
/// entries map a canonical aux name (see [`AUX_NAMES`]) to a CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub aux: BTreeMap<String, String>,
}

impl CsvSchema {
    /// Schema matching the files produced by [`write_csv`]: features named
    /// `x1..xd`, `treatment`, `outcome`, and canonical aux headers.
    pub fn canonical(d: usize) -> CsvSchema {
        CsvSchema {
            features: (1..=d).map(|j| format!("x{}", j)).collect(),
            treatment: "treatment".to_string(),
            outcome: "outcome".to_string(),
            aux: AUX_NAMES
                .iter()
                .map(|&a| (a.to_string(), a.to_string()))
                .collect(),
        }
    }
}

/// Reads a dataset from CSV with an explicit column mapping.
///
/// Every schema-listed feature/treatment/outcome column must exist; aux
/// mappings are applied only when the header is present. Cells must parse as
/// finite numbers and treatment must be exactly 0 or 1; violations report the
/// offending row and column.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {}", path.display(), e)))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("bad CSV header: {}", e)))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let col_index = |name: &str| -> Option<usize> { headers.iter().position(|h| h == name) };
    let require = |name: &str| -> Result<usize> {
        col_index(name).ok_or_else(|| Error::data(format!("missing required column '{}'", name)))
    };

    if schema.features.is_empty() {
        return Err(Error::parameter("schema lists no feature columns"));
    }
    let feat_idx: Vec<usize> = schema
        .features
        .iter()
        .map(|f| require(f))
        .collect::<Result<_>>()?;
    let treat_idx = require(&schema.treatment)?;
    let out_idx = require(&schema.outcome)?;
    let aux_idx: Vec<(String, usize)> = schema
        .aux
        .iter()
        .filter_map(|(canon, header)| col_index(header).map(|i| (canon.clone(), i)))
        .collect();
    for (canon, _) in &aux_idx {
        if !AUX_NAMES.contains(&canon.as_str()) {
            return Err(Error::parameter(format!(
                "unknown aux column kind '{}'; expected one of {:?}",
                canon, AUX_NAMES
            )));
        }
    }

    let parse_cell = |raw: &str, row: usize, col: &str| -> Result<f64> {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("row {}, column '{}': non-numeric cell '{}'", row + 1, col, raw)))?;
        if !v.is_finite() {
            return Err(Error::data(format!(
                "row {}, column '{}': non-finite value",
                row + 1,
                col
            )));
        }
        Ok(v)
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut aux_cols: BTreeMap<String, Vec<f64>> = aux_idx
        .iter()
        .map(|(c, _)| (c.clone(), Vec::new()))
        .collect();

    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("row {}: {}", r + 1, e)))?;
        let cell = |i: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(i)
                .ok_or_else(|| Error::data(format!("row {}: missing cell for '{}'", r + 1, name)))?;
            parse_cell(raw, r, name)
        };
        let mut feat_row = Vec::with_capacity(feat_idx.len());
        for (&i, name) in feat_idx.iter().zip(&schema.features) {
            feat_row.push(cell(i, name)?);
        }
        rows.push(feat_row);
        let a = cell(treat_idx, &schema.treatment)?;
        if a != 0.0 && a != 1.0 {
            return Err(Error::data(format!(
                "row {}, column '{}': treatment must be 0 or 1, found {}",
                r + 1,
                schema.treatment,
                a
            )));
        }
        treatment.push(a as u8);
        outcome.push(cell(out_idx, &schema.outcome)?);
        for (canon, i) in &aux_idx {
            let v = cell(*i, canon)?;
            aux_cols.get_mut(canon).unwrap().push(v);
        }
    }
    if rows.is_empty() {
        return Err(Error::data("CSV contains no data rows"));
    }

    let mut aux = AuxColumns::default();
    for (canon, col) in aux_cols {
        match canon.as_str() {
            "true_ite" => aux.true_ite = Some(col),
            "true_label" => aux.true_label = Some(col),
            "risk" => aux.risk = Some(col),
            "cost" => aux.cost = Some(col),
            "sensitive" => aux.sensitive = Some(col),
            _ => unreachable!(),
        }
    }
    Dataset::new(Matrix::from_rows(&rows)?, treatment, outcome, aux)
}

/// Writes a dataset as CSV with canonical headers (`x1..xd`, `treatment`,
/// `outcome`, then any present aux columns).
///
/// Reals are written with Rust's shortest round-trip formatting, so
/// `load_csv` recovers bit-identical values.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot create {}: {}", path.display(), e)))?;
    let aux_present = ds.aux.all_present();
    let mut header: Vec<String> = (1..=ds.d()).map(|j| format!("x{}", j)).collect();
    header.push("treatment".to_string());
    header.push("outcome".to_string());
    for (name, _) in &aux_present {
        header.push((*name).to_string());
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        record.push(ds.treatment[i].to_string());
        record.push(ds.outcome[i].to_string());
        for (_, col) in &aux_present {
            record.push(col[i].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::data(format!("CSV write failed: {}", e)))?;
    }
    writer
        .flush()
        .map_err(|e| Error::data(format!("CSV flush failed: {}", e)))?;
    Ok(())
}

/// Index pair describing one train/test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits a dataset into disjoint train/test parts by seeded shuffle.
///
/// The train part receives `round(n * (1 - test_fraction))` samples and the
/// test part the remainder; both must end up non-empty.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::parameter(format!(
            "test_fraction must lie in (0,1), got {}",
            test_fraction
        )));
    }
    let n = ds.n();
    let n_train = ((n as f64) * (1.0 - test_fraction)).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::parameter(format!(
            "split of {} samples at test_fraction {} leaves an empty part",
            n, test_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::rng_from_seed(seed));
    let (train_idx, test_idx) = idx.split_at(n_train);
    Ok((ds.select_rows(train_idx)?, ds.select_rows(test_idx)?))
}

/// Builds `k` disjoint folds by seeded shuffle; the first `n mod k` folds are
/// one sample larger. Each entry pairs a fold (test) with its complement.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<SplitIndices>> {
    if k < 2 {
        return Err(Error::parameter("k-fold requires k >= 2"));
    }
    if k > n {
        return Err(Error::parameter(format!(
            "cannot build {} folds from {} samples",
            k, n
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::rng_from_seed(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test: Vec<usize> = idx[start..start + size].to_vec();
        let train: Vec<usize> = idx[..start]
            .iter()
            .chain(idx[start + size..].iter())
            .copied()
            .collect();
        folds.push(SplitIndices { train, test });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -(i as f64)]).collect();
        Dataset::new(
            Matrix::from_rows(&rows).unwrap(),
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| i as f64 * 0.5).collect(),
            AuxColumns::default(),
        )
        .unwrap()
    }

    #[test]
    fn constructor_rejects_bad_treatment() {
        let m = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let err = Dataset::new(m, vec![0, 2], vec![0.0, 1.0], AuxColumns::default());
        assert!(err.is_err());
    }

    #[test]
    fn constructor_rejects_short_aux() {
        let m = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let aux = AuxColumns {
            risk: Some(vec![0.1]),
            ..AuxColumns::default()
        };
        assert!(Dataset::new(m, vec![0, 1], vec![0.0, 1.0], aux).is_err());
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let ds = toy_dataset(10);
        let (tr, te) = train_test_split(&ds, 0.3, 11).unwrap();
        assert_eq!(tr.n(), 7);
        assert_eq!(te.n(), 3);
    }

    #[test]
    fn split_is_seed_deterministic_and_disjoint() {
        let ds = toy_dataset(20);
        let (a_tr, a_te) = train_test_split(&ds, 0.5, 3).unwrap();
        let (b_tr, b_te) = train_test_split(&ds, 0.5, 3).unwrap();
        assert_eq!(a_tr, b_tr);
        assert_eq!(a_te, b_te);
        // disjoint and exhaustive: every original x1 value appears exactly once
        let mut seen: Vec<i64> = a_tr
            .features
            .column(0)
            .into_iter()
            .chain(a_te.features.column(0))
            .map(|v| v as i64)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..20).collect::<Vec<i64>>());
    }

    #[test]
    fn kfold_partitions_everything() {
        let folds = kfold_indices(10, 3, 5).unwrap();
        assert_eq!(folds.len(), 3);
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<usize>>());
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 10);
            assert!(f.test.iter().all(|i| !f.train.contains(i)));
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let mut ds = toy_dataset(6);
        ds.aux.true_ite = Some(vec![0.1, -0.25, 1.0 / 3.0, 0.0, 5e-17, 2.5]);
        ds.aux.risk = Some(vec![0.1; 6]);
        write_csv(&ds, &path).unwrap();
        let schema = CsvSchema::canonical(2);
        let back = load_csv(&path, &schema).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_csv_reports_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x1,treatment,outcome\n1.0,0,2.0\noops,1,3.0\n").unwrap();
        let err = load_csv(&path, &CsvSchema::canonical(1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "unexpected message: {}", msg);
        assert!(msg.contains("x1"), "unexpected message: {}", msg);
    }

    #[test]
    fn load_csv_rejects_fractional_treatment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frac.csv");
        std::fs::write(&path, "x1,treatment,outcome\n1.0,0.5,2.0\n").unwrap();
        assert!(load_csv(&path, &CsvSchema::canonical(1)).is_err());
    }
}
