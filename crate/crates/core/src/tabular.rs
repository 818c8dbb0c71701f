//! Typed tabular data: schema, CSV ingestion, scaling, stratified batches
//! and summary tables.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    CensoredAtZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Covariate,
    Treatment,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub role: Role,
}

impl ColumnSchema {
    pub fn new(name: &str, kind: ColumnKind, role: Role) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind,
            role,
        }
    }
}

/// Schema of the Lalonde-Dehejia-Wahba job-training files shipped in `data/`.
/// Earnings are in thousands of dollars.
pub fn ldw_schema() -> Vec<ColumnSchema> {
    use ColumnKind::*;
    use Role::*;
    vec![
        ColumnSchema::new("black", Binary, Covariate),
        ColumnSchema::new("hispanic", Binary, Covariate),
        ColumnSchema::new("age", Continuous, Covariate),
        ColumnSchema::new("married", Binary, Covariate),
        ColumnSchema::new("nodegree", Binary, Covariate),
        ColumnSchema::new("education", Continuous, Covariate),
        ColumnSchema::new("re74", CensoredAtZero, Covariate),
        ColumnSchema::new("re75", CensoredAtZero, Covariate),
        ColumnSchema::new("re78", CensoredAtZero, Outcome),
        ColumnSchema::new("treat", Binary, Treatment),
    ]
}

/// Row-major table whose columns follow `schema`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Vec<ColumnSchema>,
    pub rows: Array2<f64>,
}

fn check_values(schema: &[ColumnSchema], rows: &Array2<f64>) -> Result<()> {
    if rows.ncols() != schema.len() {
        return Err(Error::Schema(format!(
            "{} columns in data, {} in schema",
            rows.ncols(),
            schema.len()
        )));
    }
    for (i, row) in rows.rows().into_iter().enumerate() {
        for (c, &v) in schema.iter().zip(row.iter()) {
            let bad = if !v.is_finite() {
                Some("value is not finite")
            } else {
                match c.kind {
                    ColumnKind::Binary if v != 0.0 && v != 1.0 => Some("binary column must be 0 or 1"),
                    ColumnKind::CensoredAtZero if v < 0.0 => Some("censored column must be nonnegative"),
                    _ => None,
                }
            };
            if let Some(msg) = bad {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: c.name.clone(),
                    message: format!("{msg} (got {v})"),
                });
            }
        }
    }
    Ok(())
}

fn check_roles(schema: &[ColumnSchema]) -> Result<()> {
    let count = |r: Role| schema.iter().filter(|c| c.role == r).count();
    if count(Role::Treatment) != 1 {
        return Err(Error::Schema("schema needs exactly one treatment column".into()));
    }
    if count(Role::Outcome) != 1 {
        return Err(Error::Schema("schema needs exactly one outcome column".into()));
    }
    if count(Role::Covariate) == 0 {
        return Err(Error::Schema("schema needs at least one covariate".into()));
    }
    if schema
        .iter()
        .any(|c| c.role == Role::Treatment && c.kind != ColumnKind::Binary)
    {
        return Err(Error::Schema("treatment column must be binary".into()));
    }
    let mut names: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Schema("duplicate column name".into()));
    }
    Ok(())
}

impl Dataset {
    /// Causal dataset: one treatment, one outcome, at least one covariate.
    pub fn new(schema: Vec<ColumnSchema>, rows: Array2<f64>) -> Result<Self> {
        check_roles(&schema)?;
        check_values(&schema, &rows)?;
        Ok(Dataset { schema, rows })
    }

    /// Plain typed table without role requirements (used for generic
    /// generator training).
    pub fn table(schema: Vec<ColumnSchema>, rows: Array2<f64>) -> Result<Self> {
        check_values(&schema, &rows)?;
        Ok(Dataset { schema, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("no column named '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<Array1<f64>> {
        Ok(self.rows.column(self.column_index(name)?).to_owned())
    }

    fn role_index(&self, role: Role) -> Result<usize> {
        self.schema
            .iter()
            .position(|c| c.role == role)
            .ok_or_else(|| Error::Schema(format!("no {role:?} column")))
    }

    pub fn treatment_index(&self) -> Result<usize> {
        self.role_index(Role::Treatment)
    }

    pub fn outcome_index(&self) -> Result<usize> {
        self.role_index(Role::Outcome)
    }

    pub fn covariate_indices(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&j| self.schema[j].role == Role::Covariate)
            .collect()
    }

    pub fn n_treated(&self) -> usize {
        match self.treatment_index() {
            Ok(t) => self.rows.column(t).iter().filter(|&&v| v == 1.0).count(),
            Err(_) => 0,
        }
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn treatment(&self) -> Result<Vec<bool>> {
        let t = self.treatment_index()?;
        Ok(self.rows.column(t).iter().map(|&v| v == 1.0).collect())
    }

    pub fn outcome(&self) -> Result<Array1<f64>> {
        Ok(self.rows.column(self.outcome_index()?).to_owned())
    }

    pub fn covariates(&self) -> Array2<f64> {
        self.rows.select(Axis(1), &self.covariate_indices())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: self.rows.select(Axis(0), idx),
        }
    }

    /// Rows with the given treatment value.
    pub fn arm(&self, treated: bool) -> Result<Dataset> {
        let w = self.treatment()?;
        let idx: Vec<usize> = (0..self.n()).filter(|&i| w[i] == treated).collect();
        Ok(self.select_rows(&idx))
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            schema: idx.iter().map(|&j| self.schema[j].clone()).collect(),
            rows: self.rows.select(Axis(1), &idx),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(self.schema.iter().map(|c| c.name.as_str()))?;
        for row in self.rows.rows() {
            w.write_record(row.iter().map(|v| format_number(*v)))?;
        }
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Read a headed CSV and validate it against `schema`. Columns not named in
/// the schema are ignored; schema order defines the column order.
pub fn load_csv(path: &Path, schema: &[ColumnSchema]) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_reader(file, schema)
}

pub fn load_reader<R: std::io::Read>(reader: R, schema: &[ColumnSchema]) -> Result<Dataset> {
    check_roles(schema)?;
    read_table(reader, schema)
}

/// Like [`load_reader`] without the role requirements.
pub fn read_table<R: std::io::Read>(reader: R, schema: &[ColumnSchema]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut pos = Vec::with_capacity(schema.len());
    for c in schema {
        match headers.iter().position(|h| h == c.name) {
            Some(p) => pos.push(p),
            None => {
                return Err(Error::Ingestion {
                    row: 0,
                    column: c.name.clone(),
                    message: "column missing from header".into(),
                })
            }
        }
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, &p) in schema.iter().zip(&pos) {
            let cell = rec.get(p).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                row: i + 1,
                column: c.name.clone(),
                message: format!("non-numeric value '{cell}'"),
            })?;
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Ingestion {
            row: 0,
            column: String::new(),
            message: "no rows".into(),
        });
    }
    let rows = Array2::from_shape_vec((n, schema.len()), data).expect("shape");
    check_values(schema, &rows)?;
    Ok(Dataset {
        schema: schema.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub kind: ColumnKind,
    pub mean: f64,
    pub sd: f64,
}

/// Per-column affine map. Continuous columns are centred and scaled,
/// censored columns only scaled, binary columns left alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ColumnScale>,
}

fn mean_sd(x: ndarray::ArrayView1<f64>) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl Scaler {
    pub fn fit(ds: &Dataset) -> Result<Scaler> {
        let mut columns = Vec::with_capacity(ds.schema.len());
        for (j, c) in ds.schema.iter().enumerate() {
            let (mean, sd) = match c.kind {
                ColumnKind::Binary => (0.0, 1.0),
                _ => {
                    let (m, s) = mean_sd(ds.rows.column(j));
                    if !(s > 0.0) {
                        return Err(Error::Schema(format!(
                            "column '{}' has zero variance and cannot be standardized",
                            c.name
                        )));
                    }
                    (m, s)
                }
            };
            columns.push(ColumnScale {
                name: c.name.clone(),
                kind: c.kind,
                mean,
                sd,
            });
        }
        Ok(Scaler { columns })
    }

    fn shift(c: &ColumnScale) -> f64 {
        match c.kind {
            ColumnKind::Continuous => c.mean,
            _ => 0.0,
        }
    }

    pub fn transform(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for (j, c) in self.columns.iter().enumerate() {
            let s = Self::shift(c);
            out.column_mut(j).mapv_inplace(|v| (v - s) / c.sd);
        }
        out
    }

    pub fn inverse_transform(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for (j, c) in self.columns.iter().enumerate() {
            let s = Self::shift(c);
            out.column_mut(j).mapv_inplace(|v| v * c.sd + s);
        }
        out
    }

    pub fn subset(&self, names: &[&str]) -> Result<Scaler> {
        let columns = names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .find(|c| c.name == *n)
                    .cloned()
                    .ok_or_else(|| Error::Schema(format!("scaler has no column '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scaler { columns })
    }
}

/// Returns the scaled dataset (schema unchanged) and the fitted scaler.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Scaler)> {
    let sc = Scaler::fit(ds)?;
    Ok((
        Dataset {
            schema: ds.schema.clone(),
            rows: sc.transform(&ds.rows),
        },
        sc,
    ))
}

pub fn inverse_transform(sc: &Scaler, rows: &Array2<f64>) -> Array2<f64> {
    sc.inverse_transform(rows)
}

/// Treated rows per batch of size `m` for a `n1`-of-`n` split.
pub fn treated_per_batch(n: usize, n1: usize, m: usize) -> Result<usize> {
    if m < 1 || m > n {
        return Err(Error::Config(format!("batch size {m} must be in 1..={n}")));
    }
    let n0 = n - n1;
    if n1 > 0 && m * n1 < n {
        return Err(Error::Config(format!(
            "cannot stratify: batch of {m} would hold fewer than one of {n1} treated units"
        )));
    }
    if n0 > 0 && m * n0 < n {
        return Err(Error::Config(format!(
            "cannot stratify: batch of {m} would hold fewer than one of {n0} control units"
        )));
    }
    let k = ((m * n1) as f64 / n as f64).round() as usize;
    Ok(k.min(n1).min(m))
}

/// One epoch of batches from a treatment indicator; each batch holds the
/// same number of treated rows and the ragged remainder is dropped.
pub fn stratified_batches_from(w: &[bool], m: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let n = w.len();
    let mut treated: Vec<usize> = (0..n).filter(|&i| w[i]).collect();
    let mut control: Vec<usize> = (0..n).filter(|&i| !w[i]).collect();
    let k1 = treated_per_batch(n, treated.len(), m)?;
    let k0 = m - k1;
    if k0 > control.len() {
        return Err(Error::Config("not enough control rows for one batch".into()));
    }
    treated.shuffle(rng);
    control.shuffle(rng);
    let nb1 = if k1 == 0 { usize::MAX } else { treated.len() / k1 };
    let nb0 = if k0 == 0 { usize::MAX } else { control.len() / k0 };
    let nb = nb1.min(nb0);
    Ok((0..nb)
        .map(|b| {
            let mut batch = Vec::with_capacity(m);
            batch.extend_from_slice(&treated[b * k1..(b + 1) * k1]);
            batch.extend_from_slice(&control[b * k0..(b + 1) * k0]);
            batch
        })
        .collect())
}

/// Stratified on the dataset's treatment column; unstratified when the
/// table has none.
pub fn stratified_batches(ds: &Dataset, m: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let w = match ds.treatment() {
        Ok(w) => w,
        Err(_) => vec![false; ds.n()],
    };
    stratified_batches_from(&w, m, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: String,
    pub column: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, arm: &str, column: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.arm == arm && r.column == column)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["arm", "column", "n", "mean", "sd", "degenerate"])?;
        for r in &self.rows {
            w.write_record([
                r.arm.clone(),
                r.column.clone(),
                r.n.to_string(),
                format!("{}", r.mean),
                format!("{}", r.sd),
                r.degenerate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Means and sample standard deviations per column, optionally per arm.
pub fn summary_stats(ds: &Dataset, split_by_treatment: bool) -> SummaryTable {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    match ds.treatment() {
        Ok(w) if split_by_treatment => {
            groups.push(("treated".into(), (0..ds.n()).filter(|&i| w[i]).collect()));
            groups.push(("control".into(), (0..ds.n()).filter(|&i| !w[i]).collect()));
        }
        _ => groups.push(("all".into(), (0..ds.n()).collect())),
    }
    let mut rows = Vec::new();
    for (arm, idx) in groups {
        let sub = ds.rows.select(Axis(0), &idx);
        for (j, c) in ds.schema.iter().enumerate() {
            let (mean, sd) = if idx.is_empty() {
                (0.0, 0.0)
            } else {
                mean_sd(sub.column(j))
            };
            rows.push(SummaryRow {
                arm: arm.clone(),
                column: c.name.clone(),
                n: idx.len(),
                mean,
                sd,
                degenerate: idx.len() < 2,
            });
        }
    }
    SummaryTable { rows }
}
