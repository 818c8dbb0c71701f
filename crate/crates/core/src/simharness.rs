//! Synthetic populations with known effects and the Monte Carlo engine that
//! scores estimators on repeated draws from them.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::index::sample as sample_index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{run_selected, CausalData, EstimatorConfig, EstimatorId};
use crate::penalty::PenaltySpec;
use crate::rng::{derive_seed, rng_from_seed, stream, stream_seed, Rng};
use crate::tabular::{ColumnKind, ColumnSchema, Dataset, Role};
use crate::wgan::{architecture_preset, sample, train_two_stage, GeneratorModel, TrainConfig};

pub const POPULATION_MAGIC: &[u8; 8] = b"GMCPOP1\n";
pub const POPULATION_FORMAT_VERSION: u32 = 1;
const CHUNK: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the covariate and outcome generator documents.
    pub gx_hash: String,
    pub gy_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub covariates: Vec<ColumnSchema>,
    pub treatment: String,
    pub outcome: String,
    pub outcome_kind: ColumnKind,
    pub x: Array2<f64>,
    pub w: Vec<bool>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub tau_true: f64,
    pub provenance: Provenance,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn model_hash(model: &GeneratorModel) -> Result<String> {
    Ok(hex(&Sha256::digest(model.to_json()?.as_bytes())))
}

impl SyntheticPopulation {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn n_treated(&self) -> usize {
        self.w.iter().filter(|&&b| b).count()
    }

    /// Observed outcome `W·Y(1) + (1−W)·Y(0)`.
    pub fn observed_outcome(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| if self.w[i] { self.y1[i] } else { self.y0[i] })
            .collect()
    }

    pub fn causal_data(&self) -> CausalData {
        CausalData {
            x: self.x.clone(),
            w: self.w.clone(),
            y: self.observed_outcome(),
        }
    }

    /// The population as an observed dataset with the source schema.
    pub fn observed_dataset(&self) -> Result<Dataset> {
        let n = self.n();
        let d = self.x.ncols();
        let y = self.observed_outcome();
        let mut rows = Array2::zeros((n, d + 2));
        rows.slice_mut(ndarray::s![.., ..d]).assign(&self.x);
        for i in 0..n {
            rows[[i, d]] = if self.w[i] { 1.0 } else { 0.0 };
            rows[[i, d + 1]] = y[i];
        }
        let mut schema = self.covariates.clone();
        schema.push(ColumnSchema::new(&self.treatment, ColumnKind::Binary, Role::Treatment));
        schema.push(ColumnSchema::new(&self.outcome, self.outcome_kind, Role::Outcome));
        Dataset::table(schema, rows)
    }

    /// SHA-256 over the header fields and every stored value.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.x.ncols() as u64).to_le_bytes());
        for c in &self.covariates {
            h.update(c.name.as_bytes());
            h.update([0u8]);
        }
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        for &b in &self.w {
            h.update([b as u8]);
        }
        for v in self.y0.iter().chain(&self.y1) {
            h.update(v.to_le_bytes());
        }
        h.update(self.tau_true.to_le_bytes());
        hex(&h.finalize())
    }
}

/// `(1/N1) Σ_{W=1} (Y(1) − Y(0))`.
pub fn ground_truth_att(w: &[bool], y0: &[f64], y1: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    let mut n1 = 0usize;
    for i in 0..w.len() {
        if w[i] {
            s += y1[i] - y0[i];
            n1 += 1;
        }
    }
    if n1 == 0 {
        return Err(Error::Contract("ground truth needs at least one treated unit".into()));
    }
    Ok(s / n1 as f64)
}

fn sample_chunked(model: &GeneratorModel, labels: Option<&Array2<f64>>, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    let d = model.generated.len();
    let mut out = Array2::zeros((n, d));
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let l = labels.map(|l| l.slice(ndarray::s![start..end, ..]).to_owned());
        let part = sample(model, l.as_ref(), end - start, rng)?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&part);
        start = end;
    }
    Ok(out)
}

fn outcome_labels(gy: &GeneratorModel, cov_names: &[String], treatment: &str, x: &Array2<f64>, arm: f64) -> Result<Array2<f64>> {
    let n = x.nrows();
    let mut l = Array2::zeros((n, gy.labels.len()));
    for (k, c) in gy.labels.iter().enumerate() {
        if c.name == treatment {
            l.column_mut(k).fill(arm);
        } else {
            let j = cov_names
                .iter()
                .position(|s| s == &c.name)
                .ok_or_else(|| Error::Contract(format!("outcome generator label '{}' is not a generated covariate", c.name)))?;
            l.column_mut(k).assign(&x.column(j));
        }
    }
    Ok(l)
}

/// Draw a population of `n` units: the first `round(n·treated_fraction)`
/// are treated, covariates come from `gx` given the arm, and both potential
/// outcomes come independently from `gy`.
pub fn synthesize_population(gx: &GeneratorModel, gy: &GeneratorModel, n: usize, treated_fraction: f64, seed: u64) -> Result<SyntheticPopulation> {
    if !(treated_fraction > 0.0 && treated_fraction < 1.0) {
        return Err(Error::Config(format!("treated fraction must be in (0, 1), got {treated_fraction}")));
    }
    if gx.labels.len() != 1 {
        return Err(Error::Contract("covariate generator must condition on the treatment column only".into()));
    }
    if gy.generated.len() != 1 {
        return Err(Error::Contract("outcome generator must produce exactly one column".into()));
    }
    let treatment = gx.labels[0].name.clone();
    let outcome = gy.generated[0].name.clone();
    let cov_names = gx.generated_names();
    let n1 = ((n as f64) * treated_fraction).round() as usize;
    let w: Vec<bool> = (0..n).map(|i| i < n1).collect();
    let wl = Array2::from_shape_fn((n, 1), |(i, _)| if w[i] { 1.0 } else { 0.0 });
    let x = sample_chunked(gx, Some(&wl), n, &mut stream(seed, "population-x"))?;
    let l0 = outcome_labels(gy, &cov_names, &treatment, &x, 0.0)?;
    let l1 = outcome_labels(gy, &cov_names, &treatment, &x, 1.0)?;
    let y0 = sample_chunked(gy, Some(&l0), n, &mut stream(seed, "population-y0"))?.column(0).to_vec();
    let y1 = sample_chunked(gy, Some(&l1), n, &mut stream(seed, "population-y1"))?.column(0).to_vec();
    let tau_true = if n1 > 0 { ground_truth_att(&w, &y0, &y1)? } else { f64::NAN };
    Ok(SyntheticPopulation {
        covariates: gx.generated.clone(),
        treatment,
        outcome,
        outcome_kind: gy.generated[0].kind,
        x,
        w,
        y0,
        y1,
        tau_true,
        provenance: Provenance {
            seed,
            gx_hash: model_hash(gx)?,
            gy_hash: model_hash(gy)?,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PopulationHeader {
    format_version: u32,
    n: usize,
    d_x: usize,
    covariates: Vec<ColumnSchema>,
    treatment: String,
    outcome: String,
    outcome_kind: ColumnKind,
    tau_true: f64,
    provenance: Provenance,
    hash: String,
}

/// Columnar binary layout: magic, little-endian u32 header length, JSON
/// header, then each covariate column, W, Y(0) and Y(1) as f64 LE.
pub fn write_population<W: Write>(pop: &SyntheticPopulation, mut out: W) -> Result<()> {
    let header = PopulationHeader {
        format_version: POPULATION_FORMAT_VERSION,
        n: pop.n(),
        d_x: pop.x.ncols(),
        covariates: pop.covariates.clone(),
        treatment: pop.treatment.clone(),
        outcome: pop.outcome.clone(),
        outcome_kind: pop.outcome_kind,
        tau_true: pop.tau_true,
        provenance: pop.provenance.clone(),
        hash: pop.hash(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(POPULATION_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(pop.n() * 8);
    let mut col = |vals: &mut dyn Iterator<Item = f64>, out: &mut W| -> Result<()> {
        buf.clear();
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    };
    for j in 0..pop.x.ncols() {
        col(&mut pop.x.column(j).iter().copied(), &mut out)?;
    }
    col(&mut pop.w.iter().map(|&b| if b { 1.0 } else { 0.0 }), &mut out)?;
    col(&mut pop.y0.iter().copied(), &mut out)?;
    col(&mut pop.y1.iter().copied(), &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_population<R: Read>(mut input: R) -> Result<SyntheticPopulation> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| Error::Format("population file too short".into()))?;
    if &magic != POPULATION_MAGIC {
        return Err(Error::Format("not a population file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let h: PopulationHeader = serde_json::from_slice(&json)?;
    if h.format_version != POPULATION_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "population format version {} is not supported (expected {})",
            h.format_version, POPULATION_FORMAT_VERSION
        )));
    }
    if h.covariates.len() != h.d_x {
        return Err(Error::Format("header covariate list does not match d_x".into()));
    }
    let mut read_col = |n: usize| -> Result<Vec<f64>> {
        let mut b = vec![0u8; n * 8];
        input
            .read_exact(&mut b)
            .map_err(|_| Error::Format("population file truncated".into()))?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let mut x = Array2::zeros((h.n, h.d_x));
    for j in 0..h.d_x {
        let c = read_col(h.n)?;
        x.column_mut(j).assign(&ndarray::Array1::from(c));
    }
    let w: Vec<bool> = read_col(h.n)?.into_iter().map(|v| v == 1.0).collect();
    let y0 = read_col(h.n)?;
    let y1 = read_col(h.n)?;
    let pop = SyntheticPopulation {
        covariates: h.covariates,
        treatment: h.treatment,
        outcome: h.outcome,
        outcome_kind: h.outcome_kind,
        x,
        w,
        y0,
        y1,
        tau_true: h.tau_true,
        provenance: h.provenance,
    };
    if pop.hash() != h.hash {
        return Err(Error::Format("population content hash mismatch".into()));
    }
    Ok(pop)
}

pub fn save_population(pop: &SyntheticPopulation, path: &Path) -> Result<()> {
    write_population(pop, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_population(path: &Path) -> Result<SyntheticPopulation> {
    read_population(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Keep the population's treated share exactly in every draw.
    #[default]
    Stratified,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    /// Draw size; `None` means the size of the source data.
    pub n: Option<usize>,
    pub reps: usize,
    pub estimators: Vec<EstimatorId>,
    pub estimator: EstimatorConfig,
    pub sampling: Sampling,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            n: None,
            reps: 2000,
            estimators: EstimatorId::all(),
            estimator: EstimatorConfig::default(),
            sampling: Sampling::Stratified,
            threads: 0,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = self.estimator.validate();
        if self.reps < 2 {
            v.push(format!("simulate.reps must be >= 2, got {}", self.reps));
        }
        if self.estimators.is_empty() {
            v.push("simulate.estimators must not be empty".into());
        }
        if self.n == Some(0) {
            v.push("simulate.n must be >= 1".into());
        }
        v
    }
}

/// Row indices of one draw of size `n`.
pub fn draw_indices(w: &[bool], n: usize, sampling: Sampling, rng: &mut Rng) -> Result<Vec<usize>> {
    let big_n = w.len();
    if n > big_n {
        return Err(Error::Config(format!("draw size {n} exceeds population size {big_n}")));
    }
    match sampling {
        Sampling::Uniform => {
            let mut v = sample_index(rng, big_n, n).into_vec();
            v.sort_unstable();
            Ok(v)
        }
        Sampling::Stratified => {
            let treated: Vec<usize> = (0..big_n).filter(|&i| w[i]).collect();
            let control: Vec<usize> = (0..big_n).filter(|&i| !w[i]).collect();
            let n1 = ((n as f64) * treated.len() as f64 / big_n as f64).round() as usize;
            let n1 = n1.min(treated.len()).min(n);
            let n0 = n - n1;
            if n0 > control.len() {
                return Err(Error::Config("not enough controls for the requested draw".into()));
            }
            let mut v: Vec<usize> = sample_index(rng, treated.len(), n1).into_iter().map(|k| treated[k]).collect();
            v.extend(sample_index(rng, control.len(), n0).into_iter().map(|k| control[k]));
            v.sort_unstable();
            Ok(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub estimator: String,
    pub rmse: f64,
    pub bias: f64,
    pub sdev: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub successes: usize,
    pub failures: usize,
    pub flags: Vec<String>,
}

/// Aggregates per-draw `(estimate, se)` pairs; `None` marks a failed draw.
/// The spread uses denominator R so that `rmse² = bias² + sdev²`.
pub fn summarize(name: &str, tau_true: f64, draws: &[Option<(f64, f64)>]) -> MetricRow {
    let ok: Vec<(f64, f64)> = draws.iter().flatten().copied().collect();
    let failures = draws.len() - ok.len();
    let mut flags = Vec::new();
    if ok.is_empty() {
        return MetricRow {
            estimator: name.to_string(),
            rmse: f64::NAN,
            bias: f64::NAN,
            sdev: f64::NAN,
            coverage: f64::NAN,
            mean_se: f64::NAN,
            successes: 0,
            failures,
            flags: vec!["every draw failed".into()],
        };
    }
    let r = ok.len() as f64;
    let mean = ok.iter().map(|p| p.0).sum::<f64>() / r;
    let bias = mean - tau_true;
    let sdev = (ok.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / r).sqrt();
    let mut zero_se = 0;
    let covered = ok
        .iter()
        .filter(|&&(t, se)| {
            if se == 0.0 {
                zero_se += 1;
                (t - tau_true).abs() <= 1e-12 * tau_true.abs().max(1.0)
            } else {
                (t - tau_true).abs() <= 1.96 * se
            }
        })
        .count();
    if zero_se > 0 {
        flags.push(format!("zero se in {zero_se} draws"));
    }
    if failures > 0 {
        flags.push(format!("{failures} draws failed"));
    }
    MetricRow {
        estimator: name.to_string(),
        rmse: (bias * bias + sdev * sdev).sqrt(),
        bias,
        sdev,
        coverage: covered as f64 / r,
        mean_se: ok.iter().map(|p| p.1).sum::<f64>() / r,
        successes: ok.len(),
        failures,
        flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n: usize,
    pub n_treated: usize,
    pub reps: usize,
    pub seed: u64,
    pub tau_true: f64,
    pub rows: Vec<MetricRow>,
    /// Per-draw estimates per estimator, in replication order.
    #[serde(skip)]
    pub draws: Vec<Vec<Option<(f64, f64)>>>,
}

impl MonteCarloReport {
    pub fn row(&self, estimator: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let f = crate::tabular::format_number;
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["estimator", "rmse", "bias", "sdev", "coverage", "mean_se", "successes", "failures", "flags"])?;
        for r in &self.rows {
            wr.write_record([
                r.estimator.clone(),
                f(r.rmse),
                f(r.bias),
                f(r.sdev),
                f(r.coverage),
                f(r.mean_se),
                r.successes.to_string(),
                r.failures.to_string(),
                r.flags.join("; "),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_draws_csv<W: Write>(&self, out: W) -> Result<()> {
        let f = crate::tabular::format_number;
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["rep", "estimator", "estimate", "se"])?;
        for (k, row) in self.rows.iter().enumerate() {
            for (r, d) in self.draws[k].iter().enumerate() {
                let (e, s) = d.map(|(e, s)| (f(e), f(s))).unwrap_or_default();
                wr.write_record([r.to_string(), row.estimator.clone(), e, s])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Replication `r` uses seed `derive_seed(seed, r)` for both its draw and
/// its estimators, so aggregates do not depend on the schedule.
pub fn monte_carlo(pop: &SyntheticPopulation, n: usize, cfg: &MonteCarloConfig, seed: u64) -> Result<MonteCarloReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if pop.n_treated() == 0 {
        return Err(Error::Contract("population has no treated units".into()));
    }
    let y = pop.observed_outcome();
    let one = |r: usize| -> Result<Vec<Option<(f64, f64)>>> {
        let s = derive_seed(seed, r as u64);
        let mut rng = rng_from_seed(stream_seed(s, "draw"));
        let idx = draw_indices(&pop.w, n, cfg.sampling, &mut rng)?;
        let data = CausalData {
            x: pop.x.select(Axis(0), &idx),
            w: idx.iter().map(|&i| pop.w[i]).collect(),
            y: idx.iter().map(|&i| y[i]).collect(),
        };
        let runs = run_selected(&data, &cfg.estimators, &cfg.estimator, s)?;
        Ok(runs
            .iter()
            .map(|run| run.result.as_ref().ok().map(|v| (v.estimate, v.se)))
            .collect())
    };
    let per_rep: Vec<Vec<Option<(f64, f64)>>> = pool(cfg.threads)?.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|r| one(r).unwrap_or_else(|_| vec![None; cfg.estimators.len()]))
            .collect()
    });
    let n_treated = draw_indices(&pop.w, n, cfg.sampling, &mut rng_from_seed(0))?
        .iter()
        .filter(|&&i| pop.w[i])
        .count();
    let mut rows = Vec::new();
    let mut draws = Vec::new();
    for (k, id) in cfg.estimators.iter().enumerate() {
        let d: Vec<Option<(f64, f64)>> = per_rep.iter().map(|v| v[k]).collect();
        rows.push(summarize(&id.name(), pop.tau_true, &d));
        draws.push(d);
    }
    Ok(MonteCarloReport {
        n,
        n_treated: if cfg.sampling == Sampling::Stratified { n_treated } else { 0 },
        reps: cfg.reps,
        seed,
        tau_true: pop.tau_true,
        rows,
        draws,
    })
}

/// Settings of one train, synthesize and simulate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train_x: TrainConfig,
    pub train_y: TrainConfig,
    pub penalty: Option<PenaltySpec>,
    pub population_size: usize,
    pub simulate: MonteCarloConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_x: TrainConfig::default(),
            train_y: TrainConfig::default(),
            penalty: None,
            population_size: 1_000_000,
            simulate: MonteCarloConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub report: MonteCarloReport,
    pub population_hash: String,
}

fn source_fraction(ds: &Dataset) -> Result<f64> {
    Ok(ds.n_treated() as f64 / ds.n() as f64)
}

/// Trains both generators on `train`, draws a population with `train`'s
/// treated share and runs the harness with draws of size `n`.
pub fn run_pipeline(train: &Dataset, n: usize, cfg: &PipelineConfig, seed: u64) -> Result<PipelineRun> {
    let mut cx = cfg.train_x.clone();
    let mut cy = cfg.train_y.clone();
    cx.seed = stream_seed(seed, "train-x");
    cy.seed = stream_seed(seed, "train-y");
    let (gx, gy) = train_two_stage(train, &cx, &cy, cfg.penalty.as_ref())?;
    let pop = synthesize_population(&gx, &gy, cfg.population_size, source_fraction(train)?, stream_seed(seed, "population"))?;
    let report = monte_carlo(&pop, n, &cfg.simulate, stream_seed(seed, "simulate"))?;
    Ok(PipelineRun {
        report,
        population_hash: pop.hash(),
    })
}

/// Rows drawn without replacement within each arm; `fraction = 1` keeps
/// every row in the original order.
pub fn subsample_rows(ds: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let w = ds.treatment()?;
    let mut idx = Vec::new();
    for arm in [true, false] {
        let pool: Vec<usize> = (0..w.len()).filter(|&i| w[i] == arm).collect();
        let k = ((pool.len() as f64) * fraction).round() as usize;
        idx.extend(sample_index(rng, pool.len(), k).into_iter().map(|j| pool[j]));
    }
    idx.sort_unstable();
    if idx.is_empty() {
        return Err(Error::Config("subsample is empty".into()));
    }
    Ok(ds.select_rows(&idx))
}

/// Mean and spread of one metric over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub estimator: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub runs: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleStudy {
    pub runs: Vec<std::result::Result<PipelineRun, String>>,
    pub summary: Vec<MetricSummary>,
}

const METRICS: [&str; 4] = ["rmse", "bias", "sdev", "coverage"];

fn metric(r: &MetricRow, m: &str) -> f64 {
    match m {
        "rmse" => r.rmse,
        "bias" => r.bias,
        "sdev" => r.sdev,
        _ => r.coverage,
    }
}

fn summarize_runs(runs: &[std::result::Result<PipelineRun, String>], estimators: &[EstimatorId]) -> Vec<MetricSummary> {
    let mut out = Vec::new();
    for id in estimators {
        let name = id.name();
        for m in METRICS {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .filter_map(|r| r.report.row(&name))
                .map(|row| metric(row, m))
                .filter(|v| v.is_finite())
                .collect();
            let k = vals.len();
            let mean = if k > 0 { vals.iter().sum::<f64>() / k as f64 } else { f64::NAN };
            let sd = if k > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(MetricSummary {
                estimator: name.clone(),
                metric: m.to_string(),
                mean,
                sd,
                runs: k,
                degenerate: k < 2,
            });
        }
    }
    out
}

/// `m` runs, each trained on an independent arm-stratified subsample of
/// the given fraction and evaluated with draws of the full data size.
pub fn robustness_subsample(ds: &Dataset, m: usize, fraction: f64, cfg: &PipelineConfig, seed: u64) -> Result<SubsampleStudy> {
    if m == 0 {
        return Err(Error::Config("subsample study needs at least one run".into()));
    }
    let n = cfg.simulate.n.unwrap_or(ds.n());
    let mut runs = Vec::new();
    for i in 0..m {
        let s = derive_seed(seed, i as u64);
        let run = subsample_rows(ds, fraction, &mut stream(s, "subsample")).and_then(|sub| run_pipeline(&sub, n, cfg, s));
        runs.push(run.map_err(|e| e.to_string()));
    }
    let summary = summarize_runs(&runs, &cfg.simulate.estimators);
    Ok(SubsampleStudy { runs, summary })
}

pub fn write_summary_csv<W: Write>(rows: &[MetricSummary], out: W) -> Result<()> {
    let f = crate::tabular::format_number;
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["estimator", "metric", "mean", "sd", "runs", "degenerate"])?;
    for r in rows {
        wr.write_record([
            r.estimator.clone(),
            r.metric.clone(),
            f(r.mean),
            f(r.sd),
            r.runs.to_string(),
            r.degenerate.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Architecture {
    pub fn preset(name: &str) -> Result<Architecture> {
        let (g, c) = architecture_preset(name).ok_or_else(|| Error::Config(format!("unknown architecture preset '{name}'")))?;
        Ok(Architecture {
            name: name.to_string(),
            generator_hidden: g,
            critic_hidden: c,
        })
    }
}

/// Side-by-side results per architecture (columns `{name}_{metric}`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub runs: Vec<std::result::Result<PipelineRun, String>>,
    pub metrics: Vec<&'static str>,
}

impl ComparisonTable {
    pub fn value(&self, column: usize, estimator: &str, metric_name: &str) -> Option<f64> {
        self.runs[column]
            .as_ref()
            .ok()
            .and_then(|r| r.report.row(estimator))
            .map(|row| metric(row, metric_name))
    }

    pub fn write_csv<W: Write>(&self, estimators: &[EstimatorId], out: W) -> Result<()> {
        let f = crate::tabular::format_number;
        let mut wr = csv::Writer::from_writer(out);
        let mut head = vec!["estimator".to_string()];
        for c in &self.columns {
            for m in &self.metrics {
                head.push(format!("{c}_{m}"));
            }
        }
        wr.write_record(&head)?;
        for id in estimators {
            let name = id.name();
            let mut rec = vec![name.clone()];
            for k in 0..self.columns.len() {
                for m in &self.metrics {
                    rec.push(self.value(k, &name, m).map(f).unwrap_or_default());
                }
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// One full run per architecture with a shared seed.
pub fn robustness_architecture(ds: &Dataset, archs: &[Architecture], cfg: &PipelineConfig, seed: u64) -> Result<ComparisonTable> {
    if archs.is_empty() {
        return Err(Error::Config("architecture list is empty".into()));
    }
    let n = cfg.simulate.n.unwrap_or(ds.n());
    let mut runs = Vec::new();
    for a in archs {
        let mut c = cfg.clone();
        for t in [&mut c.train_x, &mut c.train_y] {
            t.generator_hidden = a.generator_hidden.clone();
            t.critic_hidden = a.critic_hidden.clone();
        }
        runs.push(run_pipeline(ds, n, &c, seed).map_err(|e| e.to_string()));
    }
    Ok(ComparisonTable {
        columns: archs.iter().map(|a| a.name.clone()).collect(),
        runs,
        metrics: vec!["rmse", "bias", "sdev"],
    })
}

/// Retrains on arm-stratified fractions of the data while keeping the draw
/// size equal to the full data. Every fraction shares `seed`, so
/// `fraction = 1` reproduces [`run_pipeline`] on the full data.
pub fn robustness_training_size(ds: &Dataset, fractions: &[f64], cfg: &PipelineConfig, seed: u64) -> Result<ComparisonTable> {
    if fractions.is_empty() {
        return Err(Error::Config("fraction list is empty".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("fractions must lie in (0, 1], got {f}")));
    }
    let n = cfg.simulate.n.unwrap_or(ds.n());
    let mut runs = Vec::new();
    for &f in fractions {
        let sub = subsample_rows(ds, f, &mut stream(seed, "training-size"))?;
        let run = match run_pipeline(&sub, n, cfg, seed) {
            Err(e @ Error::Config(_)) => return Err(e),
            other => other.map_err(|e| e.to_string()),
        };
        runs.push(run);
    }
    Ok(ComparisonTable {
        columns: fractions.iter().map(|f| format!("{f}")).collect(),
        runs,
        metrics: vec!["rmse"],
    })
}
