use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use ganmc::estimators::{EstimatorId, Learner};
use ganmc::fidelity::{average_w1, compare_report, cv_r2, earnings_conditions, fit_mvn, sample_mvn, write_report};
use ganmc::rng::{stream, stream_seed};
use ganmc::simharness::{
    load_population, monte_carlo, robustness_architecture, robustness_subsample, robustness_training_size,
    save_population, synthesize_population, write_summary_csv, Architecture, ComparisonTable, PipelineConfig,
};
use ganmc::tabular::{load_csv, ColumnSchema, Dataset, Role};
use ganmc::wgan::{train_two_stage, write_log_csv, GeneratorModel};
use ganmc::{Error, Result};

use crate::config::RunConfig;
use crate::output::{csv_file, ensure_dir, write_json, Meta};

fn meta(cfg: &RunConfig) -> Meta {
    Meta::new(cfg.hash(), cfg.seed.expect("validated"))
}

fn seed(cfg: &RunConfig) -> u64 {
    cfg.seed.expect("validated")
}

fn path_of(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("validated")
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    model: serde_json::Value,
}

fn save_model(path: &Path, m: &Meta, model: &GeneratorModel) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(&model.to_json()?)?;
    write_json(path, m, &ModelFile { model: value })
}

pub fn load_model(path: &Path) -> Result<GeneratorModel> {
    let text = std::fs::read_to_string(path)?;
    let f: ModelFile = serde_json::from_str(&text)?;
    GeneratorModel::from_json(&f.model.to_string())
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    gx: String,
    gy: String,
    treated_fraction: f64,
    rows: usize,
    schema: Vec<ColumnSchema>,
}

fn load_manifest(dir: &Path) -> Result<(Manifest, GeneratorModel, GeneratorModel)> {
    let text = std::fs::read_to_string(dir.join("models.json"))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let gx = load_model(&dir.join(&m.gx))?;
    let gy = load_model(&dir.join(&m.gy))?;
    Ok((m, gx, gy))
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let m = meta(cfg);
    let ds = load_csv(path_of(&cfg.data), &cfg.schema())?;
    let mut cx = cfg.train.clone();
    let mut cy = cfg.train_y();
    cx.seed = stream_seed(seed(cfg), "train-x");
    cy.seed = stream_seed(seed(cfg), "train-y");
    let (gx, gy) = train_two_stage(&ds, &cx, &cy, cfg.penalty.as_ref())?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    save_model(&out.join("gx.json"), &m, &gx)?;
    save_model(&out.join("gy.json"), &m, &gy)?;
    write_log_csv(&gx.log, csv_file(&out.join("train_log_x.csv"), &m)?)?;
    write_log_csv(&gy.log, csv_file(&out.join("train_log_y.csv"), &m)?)?;
    let manifest = Manifest {
        gx: "gx.json".into(),
        gy: "gy.json".into(),
        treated_fraction: ds.n_treated() as f64 / ds.n() as f64,
        rows: ds.n(),
        schema: ds.schema.clone(),
    };
    write_json(&out.join("models.json"), &m, &manifest)?;
    Ok(format!(
        "trained generators on {} rows ({} + {} steps); models in {}",
        ds.n(),
        cx.total_steps,
        cy.total_steps,
        out.display()
    ))
}

fn fraction(cfg: &RunConfig, manifest: &Manifest) -> f64 {
    cfg.population.treated_fraction.unwrap_or(manifest.treated_fraction)
}

pub fn generate(cfg: &RunConfig, rows: usize) -> Result<String> {
    let m = meta(cfg);
    let (manifest, gx, gy) = load_manifest(path_of(&cfg.models))?;
    let pop = synthesize_population(&gx, &gy, rows, fraction(cfg, &manifest), stream_seed(seed(cfg), "sample"))?;
    let ds = pop.observed_dataset()?;
    let names: Vec<&str> = manifest.schema.iter().map(|c| c.name.as_str()).collect();
    let ds = ds.select_columns(&names)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let path = out.join("generated.csv");
    let mut w = csv::Writer::from_writer(csv_file(&path, &m)?);
    ds.write_to(&mut w)?;
    Ok(format!("generated {} rows ({} treated) in {}", ds.n(), ds.n_treated(), path.display()))
}

#[derive(Serialize)]
struct PopulationSummary<'a> {
    file: &'a str,
    n: usize,
    n_treated: usize,
    tau_true: f64,
    hash: String,
    gx_hash: &'a str,
    gy_hash: &'a str,
}

pub fn population(cfg: &RunConfig) -> Result<String> {
    let m = meta(cfg);
    let (manifest, gx, gy) = load_manifest(path_of(&cfg.models))?;
    let pop = synthesize_population(&gx, &gy, cfg.population.size, fraction(cfg, &manifest), stream_seed(seed(cfg), "population"))?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    save_population(&pop, &out.join("population.bin"))?;
    let hash = pop.hash();
    write_json(
        &out.join("population.json"),
        &m,
        &PopulationSummary {
            file: "population.bin",
            n: pop.n(),
            n_treated: pop.n_treated(),
            tau_true: pop.tau_true,
            hash: hash.clone(),
            gx_hash: &pop.provenance.gx_hash,
            gy_hash: &pop.provenance.gy_hash,
        },
    )?;
    Ok(format!("tau_true={} N={} N1={} hash={}", pop.tau_true, pop.n(), pop.n_treated(), hash))
}

pub fn simulate(cfg: &RunConfig) -> Result<String> {
    let m = meta(cfg);
    let pop = load_population(path_of(&cfg.population.file))?;
    let n = cfg.simulate.n.expect("validated");
    let report = monte_carlo(&pop, n, &cfg.simulate, stream_seed(seed(cfg), "simulate"))?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    report.write_csv(csv_file(&out.join("metrics.csv"), &m)?)?;
    report.write_draws_csv(csv_file(&out.join("draws.csv"), &m)?)?;
    write_json(&out.join("report.json"), &m, &report)?;
    let worst = report
        .rows
        .iter()
        .filter(|r| r.rmse.is_finite())
        .max_by(|a, b| a.rmse.total_cmp(&b.rmse))
        .map(|r| format!("{} rmse {:.4}", r.estimator, r.rmse))
        .unwrap_or_default();
    Ok(format!(
        "simulated {} estimators over {} draws of {} rows (tau_true={}); largest {}",
        report.rows.len(),
        report.reps,
        n,
        report.tau_true,
        worst
    ))
}

fn arm_rows(ds: &Dataset, arm: &str) -> Result<Dataset> {
    match arm {
        "control" => ds.arm(false),
        "treated" => ds.arm(true),
        _ => Ok(ds.clone()),
    }
}

/// Non-treatment columns with the configured cost multipliers applied.
fn cost_matrix_rows(ds: &Dataset, cfg: &RunConfig) -> Array2<f64> {
    let idx: Vec<usize> = (0..ds.schema.len()).filter(|&j| ds.schema[j].role != Role::Treatment).collect();
    let mut x = ds.rows.select(Axis(1), &idx);
    for (k, &j) in idx.iter().enumerate() {
        if let Some(s) = cfg.diagnose.cost_scale.get(&ds.schema[j].name) {
            x.column_mut(k).mapv_inplace(|v| v * s);
        }
    }
    x
}

#[derive(Serialize)]
struct R2Row {
    learner: Learner,
    real: Option<f64>,
    generated: Option<f64>,
}

#[derive(Serialize)]
struct Fidelity {
    arm: String,
    real_rows: usize,
    generated_rows: usize,
    generated_samples: usize,
    w1_generated: f64,
    w1_mvn: f64,
    ratio: f64,
    mvn_ridged: bool,
    cv_r2: Vec<R2Row>,
    report_dir: String,
}

pub fn diagnose(cfg: &RunConfig) -> Result<String> {
    let m = meta(cfg);
    let d = &cfg.diagnose;
    let schema = cfg.schema();
    let real = load_csv(path_of(&d.real), &schema)?;
    let gen = load_csv(path_of(&d.generated), &schema)?;
    let conditions = match &d.conditions {
        Some(c) => c.clone(),
        None if real.column_index("re78").is_ok() && real.column_index("re74").is_ok() => earnings_conditions(),
        None => Vec::new(),
    };
    let report = compare_report(&real, &gen, &conditions, d.bins)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let bundle = out.join("diagnose");
    write_report(&report, &bundle)?;

    let real_arm = arm_rows(&real, &d.arm)?;
    let gen_arm = arm_rows(&gen, &d.arm)?;
    let a = cost_matrix_rows(&real_arm, cfg);
    let b = cost_matrix_rows(&gen_arm, cfg);
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Contract(format!("arm '{}' is empty in one of the tables", d.arm)));
    }
    // Split the generated rows into as many real-sized samples as they hold.
    let k = (b.nrows() / a.nrows()).max(1);
    let size = b.nrows() / k;
    let samples: Vec<Array2<f64>> = (0..k)
        .map(|i| b.slice(ndarray::s![i * size..(i + 1) * size, ..]).to_owned())
        .collect();
    let mut rng = stream(seed(cfg), "diagnose");
    let w1_gen = average_w1(a.view(), &samples, d.wasserstein_max_rows, d.metric, &mut rng)?;
    let mvn = fit_mvn(a.view())?;
    let mvn_samples: Vec<Array2<f64>> = (0..d.mvn_samples.max(1)).map(|_| sample_mvn(&mvn, a.nrows(), &mut rng)).collect();
    let w1_mvn = average_w1(a.view(), &mvn_samples, d.wasserstein_max_rows, d.metric, &mut rng)?;
    let est_cfg = &cfg.simulate.estimator;
    let cv = d
        .cv_learners
        .iter()
        .map(|&l| R2Row {
            learner: l,
            real: cv_r2(&real, l, d.cv_folds, est_cfg, seed(cfg)).ok(),
            generated: cv_r2(&gen, l, d.cv_folds, est_cfg, seed(cfg)).ok(),
        })
        .collect();
    let f = Fidelity {
        arm: d.arm.clone(),
        real_rows: a.nrows(),
        generated_rows: b.nrows(),
        generated_samples: k,
        w1_generated: w1_gen,
        w1_mvn,
        ratio: w1_gen / w1_mvn,
        mvn_ridged: mvn.ridged,
        cv_r2: cv,
        report_dir: "diagnose".into(),
    };
    write_json(&out.join("fidelity.json"), &m, &f)?;
    Ok(format!(
        "W1 generated {:.4} vs normal {:.4} (ratio {:.3}); report in {}",
        w1_gen,
        w1_mvn,
        f.ratio,
        bundle.display()
    ))
}

#[derive(Debug, Clone, Copy)]
pub enum Study {
    Subsample,
    Architecture,
    Size,
}

#[derive(Serialize)]
struct ComparisonJson<'a> {
    protocol: &'a str,
    columns: &'a [String],
    runs: Vec<serde_json::Value>,
}

fn comparison_json(protocol: &str, t: &ComparisonTable) -> Result<serde_json::Value> {
    let runs = t
        .runs
        .iter()
        .zip(&t.columns)
        .map(|(r, c)| match r {
            Ok(run) => serde_json::json!({"column": c, "population_hash": run.population_hash, "report": run.report}),
            Err(e) => serde_json::json!({"column": c, "error": e}),
        })
        .collect();
    Ok(serde_json::to_value(ComparisonJson {
        protocol,
        columns: &t.columns,
        runs,
    })?)
}

pub fn robustness(cfg: &RunConfig, study: Study) -> Result<String> {
    let m = meta(cfg);
    let ds = load_csv(path_of(&cfg.data), &cfg.schema())?;
    let mut p = PipelineConfig {
        train_x: cfg.train.clone(),
        train_y: cfg.train_y(),
        penalty: cfg.penalty.clone(),
        population_size: cfg.population.size,
        simulate: cfg.simulate.clone(),
    };
    let s = seed(cfg);
    let ests: Vec<EstimatorId> = cfg.simulate.estimators.clone();
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    match study {
        Study::Subsample => {
            p.simulate.reps = cfg.robustness.subsample_reps;
            let r = &cfg.robustness;
            let res = robustness_subsample(&ds, r.runs, r.fraction, &p, s)?;
            write_summary_csv(&res.summary, csv_file(&out.join("robustness_subsample.csv"), &m)?)?;
            let runs: Vec<serde_json::Value> = res
                .runs
                .iter()
                .map(|r| match r {
                    Ok(run) => serde_json::json!({"population_hash": run.population_hash, "report": run.report}),
                    Err(e) => serde_json::json!({"error": e}),
                })
                .collect();
            write_json(
                &out.join("robustness_subsample.json"),
                &m,
                &serde_json::json!({"protocol": "subsample", "summary": res.summary, "runs": runs}),
            )?;
            let failed = res.runs.iter().filter(|r| r.is_err()).count();
            Ok(format!("subsample study: {} runs ({failed} failed)", res.runs.len()))
        }
        Study::Architecture => {
            let archs = cfg
                .robustness
                .architectures
                .iter()
                .map(|a| Architecture::preset(a))
                .collect::<Result<Vec<_>>>()?;
            let t = robustness_architecture(&ds, &archs, &p, s)?;
            t.write_csv(&ests, csv_file(&out.join("robustness_architecture.csv"), &m)?)?;
            write_json(&out.join("robustness_architecture.json"), &m, &comparison_json("architecture", &t)?)?;
            Ok(format!("architecture study: {} architectures", t.columns.len()))
        }
        Study::Size => {
            let t = robustness_training_size(&ds, &cfg.robustness.fractions, &p, s)?;
            t.write_csv(&ests, csv_file(&out.join("robustness_size.csv"), &m)?)?;
            write_json(&out.join("robustness_size.json"), &m, &comparison_json("size", &t)?)?;
            Ok(format!("training-size study: {} fractions", t.columns.len()))
        }
    }
}
