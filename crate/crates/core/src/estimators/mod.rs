//! Estimators of the average effect of treatment on the treated.

mod att;
mod balancing;
mod crossfit;
mod forest;
mod linear;
mod matching;
mod nnet;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use att::{
    att_cm, att_diff, att_dr, att_dr_weights, att_ht, att_ht_weights, clip_propensity, odds, trim, EstimatorResult,
};
pub use balancing::{att_rb, balancing_weights, elastic_net, elastic_net_cv, BalanceWeights, ElasticNetFit, RbConfig};
pub use crossfit::{assign_folds, cross_fit, fit_lm_nuisance, Learner, NuisanceFit};
pub use forest::{fit_forest, Forest, ForestConfig, Task, Tree};
pub use linear::{fit_lm, fit_logit, fit_logit_with, LinearModel, LogitModel};
pub use matching::att_bcm;
pub use nnet::{fit_nn, NnConfig, NnModel};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tabular::Dataset;

/// Covariates, treatment indicators and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalData {
    pub x: Array2<f64>,
    pub w: Vec<bool>,
    pub y: Vec<f64>,
}

impl CausalData {
    pub fn new(x: Array2<f64>, w: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != w.len() || w.len() != y.len() {
            return Err(Error::Contract(format!(
                "row count mismatch: x {}, w {}, y {}",
                x.nrows(),
                w.len(),
                y.len()
            )));
        }
        Ok(CausalData { x, w, y })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        CausalData::new(ds.covariates(), ds.treatment()?, ds.outcome()?.to_vec())
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn n_treated(&self) -> usize {
        self.w.iter().filter(|&&b| b).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> CausalData {
        CausalData {
            x: self.x.select(Axis(0), idx),
            w: idx.iter().map(|&i| self.w[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Covariates with the listed columns removed.
    pub fn drop_columns(&self, cols: &[usize]) -> CausalData {
        let keep: Vec<usize> = (0..self.x.ncols()).filter(|j| !cols.contains(j)).collect();
        CausalData {
            x: self.x.select(Axis(1), &keep),
            w: self.w.clone(),
            y: self.y.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorId {
    Diff,
    Bcm,
    Cm(Learner),
    Ht(Learner),
    Dr(Learner),
    Rb,
}

impl EstimatorId {
    pub fn all() -> Vec<EstimatorId> {
        let mut v = vec![EstimatorId::Diff, EstimatorId::Bcm];
        for family in [EstimatorId::Cm, EstimatorId::Ht, EstimatorId::Dr] {
            for l in [Learner::Lm, Learner::Rf, Learner::Nn] {
                v.push(family(l));
            }
        }
        v.push(EstimatorId::Rb);
        v
    }

    pub fn learner(self) -> Option<Learner> {
        match self {
            EstimatorId::Cm(l) | EstimatorId::Ht(l) | EstimatorId::Dr(l) => Some(l),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        match self {
            EstimatorId::Diff => "DIFF".into(),
            EstimatorId::Bcm => "BCM".into(),
            EstimatorId::Rb => "RB".into(),
            EstimatorId::Cm(l) => format!("CM-{}", l.tag()),
            EstimatorId::Ht(l) => format!("HT-{}", l.tag()),
            EstimatorId::Dr(l) => format!("DR-{}", l.tag()),
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let u = s.trim().to_ascii_uppercase();
        EstimatorId::all()
            .into_iter()
            .find(|id| id.name() == u)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

impl From<EstimatorId> for String {
    fn from(id: EstimatorId) -> String {
        id.name()
    }
}

impl TryFrom<String> for EstimatorId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub forest: ForestConfig,
    pub nn: NnConfig,
    pub folds: usize,
    pub trim_threshold: f64,
    pub rb: RbConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            forest: ForestConfig::default(),
            nn: NnConfig::default(),
            folds: 5,
            trim_threshold: 0.95,
            rb: RbConfig::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.folds < 2 {
            v.push(format!("estimators.folds must be >= 2, got {}", self.folds));
        }
        if !(self.trim_threshold > 0.0 && self.trim_threshold <= 1.0) {
            v.push(format!("estimators.trim_threshold must be in (0, 1], got {}", self.trim_threshold));
        }
        if self.forest.n_trees == 0 {
            v.push("estimators.forest.n_trees must be >= 1".into());
        }
        if self.forest.min_leaf == 0 {
            v.push("estimators.forest.min_leaf must be >= 1".into());
        }
        if self.nn.hidden == 0 {
            v.push("estimators.nn.hidden must be >= 1".into());
        }
        if !(self.rb.zeta > 0.0 && self.rb.zeta < 1.0) {
            v.push(format!("estimators.rb.zeta must be in (0, 1), got {}", self.rb.zeta));
        }
        if !(self.rb.alpha > 0.0 && self.rb.alpha <= 1.0) {
            v.push(format!("estimators.rb.alpha must be in (0, 1], got {}", self.rb.alpha));
        }
        v
    }
}

/// Outcome of one estimator: a result or the failure message.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    pub id: EstimatorId,
    pub result: std::result::Result<EstimatorResult, String>,
}

impl EstimatorRun {
    pub fn estimate(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.estimate)
    }
}

fn weighting(
    y: &[f64],
    w: &[bool],
    nuis: &NuisanceFit,
    threshold: f64,
    dr: bool,
) -> Result<EstimatorResult> {
    let (keep, dropped) = trim(&nuis.e, w, threshold)?;
    let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let ws: Vec<bool> = keep.iter().map(|&i| w[i]).collect();
    let es: Vec<f64> = keep.iter().map(|&i| nuis.e[i]).collect();
    let mut r = if dr {
        let ms: Vec<f64> = keep.iter().map(|&i| nuis.mu0[i]).collect();
        att_dr(&ys, &ws, &ms, &es)?
    } else {
        att_ht(&ys, &ws, &es)?
    };
    if dropped > 0 {
        r.flags.push(format!("trimmed {dropped} rows"));
    }
    Ok(r)
}

/// Runs the selected estimators. Nuisance fits are shared per learner, and
/// every seeded component draws from its own named stream.
pub fn run_selected(data: &CausalData, ids: &[EstimatorId], cfg: &EstimatorConfig, seed: u64) -> Result<Vec<EstimatorRun>> {
    if data.n() == 0 {
        return Err(Error::Estimator("empty dataset".into()));
    }
    let x = data.x.view();
    let (y, w) = (&data.y[..], &data.w[..]);
    let mut nuisance: Vec<(Learner, std::result::Result<NuisanceFit, String>)> = Vec::new();
    for l in [Learner::Lm, Learner::Rf, Learner::Nn] {
        if ids.iter().any(|id| id.learner() == Some(l)) {
            let fit = match l {
                Learner::Lm => fit_lm_nuisance(x, y, w),
                _ => {
                    let mut rng = stream(seed, &format!("crossfit-{}", l.tag()));
                    cross_fit(x, y, w, l, cfg.folds, &cfg.forest, &cfg.nn, &mut rng)
                }
            };
            nuisance.push((l, fit.map_err(|e| e.to_string())));
        }
    }
    let get = |l: Learner| -> std::result::Result<&NuisanceFit, String> {
        let (_, f) = nuisance.iter().find(|(k, _)| *k == l).expect("fitted above");
        f.as_ref().map_err(|e| format!("nuisance fit failed: {e}"))
    };
    let mut out = Vec::new();
    for &id in ids {
        let res: std::result::Result<EstimatorResult, String> = match id {
            EstimatorId::Diff => att_diff(y, w).map_err(|e| e.to_string()),
            EstimatorId::Bcm => att_bcm(x, y, w).map_err(|e| e.to_string()),
            EstimatorId::Rb => {
                let mut rng = stream(seed, "rb");
                att_rb(x, y, w, &cfg.rb, &mut rng).map_err(|e| e.to_string())
            }
            EstimatorId::Cm(l) => get(l).and_then(|n| att_cm(y, w, &n.mu0).map_err(|e| e.to_string())),
            EstimatorId::Ht(l) => get(l).and_then(|n| weighting(y, w, n, cfg.trim_threshold, false).map_err(|e| e.to_string())),
            EstimatorId::Dr(l) => get(l).and_then(|n| weighting(y, w, n, cfg.trim_threshold, true).map_err(|e| e.to_string())),
        };
        let res = res.map(|mut r| {
            r.estimator = id.name();
            if let Some(l) = id.learner() {
                if let Ok(n) = get(l) {
                    r.flags.extend(n.flags.iter().cloned());
                }
            }
            r
        });
        out.push(EstimatorRun { id, result: res });
    }
    Ok(out)
}

pub fn run_all(data: &CausalData, cfg: &EstimatorConfig, seed: u64) -> Result<Vec<EstimatorRun>> {
    run_selected(data, &EstimatorId::all(), cfg, seed)
}

/// CSV rows `estimator,estimate,se,n_used,flags`; failures carry an empty
/// estimate and the message in `flags`.
pub fn write_results_csv<W: std::io::Write>(runs: &[EstimatorRun], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["estimator", "estimate", "se", "n_used", "flags"])?;
    for r in runs {
        match &r.result {
            Ok(v) => wr.write_record([
                v.estimator.clone(),
                crate::tabular::format_number(v.estimate),
                crate::tabular::format_number(v.se),
                v.n_used.to_string(),
                v.flags.join("; "),
            ])?,
            Err(e) => wr.write_record([r.id.name(), String::new(), String::new(), String::new(), format!("error: {e}")])?,
        }
    }
    wr.flush()?;
    Ok(())
}
