use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::att::clip_propensity;
use super::forest::{fit_forest, ForestConfig, Task};
use super::linear::{fit_lm, fit_logit};
use super::nnet::{fit_nn, NnConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Lm,
    Rf,
    Nn,
}

impl Learner {
    pub fn tag(self) -> &'static str {
        match self {
            Learner::Lm => "LM",
            Learner::Rf => "RF",
            Learner::Nn => "NN",
        }
    }
}

/// Per-unit nuisance predictions `μ̂₀(X_i)` and clipped `ê(X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub mu0: Vec<f64>,
    pub e: Vec<f64>,
    pub learner: Learner,
    /// Fold index per unit when cross-fit.
    pub folds: Option<Vec<usize>>,
    pub flags: Vec<String>,
}

/// Linear outcome model on controls and logit propensity, both in sample.
pub fn fit_lm_nuisance(x: ArrayView2<f64>, y: &[f64], w: &[bool]) -> Result<NuisanceFit> {
    let c: Vec<usize> = (0..w.len()).filter(|&i| !w[i]).collect();
    let xc = x.select(Axis(0), &c);
    let yc: Vec<f64> = c.iter().map(|&i| y[i]).collect();
    let lm = fit_lm(xc.view(), &yc)?;
    let logit = fit_logit(x, w)?;
    let mut flags = Vec::new();
    if logit.separated {
        flags.push("logit separation".to_string());
    } else if !logit.converged {
        flags.push("logit not converged".to_string());
    }
    Ok(NuisanceFit {
        mu0: lm.predict(x),
        e: clip_propensity(&logit.predict(x)),
        learner: Learner::Lm,
        folds: None,
        flags,
    })
}

fn random_folds(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut f = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        f[i] = p % k;
    }
    f
}

fn stratified_folds(w: &[bool], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut f = vec![0; w.len()];
    let mut offset = 0;
    for arm in [true, false] {
        let mut idx: Vec<usize> = (0..w.len()).filter(|&i| w[i] == arm).collect();
        idx.shuffle(rng);
        for (p, &i) in idx.iter().enumerate() {
            f[i] = (p + offset) % k;
        }
        offset += idx.len();
    }
    f
}

fn folds_usable(f: &[usize], w: &[bool], k: usize) -> bool {
    (0..k).all(|fold| {
        let (mut t, mut c) = (0, 0);
        for i in 0..w.len() {
            if f[i] != fold {
                if w[i] {
                    t += 1;
                } else {
                    c += 1;
                }
            }
        }
        c > 0 && t > 0
    })
}

/// Fold assignment; falls back to arm-stratified folds when some training
/// complement would lack an arm.
pub fn assign_folds(w: &[bool], k: usize, rng: &mut Rng) -> Result<(Vec<usize>, bool)> {
    let n = w.len();
    if k < 2 || k > n {
        return Err(Error::Config(format!("cross-fitting needs 2 <= K <= N, got K = {k}, N = {n}")));
    }
    let f = random_folds(n, k, rng);
    if folds_usable(&f, w, k) {
        return Ok((f, false));
    }
    let f = stratified_folds(w, k, rng);
    if folds_usable(&f, w, k) {
        Ok((f, true))
    } else {
        Err(Error::Estimator("cannot form folds with both arms in every training set".into()))
    }
}

/// Out-of-fold nuisance predictions: each unit is predicted by models
/// trained on the remaining folds.
pub fn cross_fit(
    x: ArrayView2<f64>,
    y: &[f64],
    w: &[bool],
    learner: Learner,
    k: usize,
    forest: &ForestConfig,
    nn: &NnConfig,
    rng: &mut Rng,
) -> Result<NuisanceFit> {
    let n = x.nrows();
    let (folds, refolded) = assign_folds(w, k, rng)?;
    // Each fold trains from its own stream, so a unit's outcome cannot
    // reach its own prediction through the random state.
    let base: u64 = rng.random();
    let mut mu0 = vec![0.0; n];
    let mut e = vec![0.0; n];
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let ctrl: Vec<usize> = train.iter().copied().filter(|&i| !w[i]).collect();
        let xt = x.select(Axis(0), &train);
        let wt: Vec<f64> = train.iter().map(|&i| if w[i] { 1.0 } else { 0.0 }).collect();
        let xc = x.select(Axis(0), &ctrl);
        let yc: Vec<f64> = ctrl.iter().map(|&i| y[i]).collect();
        let xs = x.select(Axis(0), &test);
        let rng = &mut rng_from_seed(derive_seed(base, fold as u64));
        let (m, p) = match learner {
            Learner::Lm => {
                let lm = fit_lm(xc.view(), &yc)?;
                let wb: Vec<bool> = wt.iter().map(|&v| v > 0.5).collect();
                let lg = fit_logit(xt.view(), &wb)?;
                (lm.predict(xs.view()), lg.predict(xs.view()))
            }
            Learner::Rf => {
                let fm = fit_forest(xc.view(), &yc, Task::Regression, forest, rng);
                let fe = fit_forest(xt.view(), &wt, Task::Classification, forest, rng);
                (fm.predict(xs.view()), fe.predict(xs.view()))
            }
            Learner::Nn => {
                let nm = fit_nn(xc.view(), &yc, Task::Regression, nn, rng)?;
                let ne = fit_nn(xt.view(), &wt, Task::Classification, nn, rng)?;
                (nm.predict(xs.view()), ne.predict(xs.view()))
            }
        };
        for (j, &i) in test.iter().enumerate() {
            mu0[i] = m[j];
            e[i] = p[j];
        }
    }
    let mut flags = Vec::new();
    if refolded {
        flags.push("refolded with stratification".to_string());
    }
    Ok(NuisanceFit {
        mu0,
        e: clip_propensity(&e),
        learner,
        folds: Some(folds),
        flags,
    })
}
