//! Diagnostics comparing generated and real tables.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_forest, fit_lm, fit_nn, EstimatorConfig, Learner, Task};
use crate::rng::{stream, Rng};
use crate::tabular::{format_number, summary_stats, Dataset, SummaryTable};

/// Largest `n·m` handled by the exact solvers.
pub const EXACT_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    /// Euclidean distance on the raw columns.
    #[default]
    Euclidean,
    /// Euclidean distance after dividing each column by the sd of `a`.
    Standardized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub cost: f64,
    pub metric: GroundMetric,
}

pub fn cost_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>, metric: GroundMetric) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Schema(format!("column counts differ: {} vs {}", a.ncols(), b.ncols())));
    }
    let d = a.ncols();
    let scale: Vec<f64> = match metric {
        GroundMetric::Euclidean => vec![1.0; d],
        GroundMetric::Standardized => a
            .columns()
            .into_iter()
            .map(|c| {
                let s = if c.len() > 1 { c.std(1.0) } else { 0.0 };
                if s > 0.0 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect(),
    };
    Ok(Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        (0..d)
            .map(|k| ((a[[i, k]] - b[[j, k]]) * scale[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }))
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns the column assigned to each row.
pub fn assignment(c: &Array2<f64>) -> Vec<usize> {
    let n = c.nrows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Transportation simplex on integer supplies `m` per row and demands `n`
/// per column (uniform marginals scaled by `n·m`). Returns integer flows.
pub fn transportation_simplex(c: &Array2<f64>) -> Array2<i64> {
    let (n, m) = c.dim();
    let mut supply = vec![m as i64; n];
    let mut demand = vec![n as i64; m];
    // basis cells (row, col, flow)
    let mut basis: Vec<(usize, usize, i64)> = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let q = supply[i].min(demand[j]);
        basis.push((i, j, q));
        supply[i] -= q;
        demand[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if supply[i] == 0 && i < n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let nodes = n + m;
    let tol = 1e-12 * c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut pot = vec![0.0; nodes];
    let mut start_row = 0;
    loop {
        for a in adj.iter_mut() {
            a.clear();
        }
        for (k, &(r, col, _)) in basis.iter().enumerate() {
            adj[r].push((n + col, k));
            adj[n + col].push((r, k));
        }
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        let mut q = VecDeque::new();
        q.push_back(0);
        parent[0] = 0;
        depth[0] = 0;
        pot[0] = 0.0;
        while let Some(x) = q.pop_front() {
            for &(y, k) in &adj[x] {
                if parent[y] == usize::MAX {
                    parent[y] = x;
                    parent_edge[y] = k;
                    depth[y] = depth[x] + 1;
                    let (r, col, _) = basis[k];
                    // u_r + v_col = c[r, col]; rows are nodes < n
                    pot[y] = c[[r, col]] - pot[x];
                    q.push_back(y);
                }
            }
        }
        // Block pricing over rows, starting where the last search stopped.
        let block = ((n as f64).sqrt().ceil() as usize).max(1);
        let mut best: Option<(usize, usize, f64)> = None;
        let mut scanned = 0;
        let mut r = start_row;
        while scanned < n {
            for col in 0..m {
                let rc = c[[r, col]] - pot[r] - pot[n + col];
                if rc < -tol && best.is_none_or(|b| rc < b.2) {
                    best = Some((r, col, rc));
                }
            }
            scanned += 1;
            r = (r + 1) % n;
            if best.is_some() && scanned % block == 0 {
                break;
            }
        }
        start_row = r;
        let Some((er, ec, _)) = best else { break };
        // Tree path between row node er and column node n+ec.
        let (mut x, mut y) = (er, n + ec);
        let mut from_row = Vec::new();
        let mut from_col = Vec::new();
        while depth[x] > depth[y] {
            from_row.push(parent_edge[x]);
            x = parent[x];
        }
        while depth[y] > depth[x] {
            from_col.push(parent_edge[y]);
            y = parent[y];
        }
        while x != y {
            from_row.push(parent_edge[x]);
            x = parent[x];
            from_col.push(parent_edge[y]);
            y = parent[y];
        }
        // Cycle order starting after the entering cell at the column end.
        let mut cycle = from_col;
        cycle.extend(from_row.into_iter().rev());
        let mut theta = i64::MAX;
        let mut leave = usize::MAX;
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 && basis[k].2 < theta {
                theta = basis[k].2;
                leave = k;
            }
        }
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                basis[k].2 -= theta;
            } else {
                basis[k].2 += theta;
            }
        }
        basis[leave] = (er, ec, theta);
    }
    let mut flow = Array2::zeros((n, m));
    for &(r, col, f) in &basis {
        flow[[r, col]] += f;
    }
    flow
}

/// Exact W₁ between the empirical distributions of the rows of `a` and `b`
/// with uniform weights.
pub fn exact_wasserstein(a: ArrayView2<f64>, b: ArrayView2<f64>, metric: GroundMetric) -> Result<TransportPlan> {
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(Error::Contract("both point sets must be nonempty".into()));
    }
    if n.saturating_mul(m) > EXACT_BUDGET {
        return Err(Error::Budget(format!(
            "exact transport on {n} × {m} points exceeds the budget of {EXACT_BUDGET} entries; use sinkhorn or subsample"
        )));
    }
    let c = cost_matrix(a, b, metric)?;
    let coupling = if n == m {
        let mut p = Array2::zeros((n, n));
        for (i, j) in assignment(&c).into_iter().enumerate() {
            p[[i, j]] = 1.0 / n as f64;
        }
        p
    } else {
        let total = (n * m) as f64;
        transportation_simplex(&c).mapv(|f| f as f64 / total)
    };
    let cost = (&coupling * &c).sum();
    Ok(TransportPlan { coupling, cost, metric })
}

/// Mean exact W₁ between `real` and each generated sample. When either side
/// has more than `max_rows` rows, equal-size subsamples of `max_rows` rows
/// are drawn without replacement first.
pub fn average_w1(real: ArrayView2<f64>, samples: &[Array2<f64>], max_rows: usize, metric: GroundMetric, rng: &mut Rng) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("no generated samples to compare".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let k = real.nrows().min(s.nrows()).min(max_rows);
        let pick = |n: usize, rng: &mut Rng| -> Vec<usize> {
            if n == k {
                (0..n).collect()
            } else {
                let mut v = rand::seq::index::sample(rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
        };
        let a = real.select(Axis(0), &pick(real.nrows(), rng));
        let b = s.select(Axis(0), &pick(s.nrows(), rng));
        total += exact_wasserstein(a.view(), b.view(), metric)?.cost;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Transport cost `⟨P, C⟩` of the regularized plan.
    pub cost: f64,
    pub plan: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub log_domain: bool,
}

fn logsumexp(v: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = v.collect();
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn sinkhorn_scaling(c: &Array2<f64>, eps: f64, max_iters: usize) -> Option<SinkhornResult> {
    let (n, m) = c.dim();
    let k = c.mapv(|v| (-v / eps).exp());
    if k.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return None;
    }
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let mut v = Array1::from_elem(m, 1.0);
    for it in 1..=max_iters {
        let kv = k.dot(&v);
        let u = kv.mapv(|x| a / x);
        let ktu = k.t().dot(&u);
        v = ktu.mapv(|x| b / x);
        if u.iter().chain(v.iter()).any(|x| !x.is_finite() || *x == 0.0) {
            return None;
        }
        let rows = (&k * &v.view().insert_axis(Axis(0))).dot(&Array1::ones(m)) * &u;
        let viol = rows.iter().map(|r| (r - a).abs()).fold(0.0, f64::max);
        if viol < 1e-6 * a || it == max_iters {
            let plan = &k * &u.view().insert_axis(Axis(1)) * &v.view().insert_axis(Axis(0));
            return Some(SinkhornResult {
                cost: (&plan * c).sum(),
                plan,
                iterations: it,
                converged: viol < 1e-6 * a,
                log_domain: false,
            });
        }
    }
    None
}

fn sinkhorn_log(c: &Array2<f64>, eps: f64, max_iters: usize) -> SinkhornResult {
    let (n, m) = c.dim();
    let la = -(n as f64).ln();
    let lb = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let cmax = c.iter().cloned().fold(0.0, f64::max);
    // Annealed regularization with warm-started potentials.
    let mut schedule = Vec::new();
    let mut e = cmax.max(eps);
    while e > eps {
        schedule.push(e);
        e *= 0.5;
    }
    schedule.push(eps);
    let mut iterations = 0;
    let mut converged = false;
    for (stage, &e) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let tol = if last { 1e-6 } else { 1e-3 } / n as f64;
        converged = false;
        while iterations < max_iters {
            iterations += 1;
            for i in 0..n {
                f[i] = e * la - e * logsumexp((0..m).map(|j| (g[j] - c[[i, j]]) / e));
            }
            for j in 0..m {
                g[j] = e * lb - e * logsumexp((0..n).map(|i| (f[i] - c[[i, j]]) / e));
            }
            let viol = (0..n)
                .map(|i| {
                    let r: f64 = (0..m).map(|j| ((f[i] + g[j] - c[[i, j]]) / e).exp()).sum();
                    (r - 1.0 / n as f64).abs()
                })
                .fold(0.0, f64::max);
            if viol < tol {
                converged = true;
                break;
            }
        }
    }
    let plan = Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp());
    SinkhornResult {
        cost: (&plan * c).sum(),
        plan,
        iterations,
        converged,
        log_domain: true,
    }
}

/// Entropic OT by alternating scaling. Falls back to log-domain updates when
/// the Gibbs kernel underflows. Convergence is a marginal violation below
/// `10⁻⁶` relative to the uniform weight.
pub fn sinkhorn(a: ArrayView2<f64>, b: ArrayView2<f64>, eps: f64, max_iters: usize, metric: GroundMetric) -> Result<SinkhornResult> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("entropic regularization must be positive, got {eps}")));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Contract("both point sets must be nonempty".into()));
    }
    let c = cost_matrix(a, b, metric)?;
    Ok(sinkhorn_scaling(&c, eps, max_iters).unwrap_or_else(|| sinkhorn_log(&c, eps, max_iters)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvnModel {
    pub mean: Vec<f64>,
    pub cov: Array2<f64>,
    /// Lower Cholesky factor of the (possibly ridged) covariance.
    pub chol: Array2<f64>,
    pub ridged: bool,
}

pub fn fit_mvn(x: ArrayView2<f64>) -> Result<MvnModel> {
    let (n, d) = x.dim();
    if n <= d {
        return Err(Error::Contract(format!("need more rows than columns to fit a normal model ({n} ≤ {d})")));
    }
    let mean = x.mean_axis(Axis(0)).expect("rows");
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let (l, ridged) = match m.clone().cholesky() {
        Some(ch) => (ch.l(), false),
        None => {
            let r = m + DMatrix::identity(d, d) * 1e-8;
            let ch = r
                .cholesky()
                .ok_or_else(|| Error::Numeric { layer: None, message: "covariance is not positive semidefinite".into() })?;
            (ch.l(), true)
        }
    };
    Ok(MvnModel {
        mean: mean.to_vec(),
        cov,
        chol: Array2::from_shape_fn((d, d), |(i, j)| l[(i, j)]),
        ridged,
    })
}

pub fn sample_mvn(model: &MvnModel, n: usize, rng: &mut Rng) -> Array2<f64> {
    let d = model.mean.len();
    let l = DMatrix::from_fn(d, d, |i, j| model.chol[[i, j]]);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &l * z;
        for j in 0..d {
            out[[i, j]] = model.mean[j] + x[j];
        }
    }
    out
}

/// Out-of-fold `1 − SSE/SST` for the outcome on the covariates within the
/// control arm.
pub fn cv_r2(ds: &Dataset, learner: Learner, k: usize, cfg: &EstimatorConfig, seed: u64) -> Result<f64> {
    let ctrl = ds.arm(false)?;
    let x = ctrl.covariates();
    let y = ctrl.outcome()?.to_vec();
    cv_r2_xy(x.view(), &y, learner, k, cfg, seed)
}

pub fn cv_r2_xy(x: ArrayView2<f64>, y: &[f64], learner: Learner, k: usize, cfg: &EstimatorConfig, seed: u64) -> Result<f64> {
    let n = y.len();
    if n < 2 * k {
        return Err(Error::Contract(format!("cross-validation with {k} folds needs at least {} rows", 2 * k)));
    }
    let mut rng = stream(seed, "cv-r2");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        folds[i] = p % k;
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let mut sse = 0.0;
    for f in 0..k {
        let tr: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let te: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let xt = x.select(Axis(0), &tr);
        let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let xs = x.select(Axis(0), &te);
        let pred = match learner {
            Learner::Lm => fit_lm(xt.view(), &yt)?.predict(xs.view()),
            Learner::Rf => fit_forest(xt.view(), &yt, Task::Regression, &cfg.forest, &mut rng).predict(xs.view()),
            Learner::Nn => fit_nn(xt.view(), &yt, Task::Regression, &cfg.nn, &mut rng)?.predict(xs.view()),
        };
        sse += te.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
    }
    if sst == 0.0 {
        return Ok(if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    Eq,
    Gt,
    Ge,
    Lt,
    Le,
}

/// Histogram of `target` over rows where `column op value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub target: String,
    pub column: String,
    pub op: CompareOp,
    pub value: f64,
}

impl Condition {
    fn holds(&self, v: f64) -> bool {
        match self.op {
            CompareOp::Eq => v == self.value,
            CompareOp::Gt => v > self.value,
            CompareOp::Ge => v >= self.value,
            CompareOp::Lt => v < self.value,
            CompareOp::Le => v <= self.value,
        }
    }
}

/// 1978 earnings split by whether 1974 earnings are zero or positive.
pub fn earnings_conditions() -> Vec<Condition> {
    vec![
        Condition {
            name: "re78_given_re74_zero".into(),
            target: "re78".into(),
            column: "re74".into(),
            op: CompareOp::Eq,
            value: 0.0,
        },
        Condition {
            name: "re78_given_re74_positive".into(),
            target: "re78".into(),
            column: "re74".into(),
            op: CompareOp::Gt,
            value: 0.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub column: String,
    pub edges: Vec<f64>,
    pub real: Vec<usize>,
    pub generated: Vec<usize>,
    pub real_n: usize,
    pub generated_n: usize,
    pub flags: Vec<String>,
}

/// Equal-width bins over the union range; the last bin is closed.
pub fn shared_edges(a: &[f64], b: &[f64], bins: usize) -> Vec<f64> {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

pub fn bin_counts(v: &[f64], edges: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut c = vec![0; bins];
    for &x in v {
        if x < lo || x > hi {
            continue;
        }
        let k = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
        c[k.min(bins - 1)] += 1;
    }
    c
}

/// Pearson correlations; a constant column gets 1 on the diagonal and 0
/// elsewhere.
pub fn correlation_matrix(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(d));
    let c = &x - &mean.view().insert_axis(Axis(0));
    let cov = c.t().dot(&c) / (n.max(2) as f64 - 1.0);
    Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            1.0
        } else {
            let s = (cov[[i, i]] * cov[[j, j]]).sqrt();
            if s > 0.0 {
                cov[[i, j]] / s
            } else {
                0.0
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub columns: Vec<String>,
    pub marginals: Vec<Histogram>,
    pub conditionals: Vec<Histogram>,
    pub real_corr: Array2<f64>,
    pub generated_corr: Array2<f64>,
    pub real_summary: SummaryTable,
    pub generated_summary: SummaryTable,
}

impl CompareReport {
    pub fn corr_delta(&self) -> Array2<f64> {
        &self.generated_corr - &self.real_corr
    }
}

pub fn compare_report(real: &Dataset, generated: &Dataset, conditions: &[Condition], bins: usize) -> Result<CompareReport> {
    if bins == 0 {
        return Err(Error::Config("histograms need at least one bin".into()));
    }
    let columns: Vec<String> = real.schema.iter().map(|c| c.name.clone()).collect();
    let names: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let gen = generated.select_columns(&names)?;
    let mut marginals = Vec::new();
    for c in &columns {
        let a = real.column(c)?.to_vec();
        let b = gen.column(c)?.to_vec();
        let edges = shared_edges(&a, &b, bins);
        marginals.push(Histogram {
            name: c.clone(),
            column: c.clone(),
            real: bin_counts(&a, &edges),
            generated: bin_counts(&b, &edges),
            real_n: a.len(),
            generated_n: b.len(),
            edges,
            flags: Vec::new(),
        });
    }
    let mut conditionals = Vec::new();
    for cond in conditions {
        let pick = |ds: &Dataset| -> Result<Vec<f64>> {
            let t = ds.column(&cond.target)?;
            let k = ds.column(&cond.column)?;
            Ok(t.iter().zip(k.iter()).filter(|(_, &kv)| cond.holds(kv)).map(|(&tv, _)| tv).collect())
        };
        let a = pick(real)?;
        let b = pick(&gen)?;
        let edges = shared_edges(&a, &b, bins);
        let mut flags = Vec::new();
        if a.len() < 10 {
            flags.push(format!("condition selects {} real rows", a.len()));
        }
        if b.len() < 10 {
            flags.push(format!("condition selects {} generated rows", b.len()));
        }
        conditionals.push(Histogram {
            name: cond.name.clone(),
            column: cond.target.clone(),
            real: bin_counts(&a, &edges),
            generated: bin_counts(&b, &edges),
            real_n: a.len(),
            generated_n: b.len(),
            edges,
            flags,
        });
    }
    Ok(CompareReport {
        columns,
        marginals,
        conditionals,
        real_corr: correlation_matrix(real.rows.view()),
        generated_corr: correlation_matrix(gen.rows.view()),
        real_summary: summary_stats(real, true),
        generated_summary: summary_stats(&gen, true),
    })
}

fn write_histograms(path: &Path, hs: &[Histogram]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "column", "bin", "lower", "upper", "real", "generated"])?;
    for h in hs {
        for k in 0..h.real.len() {
            w.write_record([
                h.name.clone(),
                h.column.clone(),
                k.to_string(),
                format_number(h.edges[k]),
                format_number(h.edges[k + 1]),
                h.real[k].to_string(),
                h.generated[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_matrix(path: &Path, names: &[String], m: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec![String::new()];
    head.extend(names.iter().cloned());
    w.write_record(&head)?;
    for (i, n) in names.iter().enumerate() {
        let mut rec = vec![n.clone()];
        rec.extend(m.row(i).iter().map(|&v| format_number(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct IndexEntry<'a> {
    marginal_histograms: &'a str,
    conditional_histograms: &'a str,
    real_correlation: &'a str,
    generated_correlation: &'a str,
    correlation_delta: &'a str,
    real_summary: &'a str,
    generated_summary: &'a str,
    columns: &'a [String],
    conditionals: Vec<(&'a str, &'a [String], usize, usize)>,
}

/// Writes the report as CSV files plus `index.json` into `dir`.
pub fn write_report(report: &CompareReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_histograms(&dir.join("marginal_histograms.csv"), &report.marginals)?;
    write_histograms(&dir.join("conditional_histograms.csv"), &report.conditionals)?;
    write_matrix(&dir.join("real_correlation.csv"), &report.columns, &report.real_corr)?;
    write_matrix(&dir.join("generated_correlation.csv"), &report.columns, &report.generated_corr)?;
    write_matrix(&dir.join("correlation_delta.csv"), &report.columns, &report.corr_delta())?;
    report.real_summary.write_csv(std::fs::File::create(dir.join("real_summary.csv"))?)?;
    report
        .generated_summary
        .write_csv(std::fs::File::create(dir.join("generated_summary.csv"))?)?;
    let index = IndexEntry {
        marginal_histograms: "marginal_histograms.csv",
        conditional_histograms: "conditional_histograms.csv",
        real_correlation: "real_correlation.csv",
        generated_correlation: "generated_correlation.csv",
        correlation_delta: "correlation_delta.csv",
        real_summary: "real_summary.csv",
        generated_summary: "generated_summary.csv",
        columns: &report.columns,
        conditionals: report
            .conditionals
            .iter()
            .map(|h| (h.name.as_str(), &h.flags[..], h.real_n, h.generated_n))
            .collect(),
    };
    let mut f = std::fs::File::create(dir.join("index.json"))?;
    f.write_all(serde_json::to_string_pretty(&index)?.as_bytes())?;
    Ok(())
}
