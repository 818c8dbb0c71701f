//! Shape-restriction penalties for generator training: a kernel-weighted
//! monotonicity statistic and a kernel-regression first-difference penalty.
//!
//! Both are recorded on an autodiff [`Tape`] so they can be added to the
//! generator objective. The statistics on plain slices are thin wrappers.

use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub const V_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Chetverikov,
    KernelFd,
}

/// Monotone direction being imposed on `E[y | x]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_grid_size() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub x_column: String,
    pub y_column: String,
    pub weight: f64,
    /// Lower cutoff on the statistic; `None` means no cutoff.
    #[serde(default)]
    pub cutoff: Option<f64>,
    pub direction: Direction,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// When set, gradients reach the generator only through `y_column`.
    #[serde(default = "default_true")]
    pub masked: bool,
}

impl PenaltySpec {
    pub fn chetverikov(x: &str, y: &str, weight: f64, cutoff: Option<f64>) -> Self {
        PenaltySpec {
            kind: PenaltyKind::Chetverikov,
            x_column: x.into(),
            y_column: y.into(),
            weight,
            cutoff,
            direction: Direction::Increasing,
            grid_size: 30,
            bandwidth: None,
            masked: true,
        }
    }

    pub fn kernel_fd(x: &str, y: &str, weight: f64) -> Self {
        PenaltySpec {
            kind: PenaltyKind::KernelFd,
            cutoff: None,
            ..Self::chetverikov(x, y, weight, None)
        }
    }

    pub fn validate(&self, columns: &[String]) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config("penalty weight must be finite and nonnegative".into()));
        }
        for c in [&self.x_column, &self.y_column] {
            if !columns.iter().any(|n| n == c) {
                return Err(Error::Config(format!("penalty column '{c}' not in schema")));
            }
        }
        if self.x_column == self.y_column {
            return Err(Error::Config("penalty x and y columns must differ".into()));
        }
        if self.kind == PenaltyKind::KernelFd && self.grid_size < 2 {
            return Err(Error::Config("kernel penalty grid needs at least 2 points".into()));
        }
        if matches!(self.bandwidth, Some(h) if !(h > 0.0)) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        Ok(())
    }
}

/// Epanechnikov kernel, zero outside `[-1, 1]`.
pub fn kernel(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Bandwidth ladder `h_max, h_max/2, … , h_min`.
pub fn bandwidths(x: &[f64]) -> Result<Vec<f64>> {
    let m = x.len();
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let h_max = (hi - lo) / 2.0;
    if !(h_max > 0.0) {
        return Err(Error::Estimator("all x values are identical".into()));
    }
    let h_min = h_max * (0.3 / (m as f64).powf(0.95)).powf(1.0 / 3.0);
    let mut hs = vec![];
    let mut h = h_max;
    while h >= h_min {
        hs.push(h);
        h *= 0.5;
    }
    if (hs.last().copied().unwrap_or(f64::INFINITY) - h_min).abs() > 1e-12 * h_max {
        hs.push(h_min);
    }
    Ok(hs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatisticValue {
    pub value: f64,
    /// Number of (h, i) cells whose denominator hit the floor.
    pub clamped: usize,
}

struct ChetPlan {
    /// Stacked `G_h = A_h ⊙ (A_h Sᵀ)` over the bandwidth ladder, `(|H| M) × M`.
    g: Rc<Array2<f64>>,
    /// Sorting permutation as a matrix: `P y` is `y` in `x` order.
    perm: Rc<Array2<f64>>,
    /// Neighbour differences on sorted data.
    diff: Rc<Array2<f64>>,
}

fn chet_plan(x: &[f64]) -> Result<ChetPlan> {
    let m = x.len();
    if m < 3 {
        return Err(Error::Estimator("monotonicity statistic needs at least 3 points".into()));
    }
    let hs = bandwidths(x)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut perm = Array2::zeros((m, m));
    for (r, &i) in order.iter().enumerate() {
        perm[[r, i]] = 1.0;
    }
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut diff = Array2::zeros((m, m));
    for i in 0..m - 1 {
        diff[[i, i + 1]] = 1.0;
        diff[[i, i]] = -1.0;
    }
    diff[[m - 1, m - 1]] = 1.0;
    diff[[m - 1, m - 2]] = -1.0;
    // S_jk = sign(X_k - X_j) on sorted points.
    let s_t = Array2::from_shape_fn((m, m), |(k, j)| sign(xs[k] - xs[j]));
    let mut g = Array2::zeros((hs.len() * m, m));
    for (hi, &h) in hs.iter().enumerate() {
        let a = Array2::from_shape_fn((m, m), |(i, j)| kernel((xs[j] - xs[i]) / h));
        let as_t = a.dot(&s_t);
        let block = &a * &as_t;
        g.slice_mut(ndarray::s![hi * m..(hi + 1) * m, ..]).assign(&block);
    }
    Ok(ChetPlan {
        g: Rc::new(g),
        perm: Rc::new(perm),
        diff: Rc::new(diff),
    })
}

/// Records the monotonicity statistic `T = max_{h,i} b(X_i,h) / V(X_i,h)`
/// for the column vectors `x` and `y` (both `M × 1`). Positive values flag
/// decreasing stretches. The sort order and kernel weights are taken from
/// the current value of `x` and treated as constants.
pub fn chetverikov_on_tape(tape: &Tape, x: Var, y: Var) -> Result<(Var, usize)> {
    let xv: Vec<f64> = tape.value(x).iter().copied().collect();
    let plan = chet_plan(&xv)?;
    let perm = tape.constant((*plan.perm).clone());
    let ys = centered(tape, tape.matmul(perm, y));
    let d = tape.matmul(tape.constant((*plan.diff).clone()), ys);
    let sigma2 = tape.scale(tape.square(d), 0.5);
    let g = tape.constant((*plan.g).clone());
    let b = tape.matmul(g, ys);
    let v = tape.matmul(g, sigma2);
    let vv = tape.value(v);
    let keep = vv.mapv(|t| if t.abs() < V_FLOOR { 0.0 } else { 1.0 });
    let clamped = keep.iter().filter(|&&k| k == 0.0).count();
    let fill = keep.mapv(|k| (1.0 - k) * V_FLOOR);
    let v_eff = tape.add(tape.mul_const(v, Rc::new(keep)), tape.constant(fill));
    let ratio = tape.div(b, v_eff);
    let rv = tape.value(ratio);
    let mut best = 0;
    for (i, &r) in rv.iter().enumerate() {
        if r > rv[[best, 0]] {
            best = i;
        }
    }
    Ok((tape.element(ratio, best, 0), clamped))
}

pub fn chetverikov_statistic(x: &[f64], y: &[f64]) -> Result<StatisticValue> {
    if x.len() != y.len() {
        return Err(Error::Contract("x and y lengths differ".into()));
    }
    let tape = Tape::new();
    let xv = tape.constant(col(x));
    let yv = tape.constant(col(y));
    let (t, clamped) = chetverikov_on_tape(&tape, xv, yv)?;
    Ok(StatisticValue {
        value: tape.scalar_value(t),
        clamped,
    })
}

/// `y - y_0`, which leaves all fitted differences unchanged and makes
/// constant inputs give exact zeros.
fn centered(tape: &Tape, y: Var) -> Var {
    let y0 = tape.value(y)[[0, 0]];
    tape.add_scalar(y, -y0)
}

fn col(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

/// Default bandwidth `1.06 · sd(x) · M^{-1/5}`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    1.06 * sd * n.powf(-0.2)
}

/// Equispaced grid over `[min x, max x]`.
pub fn default_grid(x: &[f64], size: usize) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if size == 1 {
        return vec![lo];
    }
    (0..size)
        .map(|k| lo + (hi - lo) * k as f64 / (size - 1) as f64)
        .collect()
}

/// Row-normalised Nadaraya-Watson weights at each grid point and a flag for
/// grid points with an empty kernel window.
pub fn nw_weights(x: &[f64], grid: &[f64], bandwidth: f64) -> (Array2<f64>, Vec<bool>) {
    let mut w = Array2::zeros((grid.len(), x.len()));
    let mut empty = vec![false; grid.len()];
    for (k, &g) in grid.iter().enumerate() {
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let kv = kernel((xi - g) / bandwidth);
            w[[k, i]] = kv;
            total += kv;
        }
        if total > 0.0 {
            w.row_mut(k).mapv_inplace(|v| v / total);
        } else {
            empty[k] = true;
        }
    }
    (w, empty)
}

/// `Σ_k max(0, s · (μ̂(g_{k+1}) − μ̂(g_k)))`, where `s = -1` penalizes decreases
/// (imposing an increasing fit) and `s = +1` penalizes increases. Returns the
/// penalty node and the number of skipped differences.
pub fn kernel_fd_on_tape(tape: &Tape, x: Var, y: Var, grid: &[f64], bandwidth: f64, s: f64) -> Result<(Var, usize)> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("grid must be sorted with at least 2 points".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Contract("bandwidth must be positive".into()));
    }
    let xv: Vec<f64> = tape.value(x).iter().copied().collect();
    let (w, empty) = nw_weights(&xv, grid, bandwidth);
    let pairs: Vec<usize> = (0..grid.len() - 1)
        .filter(|&k| !empty[k] && !empty[k + 1])
        .collect();
    let skipped = grid.len() - 1 - pairs.len();
    if pairs.is_empty() {
        return Ok((tape.scalar(0.0), skipped));
    }
    let mut d = Array2::zeros((pairs.len(), grid.len()));
    for (r, &k) in pairs.iter().enumerate() {
        d[[r, k + 1]] = s;
        d[[r, k]] = -s;
    }
    let dw = d.dot(&w);
    let diffs = tape.matmul(tape.constant(dw), centered(tape, y));
    Ok((tape.sum(tape.relu(diffs)), skipped))
}

pub fn kernel_fd_penalty(x: &[f64], y: &[f64], grid: &[f64], bandwidth: f64, s: f64) -> Result<StatisticValue> {
    if x.len() != y.len() {
        return Err(Error::Contract("x and y lengths differ".into()));
    }
    let tape = Tape::new();
    let (p, skipped) = kernel_fd_on_tape(&tape, tape.constant(col(x)), tape.constant(col(y)), grid, bandwidth, s)?;
    Ok(StatisticValue {
        value: tape.scalar_value(p),
        clamped: skipped,
    })
}

/// Fitted first differences `μ̂(g_{k+1}) − μ̂(g_k)` (`None` where a window is empty).
pub fn kernel_first_differences(x: &[f64], y: &[f64], grid: &[f64], bandwidth: f64) -> Vec<Option<f64>> {
    let (w, empty) = nw_weights(x, grid, bandwidth);
    let mu: Vec<f64> = w.rows().into_iter().map(|r| r.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    (0..grid.len() - 1)
        .map(|k| (!empty[k] && !empty[k + 1]).then(|| mu[k + 1] - mu[k]))
        .collect()
}

/// Fraction of usable grid cells whose fitted difference moves against
/// `direction` by more than `tol`.
pub fn violation_fraction(x: &[f64], y: &[f64], grid: &[f64], bandwidth: f64, direction: Direction, tol: f64) -> f64 {
    let d = kernel_first_differences(x, y, grid, bandwidth);
    let used: Vec<f64> = d.into_iter().flatten().collect();
    if used.is_empty() {
        return 0.0;
    }
    let s = direction.sign();
    used.iter().filter(|&&v| -s * v > tol).count() as f64 / used.len() as f64
}

/// Penalty for a generated batch. `batch` holds the columns named in
/// `columns`; the returned node is `weight · max(T, C)` or `weight · P`.
pub fn generator_penalty(tape: &Tape, batch: Var, columns: &[String], spec: &PenaltySpec) -> Result<Var> {
    let (m, k) = tape.shape(batch);
    if k != columns.len() {
        return Err(Error::Contract("batch width differs from column list".into()));
    }
    if m < 3 {
        return Err(Error::Contract("penalty needs a batch of at least 3 rows".into()));
    }
    if spec.weight == 0.0 {
        return Ok(tape.scalar(0.0));
    }
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("penalty column '{name}' not in batch")))
    };
    let mut x = tape.column(batch, find(&spec.x_column)?);
    if spec.masked {
        x = tape.detach(x);
    }
    let mut y = tape.column(batch, find(&spec.y_column)?);
    let s = spec.direction.sign();
    let raw = match spec.kind {
        PenaltyKind::Chetverikov => {
            if s < 0.0 {
                y = tape.neg(y);
            }
            let (t, _) = chetverikov_on_tape(tape, x, y)?;
            match spec.cutoff {
                Some(c) if tape.scalar_value(t) <= c => tape.scalar(c),
                _ => t,
            }
        }
        PenaltyKind::KernelFd => {
            let xv: Vec<f64> = tape.value(x).iter().copied().collect();
            let h = spec.bandwidth.unwrap_or_else(|| silverman_bandwidth(&xv));
            let grid = default_grid(&xv, spec.grid_size);
            kernel_fd_on_tape(tape, x, y, &grid, h, -s)?.0
        }
    };
    Ok(tape.scale(raw, spec.weight))
}
