use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::att::EstimatorResult;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFit {
    pub intercept: f64,
    /// Coefficients on the original covariate scale.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ElasticNetFit {
    pub fn predict_row(&self, x: ndarray::ArrayView1<f64>) -> f64 {
        self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

struct Standardized {
    z: Array2<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    yc: Vec<f64>,
}

fn standardize(x: ArrayView2<f64>, y: &[f64]) -> Standardized {
    let n = x.nrows() as f64;
    let mut z = x.to_owned();
    let mut mean = Vec::new();
    let mut scale = Vec::new();
    for mut c in z.columns_mut() {
        let m = c.sum() / n;
        let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        c.mapv_inplace(|v| if s > 0.0 { (v - m) / s } else { 0.0 });
        mean.push(m);
        scale.push(s);
    }
    let y_mean = y.iter().sum::<f64>() / n;
    Standardized {
        z,
        mean,
        scale,
        y_mean,
        yc: y.iter().map(|v| v - y_mean).collect(),
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Coordinate descent on standardized columns for
/// `(1/2n)‖y − Xβ‖² + λ(α‖β‖₁ + (1−α)‖β‖²/2)`, warm-started from `beta`.
fn cd(s: &Standardized, lambda: f64, alpha: f64, beta: &mut [f64], tol: f64, max_iter: usize) -> (usize, bool) {
    let (n, d) = s.z.dim();
    let nf = n as f64;
    let mut r: Vec<f64> = s.yc.clone();
    for j in 0..d {
        if beta[j] != 0.0 {
            for i in 0..n {
                r[i] -= s.z[[i, j]] * beta[j];
            }
        }
    }
    for it in 0..max_iter {
        let mut delta: f64 = 0.0;
        for j in 0..d {
            if s.scale[j] == 0.0 {
                continue;
            }
            let col = s.z.column(j);
            let old = beta[j];
            let rho = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nf + old;
            let new = soft(rho, lambda * alpha) / (1.0 + lambda * (1.0 - alpha));
            if new != old {
                let diff = new - old;
                for i in 0..n {
                    r[i] -= col[i] * diff;
                }
                beta[j] = new;
                delta = delta.max(diff.abs());
            }
        }
        if delta < tol {
            return (it + 1, true);
        }
    }
    (max_iter, false)
}

fn unscale(s: &Standardized, beta: &[f64], lambda: f64, iterations: usize, converged: bool) -> ElasticNetFit {
    let coef: Vec<f64> = beta
        .iter()
        .zip(&s.scale)
        .map(|(b, sc)| if *sc > 0.0 { b / sc } else { 0.0 })
        .collect();
    let intercept = s.y_mean - coef.iter().zip(&s.mean).map(|(b, m)| b * m).sum::<f64>();
    ElasticNetFit {
        intercept,
        coef,
        lambda,
        iterations,
        converged,
    }
}

pub fn elastic_net(x: ArrayView2<f64>, y: &[f64], lambda: f64, alpha: f64) -> ElasticNetFit {
    let s = standardize(x, y);
    let mut beta = vec![0.0; x.ncols()];
    let (it, ok) = cd(&s, lambda, alpha, &mut beta, 1e-12, 100_000);
    unscale(&s, &beta, lambda, it, ok)
}

fn lambda_grid(s: &Standardized, alpha: f64, n_lambda: usize) -> Vec<f64> {
    let n = s.z.nrows() as f64;
    let lmax = s
        .z
        .columns()
        .into_iter()
        .map(|c| (c.iter().zip(&s.yc).map(|(a, b)| a * b).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
        / alpha.max(1e-3);
    let lmax = if lmax > 0.0 { lmax } else { 1e-8 };
    let ratio: f64 = 1e-4;
    (0..n_lambda)
        .map(|k| lmax * ratio.powf(k as f64 / (n_lambda.max(2) - 1) as f64))
        .collect()
}

/// Penalty chosen by K-fold cross-validated squared error over a
/// logarithmic grid, then refit on all rows.
pub fn elastic_net_cv(x: ArrayView2<f64>, y: &[f64], alpha: f64, n_lambda: usize, folds: usize, rng: &mut Rng) -> ElasticNetFit {
    let n = x.nrows();
    let full = standardize(x, y);
    let grid = lambda_grid(&full, alpha, n_lambda);
    let k = folds.clamp(2, n.max(2));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        fold[i] = p % k;
    }
    let mut cv = vec![0.0; grid.len()];
    for f in 0..k {
        let tr: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let te: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        if tr.len() < 2 || te.is_empty() {
            continue;
        }
        let xt = x.select(Axis(0), &tr);
        let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let s = standardize(xt.view(), &yt);
        let mut beta = vec![0.0; x.ncols()];
        for (g, &lam) in grid.iter().enumerate() {
            let (it, ok) = cd(&s, lam, alpha, &mut beta, 1e-7, 10_000);
            let fit = unscale(&s, &beta, lam, it, ok);
            cv[g] += te.iter().map(|&i| (y[i] - fit.predict_row(x.row(i))).powi(2)).sum::<f64>();
        }
    }
    let best = (0..grid.len()).min_by(|&a, &b| cv[a].total_cmp(&cv[b])).unwrap_or(0);
    let mut beta = vec![0.0; x.ncols()];
    let mut last = (0, true);
    for &lam in &grid[..=best] {
        last = cd(&full, lam, alpha, &mut beta, 1e-9, 100_000);
    }
    unscale(&full, &beta, grid[best], last.0, last.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbConfig {
    pub alpha: f64,
    pub n_lambda: usize,
    pub cv_folds: usize,
    pub zeta: f64,
    pub iterations: usize,
    pub tol: f64,
}

impl Default for RbConfig {
    fn default() -> Self {
        RbConfig {
            alpha: 0.5,
            n_lambda: 50,
            cv_folds: 10,
            zeta: 0.5,
            iterations: 2000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceWeights {
    pub gamma: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

fn balance_objective(xc: &Array2<f64>, target: &Array1<f64>, g: &[f64], zeta: f64) -> (f64, usize, f64) {
    let ga = Array1::from(g.to_vec());
    let fit = xc.t().dot(&ga);
    let mut worst = (0usize, 0.0f64);
    for (k, (&t, &f)) in target.iter().zip(fit.iter()).enumerate() {
        let r = t - f;
        if r.abs() > worst.1.abs() {
            worst = (k, r);
        }
    }
    let sq: f64 = g.iter().map(|v| v * v).sum();
    (zeta * sq + (1.0 - zeta) * worst.1 * worst.1, worst.0, worst.1)
}

/// Simplex weights minimizing `ζ‖γ‖² + (1−ζ)‖target − Xcᵀγ‖∞²` by entropic
/// mirror descent with a diminishing step, keeping the best iterate.
pub fn balancing_weights(xc: &Array2<f64>, target: &Array1<f64>, zeta: f64, iterations: usize, tol: f64) -> BalanceWeights {
    let n0 = xc.nrows();
    let mut g = vec![1.0 / n0 as f64; n0];
    let (mut f_best, _, _) = balance_objective(xc, target, &g, zeta);
    let mut best = g.clone();
    let mut history = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let (_, k, r) = balance_objective(xc, target, &g, zeta);
        let grad: Vec<f64> = (0..n0)
            .map(|i| 2.0 * zeta * g[i] - 2.0 * (1.0 - zeta) * r * xc[[i, k]])
            .collect();
        let gmax = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        let eta = 1.0 / (gmax * (t as f64).sqrt());
        let mut logs: Vec<f64> = g.iter().zip(&grad).map(|(gi, d)| gi.ln() - eta * d).collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logs.iter_mut().for_each(|v| *v = (*v - mx).exp());
        let s: f64 = logs.iter().sum();
        g = logs.into_iter().map(|v| (v / s).max(1e-300)).collect();
        let (f, _, _) = balance_objective(xc, target, &g, zeta);
        if f < f_best {
            f_best = f;
            best = g.clone();
        }
        history.push(f_best);
    }
    let tail = iterations / 10;
    let converged = history.len() < iterations
        || tail == 0
        || history[history.len() - 1 - tail] - f_best <= tol * f_best.abs().max(1.0);
    BalanceWeights {
        gamma: best,
        objective: f_best,
        converged,
    }
}

/// Residual balancing: elastic-net outcome model for controls plus
/// balancing weights on the control residuals.
pub fn att_rb(x: ArrayView2<f64>, y: &[f64], w: &[bool], cfg: &RbConfig, rng: &mut Rng) -> Result<EstimatorResult> {
    let (n, d) = x.dim();
    let t: Vec<usize> = (0..n).filter(|&i| w[i]).collect();
    let c: Vec<usize> = (0..n).filter(|&i| !w[i]).collect();
    if c.len() <= d {
        return Err(Error::Estimator("residual balancing needs more controls than covariates".into()));
    }
    if t.is_empty() {
        return Err(Error::Estimator("no treated units".into()));
    }
    let xc = x.select(Axis(0), &c);
    let yc: Vec<f64> = c.iter().map(|&i| y[i]).collect();
    let en = elastic_net_cv(xc.view(), &yc, cfg.alpha, cfg.n_lambda, cfg.cv_folds, rng);
    // Balance in units of the pooled covariate sd.
    let sd: Vec<f64> = x
        .columns()
        .into_iter()
        .map(|col| {
            let s = col.std(1.0);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut xcs = xc.clone();
    for (j, mut col) in xcs.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v / sd[j]);
    }
    let xt = x.select(Axis(0), &t);
    let xbar1 = xt.mean_axis(Axis(0)).expect("treated rows");
    let target = Array1::from_shape_fn(d, |j| xbar1[j] / sd[j]);
    let bw = balancing_weights(&xcs, &target, cfg.zeta, cfg.iterations, cfg.tol);
    let n1 = t.len() as f64;
    let rt: Vec<f64> = t.iter().map(|&i| y[i] - en.predict_row(x.row(i))).collect();
    let rc: Vec<f64> = c.iter().map(|&i| y[i] - en.predict_row(x.row(i))).collect();
    let mean_rt = rt.iter().sum::<f64>() / n1;
    let est = mean_rt - bw.gamma.iter().zip(&rc).map(|(g, r)| g * r).sum::<f64>();
    let var = bw.gamma.iter().zip(&rc).map(|(g, r)| (g * r).powi(2)).sum::<f64>()
        + rt.iter().map(|r| (r - mean_rt).powi(2)).sum::<f64>() / (n1 * n1);
    let mut r = EstimatorResult::new("RB", est, var.sqrt(), n);
    if !bw.converged {
        r.flags.push("balancing weights not converged".into());
    }
    if !en.converged {
        r.flags.push("elastic net not converged".into());
    }
    Ok(r)
}
