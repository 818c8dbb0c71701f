use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub(crate) fn design(x: ArrayView2<f64>) -> DMatrix<f64> {
    let (n, d) = x.dim();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] })
}

/// Ordinary least squares with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.intercept + r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

pub fn fit_lm(x: ArrayView2<f64>, y: &[f64]) -> Result<LinearModel> {
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::Contract("x and y lengths differ".into()));
    }
    let a = design(x);
    if n < a.ncols() {
        return Err(Error::Estimator(format!("{n} rows cannot identify {} coefficients", a.ncols())));
    }
    let p = a.ncols();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (n.max(p) as f64);
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::Estimator("design matrix is rank deficient".into()));
    }
    let b = svd
        .solve(&DVector::from_column_slice(y), tol)
        .map_err(|e| Error::Estimator(e.to_string()))?;
    Ok(LinearModel {
        intercept: b[0],
        coef: b.iter().skip(1).copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted probabilities reached the numerical boundary (separation).
    pub separated: bool,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogitModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| sigmoid(self.intercept + r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()))
            .collect()
    }
}

/// Logistic regression by Newton-Raphson.
pub fn fit_logit(x: ArrayView2<f64>, w: &[bool]) -> Result<LogitModel> {
    fit_logit_with(x, w, 1e-8, 100)
}

pub fn fit_logit_with(x: ArrayView2<f64>, w: &[bool], tol: f64, max_iter: usize) -> Result<LogitModel> {
    let n = x.nrows();
    if n != w.len() {
        return Err(Error::Contract("x and w lengths differ".into()));
    }
    let a = design(x);
    let p = a.ncols();
    let y = DVector::from_iterator(n, w.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let mut separated = false;
    for it in 0..max_iter {
        iterations = it + 1;
        let eta = &a * &beta;
        let mu = eta.map(sigmoid);
        let wts = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let grad = a.transpose() * (&y - &mu);
        let mut aw = a.clone();
        for i in 0..n {
            aw.row_mut(i).scale_mut(wts[i].sqrt());
        }
        let h = aw.transpose() * &aw;
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                separated = true;
                let ridge = h + DMatrix::identity(p, p) * 1e-8;
                match ridge.cholesky() {
                    Some(c) => c.solve(&grad),
                    None => return Err(Error::Estimator("logit information matrix is singular".into())),
                }
            }
        };
        beta += &step;
        if !beta.iter().all(|v| v.is_finite()) {
            return Err(Error::Estimator("logit iterations diverged".into()));
        }
        if step.amax() < tol {
            converged = true;
            break;
        }
    }
    let fitted = (&a * &beta).map(sigmoid);
    if fitted.iter().any(|&m| m < 1e-10 || m > 1.0 - 1e-10) {
        separated = true;
    }
    Ok(LogitModel {
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        iterations,
        converged,
        separated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_line() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let m = fit_lm(x.view(), &[0.0, 2.0, 4.0, 6.0]).unwrap();
        assert!(m.intercept.abs() < 1e-12);
        assert!((m.coef[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_rejected() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        assert!(fit_lm(x.view(), &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn symmetric_logit_has_zero_intercept() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0], [-2.0], [-1.0], [1.0], [2.0]];
        let w = [false, false, true, true, true, false, false, true];
        let m = fit_logit(x.view(), &w).unwrap();
        assert!(m.intercept.abs() < 1e-10);
        assert!(m.converged);
    }

    #[test]
    fn separable_data_flagged() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let m = fit_logit(x.view(), &[false, false, true, true]).unwrap();
        assert!(m.separated || !m.converged);
    }
}
