use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: String,
    pub estimate: f64,
    pub se: f64,
    pub n_used: usize,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl EstimatorResult {
    pub(crate) fn new(name: &str, estimate: f64, se: f64, n_used: usize) -> Self {
        EstimatorResult {
            estimator: name.to_string(),
            estimate,
            se,
            n_used,
            flags: Vec::new(),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var1(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn split(y: &[f64], w: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (&v, &b) in y.iter().zip(w) {
        if b {
            t.push(v)
        } else {
            c.push(v)
        }
    }
    (t, c)
}

/// Difference in means with the two-sample (Neyman) standard error.
pub fn att_diff(y: &[f64], w: &[bool]) -> Result<EstimatorResult> {
    let (t, c) = split(y, w);
    if t.len() < 2 || c.len() < 2 {
        return Err(Error::Estimator("difference in means needs at least two units per arm".into()));
    }
    let est = mean(&t) - mean(&c);
    let se = (var1(&t) / t.len() as f64 + var1(&c) / c.len() as f64).sqrt();
    Ok(EstimatorResult::new("DIFF", est, se, y.len()))
}

/// Mean over treated units of `Y - μ̂₀(X)`.
pub fn att_cm(y: &[f64], w: &[bool], mu0: &[f64]) -> Result<EstimatorResult> {
    let r: Vec<f64> = y
        .iter()
        .zip(mu0)
        .zip(w)
        .filter(|(_, &b)| b)
        .map(|((a, m), _)| a - m)
        .collect();
    if r.is_empty() {
        return Err(Error::Estimator("no treated units".into()));
    }
    let n1 = r.len() as f64;
    let se = if r.len() > 1 { (var1(&r) / n1).sqrt() } else { 0.0 };
    Ok(EstimatorResult::new("CM", mean(&r), se, y.len()))
}

/// Odds `e/(1-e)` used to weight controls.
pub fn odds(e: &[f64]) -> Vec<f64> {
    e.iter().map(|&p| p / (1.0 - p)).collect()
}

/// Treated mean of `r` minus the self-normalized weighted control mean,
/// with the influence-function variance of both parts. An all-zero weight
/// vector makes the control term vanish when `zero_ok` is set.
fn weighted_contrast(r: &[f64], w: &[bool], omega: &[f64], zero_ok: bool) -> Result<(f64, f64, usize)> {
    let n1 = w.iter().filter(|&&b| b).count();
    if n1 == 0 {
        return Err(Error::Estimator("no treated units".into()));
    }
    let total: f64 = w.iter().zip(omega).filter(|(&b, _)| !b).map(|(_, &o)| o).sum();
    let t_mean = r.iter().zip(w).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>() / n1 as f64;
    let mut var = r
        .iter()
        .zip(w)
        .filter(|(_, &b)| b)
        .map(|(v, _)| (v - t_mean).powi(2))
        .sum::<f64>()
        / (n1 as f64).powi(2);
    if !(total > 0.0) {
        if zero_ok {
            return Ok((t_mean, var.sqrt(), r.len()));
        }
        return Err(Error::Estimator("control weights sum to zero".into()));
    }
    let c_mean = r
        .iter()
        .zip(w)
        .zip(omega)
        .filter(|((_, &b), _)| !b)
        .map(|((v, _), o)| v * o)
        .sum::<f64>()
        / total;
    var += r
        .iter()
        .zip(w)
        .zip(omega)
        .filter(|((_, &b), _)| !b)
        .map(|((v, _), o)| (o * (v - c_mean) / total).powi(2))
        .sum::<f64>();
    Ok((t_mean - c_mean, var.sqrt(), r.len()))
}

/// Weighting estimator from unnormalized control weights.
pub fn att_ht_weights(y: &[f64], w: &[bool], omega: &[f64]) -> Result<EstimatorResult> {
    let (est, se, n) = weighted_contrast(y, w, omega, false)?;
    Ok(EstimatorResult::new("HT", est, se, n))
}

/// Doubly robust estimator from unnormalized control weights.
pub fn att_dr_weights(y: &[f64], w: &[bool], mu0: &[f64], omega: &[f64]) -> Result<EstimatorResult> {
    let r: Vec<f64> = y.iter().zip(mu0).map(|(a, m)| a - m).collect();
    let (est, se, n) = weighted_contrast(&r, w, omega, true)?;
    Ok(EstimatorResult::new("DR", est, se, n))
}

pub fn att_ht(y: &[f64], w: &[bool], e: &[f64]) -> Result<EstimatorResult> {
    att_ht_weights(y, w, &odds(e))
}

pub fn att_dr(y: &[f64], w: &[bool], mu0: &[f64], e: &[f64]) -> Result<EstimatorResult> {
    att_dr_weights(y, w, mu0, &odds(e))
}

pub fn clip_propensity(e: &[f64]) -> Vec<f64> {
    e.iter().map(|&p| p.clamp(1e-6, 1.0 - 1e-6)).collect()
}

/// Indices kept after dropping every unit with `e > threshold`.
pub fn trim(e: &[f64], w: &[bool], threshold: f64) -> Result<(Vec<usize>, usize)> {
    let keep: Vec<usize> = (0..e.len()).filter(|&i| e[i] <= threshold).collect();
    if !keep.iter().any(|&i| w[i]) {
        return Err(Error::Estimator("no treated units after trimming".into()));
    }
    let dropped = e.len() - keep.len();
    Ok((keep, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_arithmetic() {
        let r = att_diff(&[3.0, 5.0, 1.0, 2.0], &[true, true, false, false]).unwrap();
        assert_eq!(r.estimate, 2.5);
    }

    #[test]
    fn cm_with_zero_model_is_treated_mean() {
        let r = att_cm(&[3.0, 5.0, 1.0], &[true, true, false], &[0.0; 3]).unwrap();
        assert_eq!(r.estimate, 4.0);
    }

    #[test]
    fn ht_with_constant_propensity_is_diff() {
        let y = [3.0, 5.0, 1.0, 2.0, 7.0];
        let w = [true, true, false, false, false];
        let a = att_ht(&y, &w, &[0.5; 5]).unwrap();
        let b = att_diff(&y, &w).unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-15);
    }

    #[test]
    fn ht_single_weighted_control() {
        let y = [3.0, 1.0, 9.0];
        let w = [true, false, false];
        let r = att_ht_weights(&y, &w, &[0.0, 0.0, 2.0]).unwrap();
        assert_eq!(r.estimate, 3.0 - 9.0);
        assert!(att_ht_weights(&y, &w, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dr_collapses() {
        let y = [3.0, 5.0, 1.0, 2.0, 7.0];
        let w = [true, true, false, false, false];
        let dr = att_dr(&y, &w, &[0.0; 5], &[0.5; 5]).unwrap();
        assert!((dr.estimate - att_diff(&y, &w).unwrap().estimate).abs() < 1e-15);
        let mu = [1.0, 2.0, 0.5, 1.5, 3.0];
        let cm = att_dr_weights(&y, &w, &mu, &[0.0; 5]).unwrap();
        assert_eq!(cm.estimate, att_cm(&y, &w, &mu).unwrap().estimate);
    }

    #[test]
    fn trimming_rules() {
        let w = [true, false, true];
        assert_eq!(trim(&[0.5; 3], &w, 0.95).unwrap().1, 0);
        let (keep, d) = trim(&[0.5, 0.96, 0.5], &w, 0.95).unwrap();
        assert_eq!((keep, d), (vec![0, 2], 1));
        assert!(trim(&[0.99, 0.5, 0.97], &w, 0.95).is_err());
    }
}
