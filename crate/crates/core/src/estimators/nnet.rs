use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forest::Task;
use crate::autodiff::{Activation, AdamState, Network, OutputHead, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: 64,
            epochs: 200,
            lr: 1e-3,
            batch_size: 64,
            validation_fraction: 0.2,
            patience: 20,
        }
    }
}

/// One-hidden-layer network on standardized inputs. For classification
/// the network emits a logit and [`NnModel::predict`] applies a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct NnModel {
    pub net: Network,
    pub task: Task,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
    pub epochs_run: usize,
}

fn standardize_cols(x: ArrayView2<f64>, mean: &[f64], sd: &[f64]) -> Array2<f64> {
    let mut z = x.to_owned();
    for (j, mut c) in z.columns_mut().into_iter().enumerate() {
        c.mapv_inplace(|v| (v - mean[j]) / sd[j]);
    }
    z
}

impl NnModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let z = standardize_cols(x, &self.x_mean, &self.x_sd);
        let out = self.net.forward_batch(&z, None).expect("dims checked at fit");
        out.column(0)
            .iter()
            .map(|&o| match self.task {
                Task::Regression => o * self.y_sd + self.y_mean,
                Task::Classification => super::linear::sigmoid(o),
            })
            .collect()
    }
}

fn batch_loss(tape: &Tape, out: crate::autodiff::Var, y: &Array2<f64>, task: Task) -> crate::autodiff::Var {
    let yv = tape.constant(y.clone());
    match task {
        Task::Regression => tape.mean(tape.square(tape.sub(out, yv))),
        // softplus(z) - y z is the logistic log loss on logit z
        Task::Classification => tape.mean(tape.sub(tape.softplus(out), tape.mul(yv, out))),
    }
}

fn eval_loss(net: &Network, x: &Array2<f64>, y: &Array2<f64>, task: Task) -> f64 {
    let out = net.forward_batch(x, None).expect("dims");
    let n = y.nrows() as f64;
    out.column(0)
        .iter()
        .zip(y.column(0))
        .map(|(&o, &t)| match task {
            Task::Regression => (o - t).powi(2),
            Task::Classification => o.max(0.0) + (-o.abs()).exp().ln_1p() - t * o,
        })
        .sum::<f64>()
        / n
}

pub fn fit_nn(x: ArrayView2<f64>, y: &[f64], task: Task, cfg: &NnConfig, rng: &mut Rng) -> Result<NnModel> {
    let (n, d) = x.dim();
    if n < 10 {
        return Err(Error::Estimator("neural net learner needs at least 10 rows".into()));
    }
    let mut x_mean = Vec::with_capacity(d);
    let mut x_sd = Vec::with_capacity(d);
    for c in x.columns() {
        let m = c.mean().unwrap_or(0.0);
        let s = c.std(1.0);
        x_mean.push(m);
        x_sd.push(if s > 0.0 { s } else { 1.0 });
    }
    let (y_mean, y_sd) = match task {
        Task::Regression => {
            let m = y.iter().sum::<f64>() / n as f64;
            let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            (m, if s > 0.0 { s } else { 1.0 })
        }
        Task::Classification => (0.0, 1.0),
    };
    let z = standardize_cols(x, &x_mean, &x_sd);
    let t = Array2::from_shape_fn((n, 1), |(i, _)| (y[i] - y_mean) / y_sd);
    let heads = vec![OutputHead {
        start: 0,
        len: 1,
        kind: Activation::Identity,
    }];
    let mut net = Network::new(&[d, cfg.hidden, 1], Activation::Relu, heads, rng)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let xv = z.select(Axis(0), val_idx);
    let tv = t.select(Axis(0), val_idx);
    let mut opt = AdamState::new(net.param_count(), cfg.lr);
    let mut best = (f64::INFINITY, net.flat_params());
    let mut since = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        train_idx.shuffle(rng);
        for chunk in train_idx.chunks(cfg.batch_size.max(1)) {
            let xb = z.select(Axis(0), chunk);
            let tb = t.select(Axis(0), chunk);
            let tape = Tape::new();
            let (out, params) = net.forward_on_tape(&tape, tape.constant(xb), None)?;
            let loss = batch_loss(&tape, out, &tb, task);
            let lv = tape.scalar_value(loss);
            if !lv.is_finite() {
                return Err(Error::Estimator(format!("neural net loss diverged at epoch {epoch}")));
            }
            let grads = tape.grad(loss, &params.all());
            let g = net.collect_gradient(&tape, &grads);
            let mut p = net.flat_params();
            opt.step(&mut p, &g);
            net.set_flat_params(&p);
        }
        if n_val == 0 {
            continue;
        }
        let vl = eval_loss(&net, &xv, &tv, task);
        if vl < best.0 {
            best = (vl, net.flat_params());
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    if n_val > 0 && best.0.is_finite() {
        net.set_flat_params(&best.1);
    }
    Ok(NnModel {
        net,
        task,
        x_mean,
        x_sd,
        y_mean,
        y_sd,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_epochs_gives_untrained_propensity() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let w: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let cfg = NnConfig { epochs: 0, ..Default::default() };
        let m = fit_nn(x.view(), &w, Task::Classification, &cfg, &mut rng_from_seed(0)).unwrap();
        let p = m.predict(x.view());
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let avg = p.iter().sum::<f64>() / p.len() as f64;
        assert!((avg - 0.5).abs() < 0.2);
    }

    #[test]
    fn learns_linear_signal() {
        let x = Array2::from_shape_fn((200, 1), |(i, _)| i as f64 / 50.0);
        let y: Vec<f64> = x.column(0).to_vec();
        let m = fit_nn(x.view(), &y, Task::Regression, &NnConfig { epochs: 100, ..Default::default() }, &mut rng_from_seed(3)).unwrap();
        let p = m.predict(x.view());
        let mse = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        let mean = y.iter().sum::<f64>() / 200.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 0.1 * var);
    }
}
