//! WGAN training with a one-sided input-gradient penalty, in unconditional
//! and conditional form, plus sampling from trained generators.

use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    penalty_on_tape, Activation, AdamState, DropoutMasks, Gradient, Network, NetworkDocument, OutputHead,
    Standardization, Tape,
};
use crate::error::{Error, Result};
use crate::penalty::{generator_penalty, PenaltySpec};
use crate::rng::{self, Rng};
use crate::tabular::{stratified_batches_from, ColumnKind, ColumnSchema, Dataset, Role, Scaler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_critic: usize,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub total_steps: usize,
    pub dropout_rate: f64,
    /// Defaults to the number of generated columns.
    pub noise_dim: Option<usize>,
    pub seed: u64,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            n_critic: 15,
            lambda: 5.0,
            adam: AdamConfig::default(),
            total_steps: 5000,
            dropout_rate: 0.1,
            noise_dim: None,
            seed: 0,
            generator_hidden: default_hidden(),
            critic_hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_critic < 1 {
            errs.push("n_critic must be at least 1".to_string());
        }
        if !(self.lambda >= 0.0) {
            errs.push("lambda must be nonnegative".into());
        }
        if self.batch_size < 2 {
            errs.push("batch_size must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            errs.push("dropout_rate must be in [0, 1)".into());
        }
        if !(self.adam.lr > 0.0) {
            errs.push("learning rate must be positive".into());
        }
        if self.generator_hidden.is_empty() || self.critic_hidden.is_empty() {
            errs.push("hidden layer lists must be nonempty".into());
        }
        if self.noise_dim == Some(0) {
            errs.push("noise_dim must be positive".into());
        }
        errs
    }
}

/// Named architecture presets for robustness sweeps.
pub fn architecture_preset(name: &str) -> Option<(Vec<usize>, Vec<usize>)> {
    match name {
        "main" | "Main" => Some((vec![128, 128, 128], vec![128, 128, 128])),
        "alt1" | "Alt1" => Some((vec![64, 128, 256], vec![256, 128, 64])),
        "alt2" | "Alt2" => Some((vec![128, 256, 64], vec![64, 256, 128])),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub hidden: Vec<usize>,
    pub noise_dim: usize,
    pub cond_dim: usize,
    pub columns: Vec<ColumnSchema>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticSpec {
    pub hidden: Vec<usize>,
    pub data_dim: usize,
    pub cond_dim: usize,
}

fn head_kind(k: ColumnKind) -> Activation {
    match k {
        ColumnKind::Binary => Activation::Sigmoid,
        ColumnKind::CensoredAtZero => Activation::Relu,
        ColumnKind::Continuous => Activation::Identity,
    }
}

pub fn build_generator(spec: &GeneratorSpec, rng: &mut Rng) -> Result<Network> {
    if spec.hidden.is_empty() || spec.hidden.contains(&0) {
        return Err(Error::Schema("generator hidden dims must be nonempty and positive".into()));
    }
    if spec.columns.is_empty() {
        return Err(Error::Schema("generator needs at least one output column".into()));
    }
    let mut dims = vec![spec.noise_dim + spec.cond_dim];
    dims.extend(&spec.hidden);
    dims.push(spec.columns.len());
    let heads = spec
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| OutputHead {
            start: j,
            len: 1,
            kind: head_kind(c.kind),
        })
        .collect();
    Network::new(&dims, Activation::Relu, heads, rng)
}

pub fn build_critic(spec: &CriticSpec, rng: &mut Rng) -> Result<Network> {
    if spec.hidden.is_empty() || spec.hidden.contains(&0) {
        return Err(Error::Schema("critic hidden dims must be nonempty and positive".into()));
    }
    let mut dims = vec![spec.data_dim + spec.cond_dim];
    dims.extend(&spec.hidden);
    dims.push(1);
    let heads = vec![OutputHead {
        start: 0,
        len: 1,
        kind: Activation::Identity,
    }];
    Network::new(&dims, Activation::Relu, heads, rng)
}

/// Critic objective for one batch. `loss = -(gap) + λ·penalty` is the
/// quantity minimised, so the critic ascends the real-minus-fake gap.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss: f64,
    pub gap: f64,
    pub penalty: f64,
    pub mean_grad_norm: f64,
    pub gradient: Gradient,
}

/// Interpolation weights, one per row pair.
pub fn draw_interpolation(m: usize, rng: &mut Rng) -> Vec<f64> {
    (0..m).map(|_| rng.random::<f64>()).collect()
}

pub fn critic_loss(
    critic: &Network,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    labels: Option<&Array2<f64>>,
    lambda: f64,
    rng: &mut Rng,
) -> Result<CriticLoss> {
    let eps = draw_interpolation(real.nrows(), rng);
    critic_loss_with(critic, real, fake, labels, lambda, &eps)
}

pub fn critic_loss_with(
    critic: &Network,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    labels: Option<&Array2<f64>>,
    lambda: f64,
    eps: &[f64],
) -> Result<CriticLoss> {
    let m = real.nrows();
    if fake.dim() != real.dim() || eps.len() != m || labels.is_some_and(|l| l.nrows() != m) {
        return Err(Error::Contract("real, fake, labels and weights must have matching rows".into()));
    }
    let mut x_hat = fake.clone();
    for (i, mut row) in x_hat.rows_mut().into_iter().enumerate() {
        let e = eps[i];
        row.zip_mut_with(&real.row(i), |f, &r| *f = e * r + (1.0 - e) * *f);
    }
    let with_labels = |x: &Array2<f64>| match labels {
        Some(l) => concatenate(Axis(1), &[x.view(), l.view()]).expect("concat"),
        None => x.clone(),
    };
    let tape = Tape::new();
    let params = critic.param_vars(&tape);
    let f_real = critic.forward_with(&tape, &params, tape.constant(with_labels(real)), None)?;
    let f_fake = critic.forward_with(&tape, &params, tape.constant(with_labels(fake)), None)?;
    let gap = tape.sub(tape.mean(f_real), tape.mean(f_fake));
    let xh = tape.variable(x_hat);
    let lv = labels.map(|l| tape.constant(l.clone()));
    let (pen, norms) = penalty_on_tape(critic, &tape, &params, xh, lv)?;
    let loss = tape.add(tape.neg(gap), tape.scale(pen, lambda));
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::Numeric {
            layer: critic.first_nonfinite_layer(&with_labels(real)),
            message: format!("critic loss is {value}"),
        });
    }
    let grads = tape.grad(loss, &params.all());
    let nv = tape.value(norms);
    Ok(CriticLoss {
        loss: value,
        gap: tape.scalar_value(gap),
        penalty: tape.scalar_value(pen),
        mean_grad_norm: nv.mean().unwrap_or(0.0),
        gradient: critic.collect_gradient(&tape, &grads),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub critic_loss: f64,
    pub penalty_value: f64,
    pub gap: f64,
    #[serde(skip)]
    pub mean_grad_norm: f64,
}

pub fn write_log_csv<W: Write>(log: &[LogRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["step", "critic_loss", "penalty_value", "gap"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            format!("{}", r.critic_loss),
            format!("{}", r.penalty_value),
            format!("{}", r.gap),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A trained generator with everything needed to sample in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub schema_version: u32,
    pub network: NetworkDocument,
    /// Columns produced by the generator, in output order.
    pub generated: Vec<ColumnSchema>,
    /// Conditioning columns expected by [`sample`], in order.
    pub labels: Vec<ColumnSchema>,
    /// Subset of `labels` fed to the network (constant labels are dropped).
    pub active_labels: Vec<String>,
    pub scaler: Scaler,
    pub label_scaler: Scaler,
    pub noise_dim: usize,
    pub config: TrainConfig,
    #[serde(skip)]
    pub log: Vec<LogRow>,
    #[serde(skip)]
    net_cache: Option<Network>,
}

impl GeneratorModel {
    pub fn net(&self) -> Result<Network> {
        match &self.net_cache {
            Some(n) => Ok(n.clone()),
            None => self.network.to_network(),
        }
    }

    pub fn generated_names(&self) -> Vec<String> {
        self.generated.iter().map(|c| c.name.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: GeneratorModel = serde_json::from_str(s)?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", m.schema_version)));
        }
        m.net_cache = Some(m.network.to_network()?);
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct BatchStream {
    strata: Vec<bool>,
    m: usize,
    queue: Vec<Vec<usize>>,
}

impl BatchStream {
    fn next(&mut self, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            let mut b = stratified_batches_from(&self.strata, self.m, rng)?;
            if b.is_empty() {
                return Err(Error::Config("no complete batch fits the data".into()));
            }
            b.reverse();
            self.queue = b;
        }
        Ok(self.queue.pop().expect("nonempty"))
    }
}

fn normal_matrix(n: usize, k: usize, rng: &mut Rng) -> Array2<f64> {
    let mut z = Array2::zeros((n, k));
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    z
}

fn hcat(a: &Array2<f64>, b: Option<&Array2<f64>>) -> Array2<f64> {
    match b {
        Some(b) if b.ncols() > 0 => concatenate(Axis(1), &[a.view(), b.view()]).expect("concat"),
        _ => a.clone(),
    }
}

/// Shared trainer: `x` are the (scaled) columns to generate, `v` the
/// (scaled) conditioning columns, possibly zero-width.
#[allow(clippy::too_many_arguments)]
fn train_core(
    x: &Array2<f64>,
    v: &Array2<f64>,
    strata: Vec<bool>,
    columns: &[ColumnSchema],
    all_names: &[String],
    config: &TrainConfig,
    penalty: Option<&PenaltySpec>,
) -> Result<(Network, Vec<LogRow>, usize)> {
    config.validate()?;
    let n = x.nrows();
    let m = config.batch_size;
    if m > n {
        return Err(Error::Config(format!("batch size {m} exceeds {n} training rows")));
    }
    let d = x.ncols();
    let k = v.ncols();
    let noise_dim = config.noise_dim.unwrap_or(d);
    let mut init = rng::stream(config.seed, "init");
    let mut gen = build_generator(
        &GeneratorSpec {
            hidden: config.generator_hidden.clone(),
            noise_dim,
            cond_dim: k,
            columns: columns.to_vec(),
        },
        &mut init,
    )?;
    let mut critic = build_critic(
        &CriticSpec {
            hidden: config.critic_hidden.clone(),
            data_dim: d,
            cond_dim: k,
        },
        &mut init,
    )?;
    let mut rng = rng::stream(config.seed, "train");
    let mut batches = BatchStream { strata, m, queue: vec![] };
    let a = &config.adam;
    let mut opt_c = AdamState::with_betas(critic.param_count(), a.lr, a.beta1, a.beta2, a.eps);
    let mut opt_g = AdamState::with_betas(gen.param_count(), a.lr, a.beta1, a.beta2, a.eps);
    let mut log = Vec::with_capacity(config.total_steps);
    let cond = |idx: &[usize]| (k > 0).then(|| v.select(Axis(0), idx));
    for step in 0..config.total_steps {
        let mut last = None;
        for _ in 0..config.n_critic {
            let idx = batches.next(&mut rng)?;
            let real = x.select(Axis(0), &idx);
            let labels = cond(&idx);
            let z = normal_matrix(m, noise_dim, &mut rng);
            let masks = (config.dropout_rate > 0.0).then(|| DropoutMasks::sample(&gen, config.dropout_rate, &mut rng));
            let fake = gen.forward_batch(&hcat(&z, labels.as_ref()), masks.as_ref())?;
            let cl = critic_loss(&critic, &real, &fake, labels.as_ref(), config.lambda, &mut rng).map_err(|e| Error::Training {
                step,
                message: e.to_string(),
            })?;
            let mut p = critic.flat_params();
            opt_c.step(&mut p, &cl.gradient);
            critic.set_flat_params(&p);
            last = Some(cl);
        }
        let cl = last.expect("n_critic >= 1");
        let idx = batches.next(&mut rng)?;
        let labels = cond(&idx);
        let z = normal_matrix(m, noise_dim, &mut rng);
        let masks = (config.dropout_rate > 0.0).then(|| DropoutMasks::sample(&gen, config.dropout_rate, &mut rng));
        let tape = Tape::new();
        let gparams = gen.param_vars(&tape);
        let out = gen.forward_with(&tape, &gparams, tape.constant(hcat(&z, labels.as_ref())), masks.as_ref())?;
        let lv = labels.as_ref().map(|l| tape.constant(l.clone()));
        let joint = match lv {
            Some(l) => tape.concat_cols(out, l),
            None => out,
        };
        let cparams = critic.param_consts(&tape);
        let f = critic.forward_with(&tape, &cparams, joint, None)?;
        let mut loss = tape.neg(tape.mean(f));
        if let Some(spec) = penalty {
            let pen = generator_penalty(&tape, joint, all_names, spec).map_err(|e| Error::Training {
                step,
                message: e.to_string(),
            })?;
            loss = tape.add(loss, pen);
        }
        let lval = tape.scalar_value(loss);
        if !lval.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("generator loss is {lval}"),
            });
        }
        let grads = tape.grad(loss, &gparams.all());
        let g = gen.collect_gradient(&tape, &grads);
        let mut p = gen.flat_params();
        opt_g.step(&mut p, &g);
        gen.set_flat_params(&p);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                step,
                message: "generator parameters became non-finite".into(),
            });
        }
        log.push(LogRow {
            step,
            critic_loss: cl.loss,
            penalty_value: cl.penalty,
            gap: cl.gap,
            mean_grad_norm: cl.mean_grad_norm,
        });
    }
    Ok((gen, log, noise_dim))
}

fn strata_for(ds: &Dataset) -> Vec<bool> {
    ds.schema
        .iter()
        .position(|c| c.role == Role::Treatment)
        .map(|t| ds.rows.column(t).iter().map(|&v| v == 1.0).collect())
        .unwrap_or_else(|| vec![false; ds.n()])
}

fn standardization(sc: &Scaler) -> Standardization {
    Standardization {
        columns: sc.columns.iter().map(|c| c.name.clone()).collect(),
        mean: sc.columns.iter().map(|c| c.mean).collect(),
        sd: sc.columns.iter().map(|c| c.sd).collect(),
    }
}

/// Generate every column of `ds`.
pub fn train_unconditional(ds: &Dataset, config: &TrainConfig) -> Result<GeneratorModel> {
    let names: Vec<&str> = ds.schema.iter().map(|c| c.name.as_str()).collect();
    let gen_cols = ds.select_columns(&names)?;
    let scaler = Scaler::fit(&gen_cols)?;
    let x = scaler.transform(&gen_cols.rows);
    let v = Array2::zeros((ds.n(), 0));
    let all: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let (net, log, noise_dim) = train_core(&x, &v, strata_for(ds), &gen_cols.schema, &all, config, None)?;
    Ok(finish(net, log, noise_dim, gen_cols.schema, vec![], vec![], scaler, Scaler { columns: vec![] }, config))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    net: Network,
    log: Vec<LogRow>,
    noise_dim: usize,
    generated: Vec<ColumnSchema>,
    labels: Vec<ColumnSchema>,
    active: Vec<String>,
    scaler: Scaler,
    label_scaler: Scaler,
    config: &TrainConfig,
) -> GeneratorModel {
    GeneratorModel {
        schema_version: MODEL_SCHEMA_VERSION,
        network: NetworkDocument::from_network(&net, standardization(&scaler)),
        generated,
        labels,
        active_labels: active,
        scaler,
        label_scaler,
        noise_dim,
        config: config.clone(),
        log,
        net_cache: Some(net),
    }
}

/// Generate the columns of `ds` not listed in `label_columns`, conditional
/// on those labels. Constant label columns carry no information and are
/// dropped from the network inputs.
pub fn train_conditional(
    ds: &Dataset,
    label_columns: &[&str],
    config: &TrainConfig,
    penalty: Option<&PenaltySpec>,
) -> Result<GeneratorModel> {
    for l in label_columns {
        ds.column_index(l)?;
    }
    let gen_names: Vec<&str> = ds
        .schema
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| !label_columns.contains(n))
        .collect();
    if gen_names.is_empty() {
        return Err(Error::Config("no columns left to generate".into()));
    }
    let gen_cols = ds.select_columns(&gen_names)?;
    let label_ds = ds.select_columns(label_columns)?;
    let active: Vec<&str> = label_columns
        .iter()
        .copied()
        .filter(|l| {
            let c = ds.column(l).expect("checked");
            c.iter().any(|&v| v != c[0])
        })
        .collect();
    let active_ds = ds.select_columns(&active)?;
    let scaler = Scaler::fit(&gen_cols)?;
    let label_scaler = Scaler::fit(&active_ds)?;
    let x = scaler.transform(&gen_cols.rows);
    let v = label_scaler.transform(&active_ds.rows);
    let mut all: Vec<String> = gen_names.iter().map(|s| s.to_string()).collect();
    all.extend(active.iter().map(|s| s.to_string()));
    if let Some(p) = penalty {
        p.validate(&all)?;
    }
    let (net, log, noise_dim) = train_core(&x, &v, strata_for(ds), &gen_cols.schema, &all, config, penalty)?;
    Ok(finish(
        net,
        log,
        noise_dim,
        gen_cols.schema,
        label_ds.schema,
        active.iter().map(|s| s.to_string()).collect(),
        scaler,
        label_scaler,
        config,
    ))
}

/// Draw `n` rows in raw units. `labels` must hold `n` rows with the model's
/// label columns in order (ignored for unconditional models).
pub fn sample(model: &GeneratorModel, labels: Option<&Array2<f64>>, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    let d = model.generated.len();
    if n == 0 {
        return Ok(Array2::zeros((0, d)));
    }
    let net = model.net()?;
    let v = if model.labels.is_empty() {
        None
    } else {
        let l = labels.ok_or_else(|| Error::Contract("conditional model needs labels".into()))?;
        if l.nrows() != n || l.ncols() != model.labels.len() {
            return Err(Error::Contract(format!(
                "labels must be {n} × {}, got {} × {}",
                model.labels.len(),
                l.nrows(),
                l.ncols()
            )));
        }
        let idx: Vec<usize> = model
            .active_labels
            .iter()
            .map(|a| model.labels.iter().position(|c| &c.name == a).expect("active label"))
            .collect();
        Some(model.label_scaler.transform(&l.select(Axis(1), &idx)))
    };
    let z = normal_matrix(n, model.noise_dim, rng);
    let out = net.forward_batch(&hcat(&z, v.as_ref()), None)?;
    let mut raw = model.scaler.inverse_transform(&out);
    for (j, c) in model.generated.iter().enumerate() {
        if c.kind == ColumnKind::Binary {
            raw.column_mut(j).mapv_inplace(|p| if p >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    Ok(raw)
}

/// Two-stage fit for causal data: covariates given treatment, then the
/// outcome given covariates and treatment.
pub fn train_two_stage(
    ds: &Dataset,
    config_x: &TrainConfig,
    config_y: &TrainConfig,
    penalty: Option<&PenaltySpec>,
) -> Result<(GeneratorModel, GeneratorModel)> {
    let t = ds.treatment_index()?;
    let y = ds.outcome_index()?;
    let tname = ds.schema[t].name.clone();
    let yname = ds.schema[y].name.clone();
    let cov: Vec<String> = ds.covariate_indices().iter().map(|&j| ds.schema[j].name.clone()).collect();
    let mut xw: Vec<&str> = cov.iter().map(|s| s.as_str()).collect();
    xw.push(&tname);
    let stage_x = ds.select_columns(&xw)?;
    let gx = train_conditional(&stage_x, &[tname.as_str()], config_x, None)?;
    let mut yxw = xw.clone();
    yxw.push(&yname);
    let stage_y = ds.select_columns(&yxw)?;
    let gy = train_conditional(&stage_y, &xw, config_y, penalty)?;
    Ok((gx, gy))
}
