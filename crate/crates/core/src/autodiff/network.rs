use std::rc::Rc;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => z,
        }
    }

    fn on_tape(self, tape: &Tape, z: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::Identity => z,
        }
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Transform applied to a contiguous block of final-layer units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHead {
    pub start: usize,
    pub len: usize,
    pub kind: Activation,
}

/// Dense multilayer perceptron. The last layer is affine; its outputs are
/// passed through the [`OutputHead`] transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub heads: Vec<OutputHead>,
}

/// Flat parameter vector, laid out layer by layer as row-major weights
/// followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Gradient(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &Gradient, c: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }
}

/// Per-step weight masks: each weight is kept with probability `1 - rate`
/// and survivors are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct DropoutMasks(Vec<Rc<Array2<f64>>>);

impl DropoutMasks {
    pub fn sample(net: &Network, rate: f64, rng: &mut Rng) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let masks = net
            .layers
            .iter()
            .map(|l| {
                let (o, i) = l.weight.dim();
                let mut m = Array2::zeros((o, i));
                for v in m.iter_mut() {
                    *v = if rng.random::<f64>() < rate { 0.0 } else { keep };
                }
                Rc::new(m)
            })
            .collect();
        DropoutMasks(masks)
    }
}

/// Parameter leaves created by [`Network::forward_on_tape`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl Network {
    /// Build an MLP with the given layer widths. `activations[k]` is used
    /// after layer `k` for every layer except the last, which is affine.
    /// Weights are uniform on `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(dims: &[usize], hidden: Activation, heads: Vec<OutputHead>, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Schema("network needs at least input and output dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((fan_out, fan_in));
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            let activation = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Dense {
                weight: w,
                bias: Array1::zeros(fan_out),
                activation,
            });
        }
        let net = Network { layers, heads };
        net.validate()?;
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Dense>, heads: Vec<OutputHead>) -> Result<Self> {
        let net = Network { layers, heads };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("network has no layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Schema(format!(
                    "layer {k} outputs {} units but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Schema(format!("layer {k} bias length mismatch")));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: Some(k),
                    message: "non-finite parameter".into(),
                });
            }
        }
        let out = self.output_dim();
        let mut covered = vec![0u8; out];
        for h in &self.heads {
            if h.start + h.len > out {
                return Err(Error::Schema("output head exceeds output width".into()));
            }
            for c in &mut covered[h.start..h.start + h.len] {
                *c += 1;
            }
        }
        if covered.iter().any(|&c| c != 1) {
            return Err(Error::Schema(
                "every output unit must be covered by exactly one head".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::output_dim).unwrap_or(0)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::output_dim));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend(l.weight.iter().copied());
            p.extend(l.bias.iter().copied());
        }
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = p[off];
                off += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[off];
                off += 1;
            }
        }
    }

    fn apply_heads(&self, z: &mut Array2<f64>) {
        for h in &self.heads {
            for mut row in z.rows_mut() {
                for v in row.iter_mut().skip(h.start).take(h.len) {
                    *v = h.kind.apply(*v);
                }
            }
        }
    }

    /// Batched forward pass without recording (rows are observations).
    pub fn forward_batch(&self, x: &Array2<f64>, masks: Option<&DropoutMasks>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Schema(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut a = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = match masks {
                Some(m) => {
                    let w = &l.weight * &*m.0[k];
                    a.dot(&w.t())
                }
                None => a.dot(&l.weight.t()),
            };
            z += &l.bias.view().insert_axis(Axis(0));
            if l.activation != Activation::Identity {
                z.mapv_inplace(|v| l.activation.apply(v));
            }
            a = z;
        }
        self.apply_heads(&mut a);
        Ok(a)
    }

    /// Single-observation forward. With `dropout_rate > 0` an rng is required.
    pub fn forward(&self, x: &[f64], dropout_rate: f64, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let masks = if dropout_rate > 0.0 {
            let rng = rng.ok_or_else(|| Error::Contract("dropout requires a random stream".into()))?;
            Some(DropoutMasks::sample(self, dropout_rate, rng))
        } else {
            None
        };
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let out = self.forward_batch(&xm, masks.as_ref())?;
        Ok(out.row(0).to_vec())
    }

    /// Leaves for all parameters; gradients flow to them.
    pub fn param_vars(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let w = tape.variable(l.weight.clone());
                    let b = tape.variable(l.bias.clone().insert_axis(Axis(0)));
                    (w, b)
                })
                .collect(),
        }
    }

    /// Parameters recorded as constants (for passes that only need input gradients).
    pub fn param_consts(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let w = tape.constant(l.weight.clone());
                    let b = tape.constant(l.bias.clone().insert_axis(Axis(0)));
                    (w, b)
                })
                .collect(),
        }
    }

    /// Recorded forward pass using the given parameter nodes.
    pub fn forward_with(&self, tape: &Tape, params: &ParamVars, input: Var, masks: Option<&DropoutMasks>) -> Result<Var> {
        let (_, cols) = tape.shape(input);
        if cols != self.input_dim() {
            return Err(Error::Schema(format!(
                "input has {cols} columns, network expects {}",
                self.input_dim()
            )));
        }
        let mut a = input;
        for (k, (l, &(w, b))) in self.layers.iter().zip(&params.layers).enumerate() {
            let w_eff = match masks {
                Some(m) => tape.mul_const(w, Rc::clone(&m.0[k])),
                None => w,
            };
            let z = tape.add_row(tape.matmul(a, tape.transpose(w_eff)), b);
            a = l.activation.on_tape(tape, z);
        }
        Ok(self.heads_on_tape(tape, a))
    }

    fn heads_on_tape(&self, tape: &Tape, z: Var) -> Var {
        if self.heads.iter().all(|h| h.kind == Activation::Identity) {
            return z;
        }
        let (n, k) = tape.shape(z);
        let mut out: Option<Var> = None;
        for kind in [Activation::Relu, Activation::Sigmoid, Activation::Identity] {
            let mut mask = Array2::zeros((n, k));
            let mut any = false;
            for h in self.heads.iter().filter(|h| h.kind == kind) {
                mask.columns_mut()
                    .into_iter()
                    .skip(h.start)
                    .take(h.len)
                    .for_each(|mut c| c.fill(1.0));
                any = true;
            }
            if !any {
                continue;
            }
            let part = tape.mul_const(kind.on_tape(tape, z), Rc::new(mask));
            out = Some(match out {
                Some(prev) => tape.add(prev, part),
                None => part,
            });
        }
        out.unwrap_or(z)
    }

    /// Convenience: fresh parameter leaves plus forward pass.
    pub fn forward_on_tape(&self, tape: &Tape, input: Var, masks: Option<&DropoutMasks>) -> Result<(Var, ParamVars)> {
        let params = self.param_vars(tape);
        let out = self.forward_with(tape, &params, input, masks)?;
        Ok((out, params))
    }

    /// Flatten per-layer gradient nodes into the parameter layout.
    pub fn collect_gradient(&self, tape: &Tape, grads: &[Var]) -> Gradient {
        let mut g = Vec::with_capacity(self.param_count());
        for v in grads {
            g.extend(tape.value(*v).iter().copied());
        }
        Gradient(g)
    }

    /// First layer whose activations go non-finite on `x`, if any.
    pub fn first_nonfinite_layer(&self, x: &Array2<f64>) -> Option<usize> {
        let mut a = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight.t()) + &l.bias.view().insert_axis(Axis(0));
            z.mapv_inplace(|v| l.activation.apply(v));
            if z.iter().any(|v| !v.is_finite()) {
                return Some(k);
            }
            a = z;
        }
        None
    }
}

/// Reverse-mode gradient of a scalar loss with respect to all parameters.
///
/// `loss` receives the tape and the network output node for input `x`.
pub fn grad_params(
    net: &Network,
    x: &Array2<f64>,
    loss: impl FnOnce(&Tape, Var) -> Var,
) -> Result<(f64, Gradient)> {
    let tape = Tape::new();
    let input = tape.constant(x.clone());
    let (out, params) = net.forward_on_tape(&tape, input, None)?;
    let l = loss(&tape, out);
    let value = tape.scalar_value(l);
    if !value.is_finite() {
        return Err(Error::Numeric {
            layer: net.first_nonfinite_layer(x).or(Some(net.layers.len() - 1)),
            message: format!("loss is {value}"),
        });
    }
    let grads = tape.grad(l, &params.all());
    Ok((value, net.collect_gradient(&tape, &grads)))
}

/// `∇_x f(x)` for a scalar-output network.
pub fn grad_input(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    if net.output_dim() != 1 {
        return Err(Error::Contract(format!(
            "input gradient needs a scalar output, network has {}",
            net.output_dim()
        )));
    }
    let tape = Tape::new();
    let xv = tape.variable(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row"));
    let params = net.param_consts(&tape);
    let out = net.forward_with(&tape, &params, xv, None)?;
    let g = tape.grad(out, &[xv])[0];
    Ok(tape.value(g).iter().copied().collect())
}

/// Records the hinge-squared input-gradient penalty
/// `mean_i max(0, ‖∇_x f(x̂_i)‖₂ − 1)²` over the rows of `x_hat`.
///
/// `x_hat` must be a differentiable node; `labels`, when given, are
/// appended as extra (non-penalized) inputs.
pub fn penalty_on_tape(
    net: &Network,
    tape: &Tape,
    params: &ParamVars,
    x_hat: Var,
    labels: Option<Var>,
) -> Result<(Var, Var)> {
    let input = match labels {
        Some(l) => tape.concat_cols(x_hat, l),
        None => x_hat,
    };
    let f = net.forward_with(tape, params, input, None)?;
    let total = tape.sum(f);
    let gx = tape.grad(total, &[x_hat])[0];
    let norms = tape.sqrt(tape.sum_cols(tape.square(gx)));
    let hinge = tape.relu(tape.add_scalar(norms, -1.0));
    Ok((tape.mean(tape.square(hinge)), norms))
}

/// Gradient with respect to the parameters of
/// `[max(0, ‖∇_x̂ f(x̂)‖₂ − 1)]²` at a single point (double backprop).
pub fn grad_penalty_wrt_params(net: &Network, x_hat: &[f64]) -> Result<(f64, Gradient)> {
    if net.output_dim() != 1 {
        return Err(Error::Contract("penalty needs a scalar critic".into()));
    }
    let tape = Tape::new();
    let xv = tape.variable(Array2::from_shape_vec((1, x_hat.len()), x_hat.to_vec()).expect("row"));
    let params = net.param_vars(&tape);
    let (pen, _) = penalty_on_tape(net, &tape, &params, xv, None)?;
    let value = tape.scalar_value(pen);
    if !value.is_finite() {
        return Err(Error::Numeric {
            layer: None,
            message: format!("penalty is {value}"),
        });
    }
    let grads = tape.grad(pen, &params.all());
    Ok((value, net.collect_gradient(&tape, &grads)))
}
