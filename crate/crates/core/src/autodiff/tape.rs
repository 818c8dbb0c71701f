//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a dense `Array2<f64>`. Backward passes are themselves
//! recorded on the tape, so the gradient of a gradient (needed for the
//! critic's input-gradient penalty) is obtained by calling [`Tape::grad`]
//! on a scalar built from earlier gradient nodes.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Rc<Array2<f64>>),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    SumRows(usize),
    SumCols(usize),
    SumAll(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    BroadcastScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Square(usize),
    Sqrt(usize),
    SafeRecip(usize),
    SliceCols(usize, usize),
    ScatterCols(usize, usize),
    ConcatCols(usize, usize),
    Element(usize, usize, usize),
    ScatterElement(usize, usize, usize),
}

struct Node {
    value: Rc<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes.borrow()[v].requires_grad
    }

    fn val(&self, v: usize) -> Rc<Array2<f64>> {
        Rc::clone(&self.nodes.borrow()[v].value)
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn variable(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> Rc<Array2<f64>> {
        self.val(v.0)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.val(v.0);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v.0)
    }

    /// Copy of `v`'s value as a constant: cuts the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = (*self.val(v.0)).clone();
        self.constant(value)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = &*self.val(a.0) + &*self.val(b.0);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = &*self.val(a.0) - &*self.val(b.0);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, Op::Sub(a.0, b.0), rg)
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = &*self.val(a.0) * &*self.val(b.0);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, Op::Mul(a.0, b.0), rg)
    }

    /// Elementwise product with a fixed array.
    pub fn mul_const(&self, a: Var, c: Rc<Array2<f64>>) -> Var {
        let value = &*self.val(a.0) * &*c;
        let rg = self.rg(a.0);
        self.push(value, Op::MulConst(a.0, c), rg)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = &*self.val(a.0) * c;
        let rg = self.rg(a.0);
        self.push(value, Op::Scale(a.0, c), rg)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let value = &*self.val(a.0) + c;
        let rg = self.rg(a.0);
        self.push(value, Op::AddScalar(a.0), rg)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.val(a.0).dot(&*self.val(b.0));
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, Op::MatMul(a.0, b.0), rg)
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = self.val(a.0).t().as_standard_layout().into_owned();
        let rg = self.rg(a.0);
        self.push(value, Op::Transpose(a.0), rg)
    }

    /// `a` (n×k) plus the row vector `row` (1×k) added to every row.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let av = self.val(a.0);
        let rv = self.val(row.0);
        assert_eq!(rv.nrows(), 1, "add_row expects a 1×k row");
        assert_eq!(rv.ncols(), av.ncols(), "add_row width mismatch");
        let value = &*av + &*rv;
        let rg = self.rg(a.0) || self.rg(row.0);
        self.push(value, Op::AddRow(a.0, row.0), rg)
    }

    /// Column sums as a 1×k row.
    pub fn sum_rows(&self, a: Var) -> Var {
        let value = self.val(a.0).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a.0);
        self.push(value, Op::SumRows(a.0), rg)
    }

    /// Row sums as an n×1 column.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = self.val(a.0).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a.0);
        self.push(value, Op::SumCols(a.0), rg)
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.val(a.0).sum());
        let rg = self.rg(a.0);
        self.push(value, Op::SumAll(a.0), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.val(a.0).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Repeat a 1×k row `n` times.
    pub fn broadcast_rows(&self, a: Var, n: usize) -> Var {
        let av = self.val(a.0);
        assert_eq!(av.nrows(), 1);
        let value = av
            .broadcast((n, av.ncols()))
            .expect("broadcast rows")
            .to_owned();
        let rg = self.rg(a.0);
        self.push(value, Op::BroadcastRows(a.0), rg)
    }

    /// Repeat an n×1 column `k` times.
    pub fn broadcast_cols(&self, a: Var, k: usize) -> Var {
        let av = self.val(a.0);
        assert_eq!(av.ncols(), 1);
        let value = av
            .broadcast((av.nrows(), k))
            .expect("broadcast cols")
            .to_owned();
        let rg = self.rg(a.0);
        self.push(value, Op::BroadcastCols(a.0), rg)
    }

    pub fn broadcast_scalar(&self, a: Var, shape: (usize, usize)) -> Var {
        let x = self.scalar_value(a);
        let rg = self.rg(a.0);
        self.push(Array2::from_elem(shape, x), Op::BroadcastScalar(a.0), rg)
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.val(a.0).mapv(|z| if z > 0.0 { z } else { 0.0 });
        let rg = self.rg(a.0);
        self.push(value, Op::Relu(a.0), rg)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.val(a.0).mapv(sigmoid);
        let rg = self.rg(a.0);
        self.push(value, Op::Sigmoid(a.0), rg)
    }

    /// Elementwise `ln(1 + e^a)`.
    pub fn softplus(&self, a: Var) -> Var {
        let value = self.val(a.0).mapv(|z| z.max(0.0) + (-z.abs()).exp().ln_1p());
        let rg = self.rg(a.0);
        self.push(value, Op::Softplus(a.0), rg)
    }

    pub fn square(&self, a: Var) -> Var {
        let value = self.val(a.0).mapv(|z| z * z);
        let rg = self.rg(a.0);
        self.push(value, Op::Square(a.0), rg)
    }

    /// Elementwise square root of a nonnegative input; the derivative at 0 is taken as 0.
    pub fn sqrt(&self, a: Var) -> Var {
        let value = self.val(a.0).mapv(|z| z.max(0.0).sqrt());
        let rg = self.rg(a.0);
        self.push(value, Op::Sqrt(a.0), rg)
    }

    /// Elementwise `1/a`, with 0 wherever `a == 0`.
    pub fn safe_recip(&self, a: Var) -> Var {
        let value = self
            .val(a.0)
            .mapv(|z| if z == 0.0 { 0.0 } else { 1.0 / z });
        let rg = self.rg(a.0);
        self.push(value, Op::SafeRecip(a.0), rg)
    }

    /// Elementwise quotient `a / b` (0 where `b == 0`).
    pub fn div(&self, a: Var, b: Var) -> Var {
        let r = self.safe_recip(b);
        self.mul(a, r)
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = self.val(a.0).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a.0);
        self.push(value, Op::SliceCols(a.0, start), rg)
    }

    pub fn column(&self, a: Var, j: usize) -> Var {
        self.slice_cols(a, j, 1)
    }

    /// Embed `a` into a zero matrix of width `width`, starting at column `start`.
    pub fn scatter_cols(&self, a: Var, start: usize, width: usize) -> Var {
        let av = self.val(a.0);
        let mut value = Array2::zeros((av.nrows(), width));
        value
            .slice_mut(s![.., start..start + av.ncols()])
            .assign(&*av);
        let rg = self.rg(a.0);
        self.push(value, Op::ScatterCols(a.0, start), rg)
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Var {
        let av = self.val(a.0);
        let bv = self.val(b.0);
        assert_eq!(av.nrows(), bv.nrows(), "concat_cols row mismatch");
        let value = ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).expect("concat");
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, Op::ConcatCols(a.0, b.0), rg)
    }

    /// Single entry as a 1×1 node.
    pub fn element(&self, a: Var, i: usize, j: usize) -> Var {
        let x = self.val(a.0)[[i, j]];
        let rg = self.rg(a.0);
        self.push(Array2::from_elem((1, 1), x), Op::Element(a.0, i, j), rg)
    }

    fn scatter_element(&self, a: Var, i: usize, j: usize, shape: (usize, usize)) -> Var {
        let mut value = Array2::zeros(shape);
        value[[i, j]] = self.scalar_value(a);
        let rg = self.rg(a.0);
        self.push(value, Op::ScatterElement(a.0, i, j), rg)
    }

    fn zeros_like(&self, v: usize) -> Var {
        let dim = self.val(v).dim();
        self.constant(Array2::zeros(dim))
    }

    /// Gradient of the 1×1 node `y` with respect to each of `wrt`.
    ///
    /// The returned nodes live on the same tape and can be differentiated
    /// again. Inputs that `y` does not depend on get a zero constant.
    pub fn grad(&self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(y), (1, 1), "grad needs a scalar output");
        let top = y.0;
        let mut adj: Vec<Option<Var>> = vec![None; top + 1];
        adj[top] = Some(self.scalar(1.0));

        for idx in (0..=top).rev() {
            let Some(g) = adj[idx] else { continue };
            let (op, requires) = {
                let nodes = self.nodes.borrow();
                (nodes[idx].op.clone(), nodes[idx].requires_grad)
            };
            if !requires {
                continue;
            }
            let acc = |tape: &Tape, adj: &mut Vec<Option<Var>>, parent: usize, contrib: Var| {
                adj[parent] = Some(match adj[parent] {
                    Some(prev) => tape.add(prev, contrib),
                    None => contrib,
                });
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.rg(a) {
                        acc(self, &mut adj, a, g);
                    }
                    if self.rg(b) {
                        acc(self, &mut adj, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        acc(self, &mut adj, a, g);
                    }
                    if self.rg(b) {
                        let c = self.neg(g);
                        acc(self, &mut adj, b, c);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let c = self.mul(g, Var(b));
                        acc(self, &mut adj, a, c);
                    }
                    if self.rg(b) {
                        let c = self.mul(g, Var(a));
                        acc(self, &mut adj, b, c);
                    }
                }
                Op::MulConst(a, c) => {
                    let d = self.mul_const(g, c);
                    acc(self, &mut adj, a, d);
                }
                Op::Scale(a, c) => {
                    let d = self.scale(g, c);
                    acc(self, &mut adj, a, d);
                }
                Op::AddScalar(a) => acc(self, &mut adj, a, g),
                Op::MatMul(a, b) => {
                    if self.rg(a) {
                        let bt = self.transpose(Var(b));
                        let c = self.matmul(g, bt);
                        acc(self, &mut adj, a, c);
                    }
                    if self.rg(b) {
                        let at = self.transpose(Var(a));
                        let c = self.matmul(at, g);
                        acc(self, &mut adj, b, c);
                    }
                }
                Op::Transpose(a) => {
                    let c = self.transpose(g);
                    acc(self, &mut adj, a, c);
                }
                Op::AddRow(a, r) => {
                    if self.rg(a) {
                        acc(self, &mut adj, a, g);
                    }
                    if self.rg(r) {
                        let c = self.sum_rows(g);
                        acc(self, &mut adj, r, c);
                    }
                }
                Op::SumRows(a) => {
                    let n = self.val(a).nrows();
                    let c = self.broadcast_rows(g, n);
                    acc(self, &mut adj, a, c);
                }
                Op::SumCols(a) => {
                    let k = self.val(a).ncols();
                    let c = self.broadcast_cols(g, k);
                    acc(self, &mut adj, a, c);
                }
                Op::SumAll(a) => {
                    let shape = self.val(a).dim();
                    let c = self.broadcast_scalar(g, shape);
                    acc(self, &mut adj, a, c);
                }
                Op::BroadcastRows(a) => {
                    let c = self.sum_rows(g);
                    acc(self, &mut adj, a, c);
                }
                Op::BroadcastCols(a) => {
                    let c = self.sum_cols(g);
                    acc(self, &mut adj, a, c);
                }
                Op::BroadcastScalar(a) => {
                    let c = self.sum(g);
                    acc(self, &mut adj, a, c);
                }
                Op::Relu(a) => {
                    let mask = self.val(a).mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
                    let c = self.mul_const(g, Rc::new(mask));
                    acc(self, &mut adj, a, c);
                }
                Op::Sigmoid(a) => {
                    let s = Var(idx);
                    let one_minus = self.add_scalar(self.neg(s), 1.0);
                    let ds = self.mul(s, one_minus);
                    let c = self.mul(g, ds);
                    acc(self, &mut adj, a, c);
                }
                Op::Softplus(a) => {
                    let c = self.mul(g, self.sigmoid(Var(a)));
                    acc(self, &mut adj, a, c);
                }
                Op::Square(a) => {
                    let two_a = self.scale(Var(a), 2.0);
                    let c = self.mul(g, two_a);
                    acc(self, &mut adj, a, c);
                }
                Op::Sqrt(a) => {
                    let r = self.safe_recip(Var(idx));
                    let half_r = self.scale(r, 0.5);
                    let c = self.mul(g, half_r);
                    acc(self, &mut adj, a, c);
                }
                Op::SafeRecip(a) => {
                    let r2 = self.square(Var(idx));
                    let c = self.neg(self.mul(g, r2));
                    acc(self, &mut adj, a, c);
                }
                Op::SliceCols(a, start) => {
                    let width = self.val(a).ncols();
                    let c = self.scatter_cols(g, start, width);
                    acc(self, &mut adj, a, c);
                }
                Op::ScatterCols(a, start) => {
                    let len = self.val(a).ncols();
                    let c = self.slice_cols(g, start, len);
                    acc(self, &mut adj, a, c);
                }
                Op::ConcatCols(a, b) => {
                    let ka = self.val(a).ncols();
                    let kb = self.val(b).ncols();
                    if self.rg(a) {
                        let c = self.slice_cols(g, 0, ka);
                        acc(self, &mut adj, a, c);
                    }
                    if self.rg(b) {
                        let c = self.slice_cols(g, ka, kb);
                        acc(self, &mut adj, b, c);
                    }
                }
                Op::Element(a, i, j) => {
                    let shape = self.val(a).dim();
                    let c = self.scatter_element(g, i, j, shape);
                    acc(self, &mut adj, a, c);
                }
                Op::ScatterElement(a, i, j) => {
                    let c = self.element(g, i, j);
                    acc(self, &mut adj, a, c);
                }
            }
        }

        wrt.iter()
            .map(|v| match adj.get(v.0).copied().flatten() {
                Some(g) => g,
                None => self.zeros_like(v.0),
            })
            .collect()
    }
}
