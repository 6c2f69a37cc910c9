//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is an append-only Wengert list. Every recorded value is a
//! `rows × cols` matrix; scalars are `1 × 1`. Operations take [`Var`] handles
//! to earlier nodes, so parents always precede children and a single reverse
//! sweep visits each node once.
//!
//! Nodes created with [`Tape::constant`] (and everything computed only from
//! constants) do not require gradients; the backward sweep skips them.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a[n×m] + b[1×m]`, broadcast over rows.
    AddRow(Var, Var),
    MatMul(Var, Var),
    /// `a[n×k] · b[m×k]ᵀ`
    MatMulT(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    /// Per-row sum: `n×m -> n×1`.
    SumCols(Var),
    Column(Var, usize),
    HStack(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`, or `None` if `var` does not influence it.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but returns zeros shaped like the leaf when it is unused.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Array2<f64> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(var).raw_dim()),
        }
    }

    pub fn take(&mut self, var: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

pub(crate) fn log_sigmoid_scalar(x: f64) -> f64 {
    log_sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// A leaf whose gradient is wanted.
    pub fn var(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.derived(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.derived(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.derived(v, Op::Mul(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.derived(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.derived(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.derived(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.derived(v, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.derived(v, Op::AddScalar(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.derived(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.derived(v, Op::Sigmoid(a), &[a])
    }

    /// `log σ(a)`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(log_sigmoid);
        self.derived(v, Op::LogSigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.derived(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.derived(v, Op::Log(a), &[a])
    }

    /// Elementwise clamp to `[lo, hi]`; gradient is zero where clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.derived(v, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.derived(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.derived(v, Op::SumCols(a), &[a])
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let v = self.value(a).slice(s![.., j..j + 1]).to_owned();
        self.derived(v, Op::Column(a, j), &[a])
    }

    /// Concatenate along columns.
    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("hstack: row counts differ");
        self.derived(v, Op::HStack(parts.to_vec()), parts)
    }

    /// Tanh built from the sigmoid primitive: `tanh(x) = 2σ(2x) − 1`.
    pub fn tanh(&mut self, a: Var) -> Var {
        let twice = self.scale(a, 2.0);
        let sig = self.sigmoid(twice);
        let sig2 = self.scale(sig, 2.0);
        self.add_scalar(sig2, -1.0)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= *slope
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &s| *d *= s * (1.0 - s));
                self.accumulate(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= sigmoid(-x));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * &node.value),
            Op::Log(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).raw_dim();
                self.accumulate(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::SumCols(a) => {
                let shape = self.value(*a).raw_dim();
                let d = g
                    .broadcast(shape)
                    .expect("sum_cols gradient broadcast")
                    .to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::Column(a, j) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *j..*j + 1]).assign(g);
                    self.accumulate(grads, *a, d);
                }
            }
            Op::HStack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.wants(*p) {
                        let d = g.slice(s![.., offset..offset + w]).to_owned();
                        self.accumulate(grads, *p, d);
                    }
                    offset += w;
                }
            }
        }
    }
}
