//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node to a [`Tape`]; nodes only reference
//! earlier nodes, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep. Gradients of a node that
//! feeds several consumers accumulate additively.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::kan::KanRecord;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SelectRows(Var, Vec<usize>),
    Kan(Box<KanRecord>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "scalar",
                left: t.shape(),
                right: (1, 1),
            });
        }
        Ok(t.get(0, 0))
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .as_slice()
            .iter()
            .zip(tb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_raw(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    /// Adds a 1xC row to every row of an RxC matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tr.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            bail!(Parameter, "mean of an empty tensor");
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(out, Op::Mean(a)))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            bail!(Parameter, "row index {} out of range for {} rows", bad, t.rows());
        }
        let out = t.select_rows(idx);
        Ok(self.push(out, Op::SelectRows(a, idx.to_vec())))
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Every trainable leaf receives an entry; leaves the loss does not
    /// depend on get a zero gradient of their own shape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lt.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul(&tb.transpose())?);
                    accumulate(&mut grads, *b, ta.transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, hadamard(&g, tb));
                    accumulate(&mut grads, *b, hadamard(&g, ta));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                Op::AddRow(a, row) => {
                    let mut rg = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in rg.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, rg);
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(ta.as_slice())
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(g.rows(), g.cols(), data));
                }
                Op::Square(a) => {
                    let ta = self.value(*a);
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(ta.as_slice())
                        .map(|(&gv, &x)| 2.0 * x * gv)
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(g.rows(), g.cols(), data));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor::filled(r, c, g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let v = g.get(0, 0) / (r * c) as f64;
                    accumulate(&mut grads, *a, Tensor::filled(r, c, v));
                }
                Op::SelectRows(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Kan(rec) => {
                    let parts = rec.backward(self, &g);
                    accumulate(&mut grads, rec.input, parts.input);
                    accumulate(&mut grads, rec.coeffs, parts.coeffs);
                    accumulate(&mut grads, rec.base_weight, parts.base_weight);
                    accumulate(&mut grads, rec.spline_weight, parts.spline_weight);
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) && grads[idx].is_none() {
                let (r, c) = node.value.shape();
                grads[idx] = Some(Tensor::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Tensor::from_raw(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Gradients produced by [`Tape::backward`], keyed by parameter handle.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable leaf. `None` for constants and intermediates.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for a list of parameters, in order.
    pub fn collect(&self, params: &[Var]) -> Result<Vec<Tensor>> {
        params
            .iter()
            .map(|&p| {
                self.get(p).cloned().ok_or_else(|| {
                    Error::Parameter(format!("node {} is not a trainable leaf", p.0))
                })
            })
            .collect()
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (parameter index, flat entry index) of the worst entry.
    pub worst: (usize, usize),
    pub entries: usize,
}

/// Compares backward gradients of `f` against central differences with step `h`.
///
/// The error per entry is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        bail!(Parameter, "finite-difference step must be positive, got {}", h);
    }
    let eval = |ps: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params)?;
    let base = tape.scalar(out)?;
    if !base.is_finite() {
        bail!(NonFinite, "objective is {} at the unperturbed point", base);
    }
    let grads = tape.backward(out)?.collect(&vars)?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries: 0,
    };
    for (p, grad) in grads.iter().enumerate() {
        for e in 0..params[p].len() {
            let orig = params[p].as_slice()[e];
            work[p].as_mut_slice()[e] = orig + h;
            let (t_plus, _, o_plus) = eval(&work)?;
            let plus = t_plus.scalar(o_plus)?;
            work[p].as_mut_slice()[e] = orig - h;
            let (t_minus, _, o_minus) = eval(&work)?;
            let minus = t_minus.scalar(o_minus)?;
            work[p].as_mut_slice()[e] = orig;

            let analytic = grad.as_slice()[e];
            let numeric = (plus - minus) / (2.0 * h);
            if !(numeric.is_finite() && analytic.is_finite()) {
                bail!(
                    NonFinite,
                    "gradient of parameter {} entry {} (analytic {}, numeric {})",
                    p,
                    e,
                    analytic,
                    numeric
                );
            }
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
            }
            report.entries += 1;
        }
    }
    Ok(report)
}
