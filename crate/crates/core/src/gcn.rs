//! Graph convolution layers, KAN-GCN composition, and the composite loss.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::kan::{KanLayer, KanVars};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Dense layer `sigma(H W)`; aggregation is applied by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weight: Tensor,
    pub activation: Activation,
}

impl GcnLayer {
    /// Glorot-uniform initialization.
    pub fn init(d_in: usize, d_out: usize, activation: Activation, seed: u64) -> Result<Self> {
        Ok(Self {
            weight: glorot(d_in, d_out, seed)?,
            activation,
        })
    }
}

fn glorot(d_in: usize, d_out: usize, seed: u64) -> Result<Tensor> {
    if d_in == 0 || d_out == 0 {
        bail!(Parameter, "layer dimensions must be positive, got {}x{}", d_in, d_out);
    }
    let limit = libm::sqrt(6.0 / (d_in + d_out) as f64);
    let mut rng = rng::seeded(seed);
    let data = (0..d_in * d_out).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(d_in, d_out, data)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Gcn(GcnLayer),
    Kan(KanLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayer {
    /// Multiply by the normalized adjacency before the transformation.
    pub aggregate: bool,
    pub kind: LayerKind,
}

impl ModelLayer {
    pub fn dims(&self) -> (usize, usize) {
        match &self.kind {
            LayerKind::Gcn(l) => l.weight.shape(),
            LayerKind::Kan(l) => (l.n_in(), l.n_out()),
        }
    }
}

/// Linear map from the last hidden width to one output per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Readout {
    pub fn init(d_in: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            weight: glorot(d_in, 1, seed)?,
            bias: Tensor::zeros(1, 1),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    KanGcn,
    Gcn,
    MlpGcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::KanGcn => "kan-gcn",
            ModelKind::Gcn => "gcn",
            ModelKind::MlpGcn => "mlp-gcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kan-gcn" => Some(ModelKind::KanGcn),
            "gcn" => Some(ModelKind::Gcn),
            "mlp-gcn" => Some(ModelKind::MlpGcn),
            _ => None,
        }
    }
}

/// A layer stack plus readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    layers: Vec<ModelLayer>,
    readout: Readout,
}

/// Tape handles for every parameter of a [`ModelBundle`], in
/// [`ModelBundle::params`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub vars: Vec<Var>,
}

/// Recorded forward pass: last hidden embedding and per-node output.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub hidden: Var,
    pub output: Var,
}

impl ModelBundle {
    pub fn new(layers: Vec<ModelLayer>, readout: Readout) -> Result<Self> {
        if layers.is_empty() {
            bail!(Parameter, "model needs at least one layer");
        }
        if !layers.iter().any(|l| l.aggregate) {
            bail!(Parameter, "model needs at least one aggregation layer");
        }
        for pair in layers.windows(2) {
            let (a, b) = (pair[0].dims(), pair[1].dims());
            if a.1 != b.0 {
                return Err(Error::Shape {
                    op: "model_layers",
                    left: a,
                    right: b,
                });
            }
        }
        let last = layers[layers.len() - 1].dims().1;
        if readout.weight.shape() != (last, 1) || readout.bias.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "readout",
                left: (last, 1),
                right: readout.weight.shape(),
            });
        }
        Ok(Self { layers, readout })
    }

    pub fn layers(&self) -> &[ModelLayer] {
        &self.layers
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dims().0
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.kind {
                LayerKind::Gcn(g) => out.push(&g.weight),
                LayerKind::Kan(k) => {
                    out.push(&k.coeffs);
                    out.push(&k.base_weight);
                    out.push(&k.spline_weight);
                }
            }
        }
        out.push(&self.readout.weight);
        out.push(&self.readout.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.kind {
                LayerKind::Gcn(g) => out.push(&mut g.weight),
                LayerKind::Kan(k) => {
                    out.push(&mut k.coeffs);
                    out.push(&mut k.base_weight);
                    out.push(&mut k.spline_weight);
                }
            }
        }
        out.push(&mut self.readout.weight);
        out.push(&mut self.readout.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            vars: self.params().into_iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Forward pass recorded on `tape` with parameters bound by [`bind`](Self::bind)
    /// (or any handles in the same order).
    pub fn forward_with(&self, tape: &mut Tape, vars: &[Var], adj: Var, x: Var) -> Result<Forward> {
        let mut h = x;
        let mut it = vars.iter().copied();
        let mut next = || it.next().ok_or_else(|| Error::Parameter("too few parameter handles".into()));
        for layer in &self.layers {
            h = match &layer.kind {
                LayerKind::Gcn(g) => {
                    let w = next()?;
                    if layer.aggregate {
                        gcn_layer_forward(tape, adj, h, w, g.activation)?
                    } else {
                        dense_forward(tape, h, w, g.activation)?
                    }
                }
                LayerKind::Kan(k) => {
                    let kv = KanVars {
                        coeffs: next()?,
                        base_weight: next()?,
                        spline_weight: next()?,
                    };
                    if layer.aggregate {
                        kan_gcn_layer_forward(tape, adj, h, k, &kv)?
                    } else {
                        k.forward(tape, &kv, h)?
                    }
                }
            };
        }
        let (rw, rb) = (next()?, next()?);
        let o = tape.matmul(h, rw)?;
        let output = tape.add_row(o, rb)?;
        Ok(Forward { hidden: h, output })
    }

    /// Per-node predictions.
    pub fn predict(&self, adj: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "model_forward",
                left: x.shape(),
                right: (x.rows(), self.input_dim()),
            });
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|t| tape.constant(t.clone())).collect();
        let a = tape.constant(adj.clone());
        let xv = tape.constant(x.clone());
        let f = self.forward_with(&mut tape, &vars, a, xv)?;
        Ok(tape.value(f.output).as_slice().to_vec())
    }
}

/// `predict` under its operation name.
pub fn model_forward(model: &ModelBundle, adj: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
    model.predict(adj, x)
}

fn activate(tape: &mut Tape, v: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(v),
        Activation::Identity => v,
    }
}

/// `sigma(A H W)`.
pub fn gcn_layer_forward(tape: &mut Tape, adj: Var, h: Var, weight: Var, act: Activation) -> Result<Var> {
    let agg = tape.matmul(adj, h)?;
    let z = tape.matmul(agg, weight)?;
    Ok(activate(tape, z, act))
}

fn dense_forward(tape: &mut Tape, h: Var, weight: Var, act: Activation) -> Result<Var> {
    let z = tape.matmul(h, weight)?;
    Ok(activate(tape, z, act))
}

/// KAN layer applied row-wise to `A H`.
pub fn kan_gcn_layer_forward(tape: &mut Tape, adj: Var, h: Var, layer: &KanLayer, params: &KanVars) -> Result<Var> {
    let agg = tape.matmul(adj, h)?;
    layer.forward(tape, params, agg)
}

/// Normalized Dirichlet energy `trace(H^T (I - A) H) / (N d)`.
pub fn graph_reg_loss(tape: &mut Tape, h: Var, adj: Var) -> Result<Var> {
    let (n, d) = tape.value(h).shape();
    if n == 0 || d == 0 {
        bail!(Parameter, "graph regularizer of an empty embedding");
    }
    let ah = tape.matmul(adj, h)?;
    let diff = tape.sub(h, ah)?;
    let prod = tape.mul(h, diff)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, 1.0 / (n * d) as f64))
}

/// Mean squared error between targets and predictions (both column vectors).
pub fn prediction_loss(tape: &mut Tape, y: Var, y_hat: Var) -> Result<Var> {
    let r = tape.sub(y_hat, y)?;
    let sq = tape.square(r);
    tape.mean(sq)
}

/// Weights of the graph and prediction terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    lambda1: f64,
    lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 1.0,
        }
    }
}

impl LossConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda2.is_finite()) || lambda1 < 0.0 || lambda2 < 0.0 {
            bail!(Parameter, "loss weights must be finite and non-negative");
        }
        if lambda1 == 0.0 && lambda2 == 0.0 {
            bail!(Parameter, "loss weights cannot both be zero");
        }
        Ok(Self { lambda1, lambda2 })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Recorded `lambda1 * graph + lambda2 * pred`.
    pub fn combine(&self, tape: &mut Tape, graph: Var, pred: Var) -> Result<Var> {
        let g = tape.scale(graph, self.lambda1);
        let p = tape.scale(pred, self.lambda2);
        tape.add(g, p)
    }
}

pub fn total_loss(cfg: &LossConfig, l_graph: f64, l_pred: f64) -> Result<f64> {
    // rounding can push a PSD quadratic form a hair below zero
    if l_graph < -1e-12 || l_pred < 0.0 {
        bail!(Domain, "loss components must be non-negative ({}, {})", l_graph, l_pred);
    }
    Ok(cfg.lambda1 * l_graph + cfg.lambda2 * l_pred)
}

/// Unrecorded Dirichlet energy.
pub fn graph_reg_value(h: &Tensor, adj: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let av = tape.constant(adj.clone());
    let l = graph_reg_loss(&mut tape, hv, av)?;
    tape.scalar(l)
}

/// Unrecorded mean squared error.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape {
            op: "prediction_loss",
            left: (y.len(), 1),
            right: (y_hat.len(), 1),
        });
    }
    if y.is_empty() {
        bail!(Parameter, "mean squared error of empty vectors");
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Architecture description used to build fresh models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub grid_size: usize,
    pub order: usize,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::KanGcn,
            hidden: vec![16, 16],
            grid_size: 1,
            order: 2,
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn kan_gcn(hidden: Vec<usize>, grid_size: usize, order: usize) -> Self {
        Self {
            kind: ModelKind::KanGcn,
            hidden,
            grid_size,
            order,
            ..Self::default()
        }
    }

    /// Builds a model for `n_in` input features. Layer `i` draws from
    /// sub-seed `(seed, i)`, the readout from `(seed, layers)`.
    pub fn build(&self, n_in: usize, seed: u64) -> Result<ModelBundle> {
        if self.hidden.is_empty() {
            bail!(Parameter, "at least one hidden layer is required");
        }
        let mut dims = vec![n_in];
        dims.extend_from_slice(&self.hidden);
        let mut layers = Vec::with_capacity(self.hidden.len());
        for (i, w) in dims.windows(2).enumerate() {
            let s = rng::derive_seed(seed, &[i as u64]);
            let layer = match self.kind {
                ModelKind::KanGcn => ModelLayer {
                    aggregate: true,
                    kind: LayerKind::Kan(KanLayer::init(w[0], w[1], self.grid_size, self.order, s)?),
                },
                ModelKind::Gcn => ModelLayer {
                    aggregate: true,
                    kind: LayerKind::Gcn(GcnLayer::init(w[0], w[1], self.activation, s)?),
                },
                // aggregate once, then per-node perceptron layers
                ModelKind::MlpGcn => ModelLayer {
                    aggregate: i == 0,
                    kind: LayerKind::Gcn(GcnLayer::init(w[0], w[1], Activation::Relu, s)?),
                },
            };
            layers.push(layer);
        }
        let readout = Readout::init(dims[dims.len() - 1], rng::derive_seed(seed, &[self.hidden.len() as u64]))?;
        ModelBundle::new(layers, readout)
    }
}
