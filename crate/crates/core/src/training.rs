//! Optimization, cross-validation, metrics, and experiment harnesses.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::{floyd_warshall, RoutingGraph};
use crate::error::{bail, Error, Result};
use crate::gcn::{graph_reg_loss, prediction_loss, LossConfig, ModelBundle, ModelSpec};
use crate::graph::{build_matrices, TrafficGraph};
use crate::preprocess::SeriesStats;
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Source of wall-clock seconds. The core library never reads time itself.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed accumulators shaped like `params`.
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        bail!(Parameter, "adam: {} parameters, {} gradients, {} accumulators", params.len(), grads.len(), state.m.len());
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        for (op, other) in [("adam_grad", g.shape()), ("adam_state", state.m[i].shape())] {
            if p.shape() != other {
                return Err(Error::Shape {
                    op,
                    left: p.shape(),
                    right: other,
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(state.beta1, t);
    let c2 = 1.0 - libm::pow(state.beta2, t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let ps = p.as_mut_slice();
        let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
        for (j, &gj) in g.as_slice().iter().enumerate() {
            ms[j] = b1 * ms[j] + (1.0 - b1) * gj;
            vs[j] = b2 * vs[j] + (1.0 - b2) * gj * gj;
            let m_hat = ms[j] / c1;
            let v_hat = vs[j] / c2;
            ps[j] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub decay: f64,
    /// Stop after this many epochs without a lower epoch loss.
    pub patience: Option<usize>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 300,
            folds: 5,
            seed: 0,
            decay: 1.0,
            patience: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(Parameter, "learning_rate must be finite and non-negative, got {}", self.learning_rate);
        }
        if self.batch_size == 0 {
            bail!(Parameter, "batch_size must be positive");
        }
        if self.folds < 2 {
            bail!(Parameter, "folds must be at least 2, got {}", self.folds);
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            bail!(Parameter, "decay must be positive, got {}", self.decay);
        }
        if self.patience == Some(0) {
            bail!(Parameter, "patience must be positive");
        }
        Ok(())
    }
}

/// Splits `0..n` into `k` shuffled folds; the first `n % k` folds get one
/// extra index. Each fold is sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        bail!(Parameter, "cannot split {} samples into {} folds", n, k);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Test fold `fold` and the union of the others.
pub fn fold_partition(folds: &[Vec<usize>], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train.sort_unstable();
    (train, folds[fold].clone())
}

fn check_pair(y: &[f64], y_hat: &[f64], op: &'static str) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape {
            op,
            left: (y.len(), 1),
            right: (y_hat.len(), 1),
        });
    }
    if y.is_empty() {
        bail!(Parameter, "{} of empty vectors", op);
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat, "mae")?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| libm::fabs(a - b)).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat, "rmse")?;
    Ok(libm::sqrt(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64))
}

/// Adds `Normal(0, (pct * column_std)^2)` to every column. Constant columns
/// and `pct = 0` leave values untouched.
pub fn add_gaussian_noise(x: &Tensor, pct: f64, seed: u64) -> Result<Tensor> {
    if !(pct >= 0.0 && pct.is_finite()) {
        bail!(Parameter, "noise percentage must be finite and non-negative, got {}", pct);
    }
    let mut out = x.clone();
    if pct == 0.0 || x.rows() == 0 {
        return Ok(out);
    }
    let mut r = rng::seeded(seed);
    for c in 0..x.cols() {
        let std = SeriesStats::of(&x.column_values(c))?.std;
        for row in 0..x.rows() {
            let z: f64 = StandardNormal.sample(&mut r);
            if std > 0.0 {
                out.set(row, c, x.get(row, c) + z * pct * std);
            }
        }
    }
    Ok(out)
}

/// Relative decrease in epoch loss that counts as an improvement for patience.
pub const PATIENCE_MIN_DELTA: f64 = 1e-12;

/// Loss components over one epoch, batch losses weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub prediction: f64,
    pub graph: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    /// Training-node MSE before the first update.
    pub initial_mse: f64,
    /// Training-node MSE after the last update.
    pub final_mse: f64,
    pub train_seconds: f64,
}

/// Inputs shared by every experiment: normalized adjacency, node features,
/// node targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub adjacency: Tensor,
    pub features: Tensor,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(adjacency: Tensor, features: Tensor, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        if adjacency.shape() != (n, n) {
            return Err(Error::Shape {
                op: "dataset_adjacency",
                left: adjacency.shape(),
                right: (n, n),
            });
        }
        if features.rows() != n {
            return Err(Error::Shape {
                op: "dataset_features",
                left: features.shape(),
                right: (n, features.cols()),
            });
        }
        Ok(Self {
            adjacency,
            features,
            targets,
        })
    }

    pub fn node_count(&self) -> usize {
        self.targets.len()
    }
}

fn subset_mse(model: &ModelBundle, data: &Dataset, idx: &[usize]) -> Result<f64> {
    let pred = model.predict(&data.adjacency, &data.features)?;
    let (y, p): (Vec<f64>, Vec<f64>) = idx.iter().map(|&i| (data.targets[i], pred[i])).unzip();
    crate::gcn::mse(&y, &p)
}

/// Trains on the nodes in `train_idx`. Each step samples a batch of nodes for
/// the loss while aggregation runs over the whole graph.
pub fn train_on(
    model: &mut ModelBundle,
    data: &Dataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_idx.is_empty() {
        bail!(Parameter, "no training nodes");
    }
    if let Some(&bad) = train_idx.iter().find(|&&i| i >= data.node_count()) {
        bail!(Parameter, "training index {} out of range for {} nodes", bad, data.node_count());
    }
    let start = clock.now();
    let initial_mse = subset_mse(model, data, train_idx)?;
    let mut adam = AdamState::new(&model.params());
    let mut order = train_idx.to_vec();
    let mut r = rng::seeded(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * libm::pow(cfg.decay, epoch as f64);
        order.shuffle(&mut r);
        let (mut tot, mut pl, mut gl) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let batch = batch.as_slice();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let adj = tape.constant(data.adjacency.clone());
            let x = tape.constant(data.features.clone());
            let fwd = model.forward_with(&mut tape, &bound.vars, adj, x)?;
            let y_hat = tape.select_rows(fwd.output, batch)?;
            let y = tape.constant(Tensor::column(&batch.iter().map(|&i| data.targets[i]).collect::<Vec<_>>())?);
            let lp = prediction_loss(&mut tape, y, y_hat)?;
            let lg = graph_reg_loss(&mut tape, fwd.hidden, adj)?;
            let loss = cfg.loss.combine(&mut tape, lg, lp)?;
            let value = tape.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(alloc::format!("loss became {} at epoch {}", value, epoch)));
            }
            let grads = tape.backward(loss)?.collect(&bound.vars)?;
            adam_step(&mut model.params_mut(), &grads, &mut adam, lr)?;
            let w = batch.len() as f64;
            tot += w * value;
            pl += w * tape.scalar(lp)?;
            gl += w * tape.scalar(lg)?;
        }
        let b = order.len() as f64;
        let rec = EpochRecord {
            epoch,
            learning_rate: lr,
            total: tot / b,
            prediction: pl / b,
            graph: gl / b,
        };
        history.push(rec);
        if let Some(p) = cfg.patience {
            if !best.is_finite() || rec.total < best - PATIENCE_MIN_DELTA * libm::fabs(best) {
                best = rec.total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break;
                }
            }
        }
    }
    let final_mse = subset_mse(model, data, train_idx)?;
    if !final_mse.is_finite() {
        return Err(Error::NonFinite(alloc::format!("training MSE became {} after {} epochs", final_mse, history.len())));
    }
    Ok(TrainReport {
        epochs_run: history.len(),
        history,
        initial_mse,
        final_mse,
        train_seconds: clock.now() - start,
    })
}

/// Trains on every node.
pub fn train(model: &mut ModelBundle, data: &Dataset, cfg: &TrainConfig, clock: &dyn Clock) -> Result<TrainReport> {
    let all: Vec<usize> = (0..data.node_count()).collect();
    train_on(model, data, &all, cfg, clock)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
}

/// MAE and RMSE over the nodes in `idx`.
pub fn evaluate(model: &ModelBundle, data: &Dataset, idx: &[usize]) -> Result<Scores> {
    let pred = model.predict(&data.adjacency, &data.features)?;
    let (y, p): (Vec<f64>, Vec<f64>) = idx.iter().map(|&i| (data.targets[i], pred[i])).unzip();
    Ok(Scores {
        mae: mae(&y, &p)?,
        rmse: rmse(&y, &p)?,
    })
}

/// Held-out scores plus the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub train_seconds: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test: Vec<usize>,
    pub metrics: MetricsReport,
    pub initial_mse: f64,
    pub final_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mae: f64,
    pub rmse: f64,
}

/// Builds, trains, and scores one model on a train/test split. Model and
/// shuffling seeds both come from `seed`.
pub fn fit_and_score(
    spec: &ModelSpec,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<(ModelBundle, TrainReport, Scores)> {
    let mut model = spec.build(data.features.cols(), rng::derive_seed(seed, &[0]))?;
    let run_cfg = TrainConfig {
        seed: rng::derive_seed(seed, &[1]),
        ..cfg.clone()
    };
    let report = train_on(&mut model, data, train_idx, &run_cfg, clock)?;
    let scores = evaluate(&model, data, test_idx)?;
    Ok((model, report, scores))
}

/// k-fold cross-validation over nodes; fold `f` uses sub-seed `(seed, f)`.
pub fn cross_validate(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, clock: &dyn Clock) -> Result<CvReport> {
    cfg.validate()?;
    let folds = kfold_split(data.node_count(), cfg.folds, cfg.seed)?;
    let mut out = Vec::with_capacity(folds.len());
    for f in 0..folds.len() {
        let (train_idx, test_idx) = fold_partition(&folds, f);
        let seed = rng::derive_seed(cfg.seed, &[f as u64]);
        let (_, rep, sc) = fit_and_score(spec, data, &train_idx, &test_idx, cfg, seed, clock)?;
        out.push(FoldResult {
            fold: f,
            test: test_idx,
            metrics: MetricsReport {
                mae: sc.mae,
                rmse: sc.rmse,
                train_seconds: rep.train_seconds,
                epochs_run: rep.epochs_run,
                history: rep.history,
            },
            initial_mse: rep.initial_mse,
            final_mse: rep.final_mse,
        });
    }
    let k = out.len() as f64;
    Ok(CvReport {
        mae: out.iter().map(|f| f.metrics.mae).sum::<f64>() / k,
        rmse: out.iter().map(|f| f.metrics.rmse).sum::<f64>() / k,
        folds: out,
    })
}

/// Train/test split holding out the first of `cfg.folds` folds.
pub fn holdout_split(n: usize, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let folds = kfold_split(n, cfg.folds, cfg.seed)?;
    Ok(fold_partition(&folds, 0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub grid: usize,
    pub order: usize,
    /// `Err` holds the failure message for the cell.
    pub outcome: core::result::Result<Scores, String>,
    pub seconds: f64,
}

impl SweepRow {
    /// Negated MAE; higher is better.
    pub fn accuracy(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|s| -s.mae)
    }
}

/// One KAN-GCN per `(grid, order)` cell on a shared holdout split. Cell
/// seeds are derived from `(seed, grid, order)`; failures are recorded.
pub fn sweep_grid_spline(
    base: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    grids: &[usize],
    orders: &[usize],
    clock: &dyn Clock,
) -> Result<Vec<SweepRow>> {
    if grids.is_empty() || orders.is_empty() {
        bail!(Parameter, "sweep needs at least one grid size and one spline order");
    }
    cfg.validate()?;
    let (train_idx, test_idx) = holdout_split(data.node_count(), cfg)?;
    let mut rows = Vec::with_capacity(grids.len() * orders.len());
    for &g in grids {
        for &k in orders {
            let spec = ModelSpec {
                kind: crate::gcn::ModelKind::KanGcn,
                grid_size: g,
                order: k,
                ..base.clone()
            };
            let seed = rng::derive_seed(cfg.seed, &[g as u64, k as u64]);
            let t0 = clock.now();
            let outcome = fit_and_score(&spec, data, &train_idx, &test_idx, cfg, seed, clock)
                .map(|(_, _, s)| s)
                .map_err(|e| e.to_string());
            rows.push(SweepRow {
                grid: g,
                order: k,
                outcome,
                seconds: clock.now() - t0,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimRow {
    pub dim: usize,
    /// Indices of zero-filled padding columns.
    pub padded: Vec<usize>,
    pub scores: Scores,
}

/// Truncates the first `dim` columns or pads with zero columns.
pub fn resize_features(x: &Tensor, dim: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut out = Tensor::zeros(x.rows(), dim);
    for r in 0..x.rows() {
        for c in 0..dim.min(x.cols()) {
            out.set(r, c, x.get(r, c));
        }
    }
    Ok((out, (x.cols()..dim).collect()))
}

/// Holdout scores at each feature dimension.
pub fn feature_dim_harness(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    dims: &[usize],
    clock: &dyn Clock,
) -> Result<Vec<DimRow>> {
    if dims.contains(&0) {
        bail!(Parameter, "feature dimensions must be positive");
    }
    let (train_idx, test_idx) = holdout_split(data.node_count(), cfg)?;
    let mut rows = Vec::with_capacity(dims.len());
    for &dim in dims {
        let (x, padded) = resize_features(&data.features, dim)?;
        let d = Dataset::new(data.adjacency.clone(), x, data.targets.clone())?;
        let seed = rng::derive_seed(cfg.seed, &[dim as u64]);
        let (_, _, scores) = fit_and_score(spec, &d, &train_idx, &test_idx, cfg, seed, clock)?;
        rows.push(DimRow { dim, padded, scores });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reroute {
    pub source: usize,
    pub target: usize,
    pub before_cost: f64,
    pub after_cost: f64,
    pub before_path: Vec<usize>,
    pub after_path: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisruptionReport {
    pub removed: (usize, usize),
    pub disconnected: bool,
    pub before: Scores,
    pub after: Scores,
    /// Ordered pairs `source < target` whose shortest path changed.
    pub reroutes: Vec<Reroute>,
}

impl DisruptionReport {
    pub fn mae_delta(&self) -> f64 {
        self.after.mae - self.before.mae
    }

    pub fn rmse_delta(&self) -> f64 {
        self.after.rmse - self.before.rmse
    }
}

/// Per-edge weights for aggregation and for routing.
#[derive(Debug, Clone, Copy)]
pub struct EdgeWeights<'a> {
    pub aggregation: &'a [f64],
    pub routing: &'a [f64],
}

impl<'a> EdgeWeights<'a> {
    /// Same weights for both uses.
    pub fn shared(w: &'a [f64]) -> Self {
        Self {
            aggregation: w,
            routing: w,
        }
    }
}

/// Removes edge `a-b`, retrains on the damaged graph, and compares scores
/// and shortest paths.
#[allow(clippy::too_many_arguments)]
pub fn disruption_eval(
    graph: &TrafficGraph,
    weights: EdgeWeights<'_>,
    removed: (usize, usize),
    features: &Tensor,
    targets: &[f64],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    add_self_loops: bool,
    clock: &dyn Clock,
) -> Result<DisruptionReport> {
    let (after_graph, pos) = graph.without_edge(removed.0, removed.1)?;
    let drop = |w: &[f64]| {
        let mut v = w.to_vec();
        v.remove(pos);
        v
    };
    let (agg_after, route_after) = (drop(weights.aggregation), drop(weights.routing));

    let (train_idx, test_idx) = holdout_split(graph.node_count(), cfg)?;
    let score = |g: &TrafficGraph, w: &[f64]| -> Result<Scores> {
        let adj = build_matrices(g, w, add_self_loops)?.normalized;
        let data = Dataset::new(adj, features.clone(), targets.to_vec())?;
        fit_and_score(spec, &data, &train_idx, &test_idx, cfg, cfg.seed, clock).map(|r| r.2)
    };
    let before = score(graph, weights.aggregation)?;
    let after = score(&after_graph, &agg_after)?;

    let d0 = floyd_warshall(&RoutingGraph::new(graph, weights.routing)?);
    let d1 = floyd_warshall(&RoutingGraph::new(&after_graph, &route_after)?);
    let n = graph.node_count();
    let mut reroutes = Vec::new();
    for s in 0..n {
        for t in s + 1..n {
            let (p0, p1) = (d0.path(s, t), d1.path(s, t));
            if p0.nodes != p1.nodes {
                reroutes.push(Reroute {
                    source: s,
                    target: t,
                    before_cost: p0.cost,
                    after_cost: p1.cost,
                    before_path: p0.nodes,
                    after_path: p1.nodes,
                });
            }
        }
    }
    Ok(DisruptionReport {
        removed,
        disconnected: graph.is_connected() && !after_graph.is_connected(),
        before,
        after,
        reroutes,
    })
}

/// Mean-of-training-targets predictor scored on `test_idx`.
pub fn mean_baseline(targets: &[f64], train_idx: &[usize], test_idx: &[usize]) -> Result<Scores> {
    if train_idx.is_empty() {
        bail!(Parameter, "mean baseline needs training nodes");
    }
    let m = train_idx.iter().map(|&i| targets[i]).sum::<f64>() / train_idx.len() as f64;
    let y: Vec<f64> = test_idx.iter().map(|&i| targets[i]).collect();
    let p = vec![m; y.len()];
    Ok(Scores {
        mae: mae(&y, &p)?,
        rmse: rmse(&y, &p)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::ModelKind;
    use crate::graph::{build_matrices, reference_network};
    use crate::synth::{gen_task, TargetRule, TaskParams};

    fn small_data(seed: u64) -> Dataset {
        let t = gen_task(&TaskParams::new(20, 3, 0.2, TargetRule::SmoothNonlinear, seed)).unwrap();
        let w = t.graph.weights(&Default::default()).unwrap();
        let adj = build_matrices(&t.graph, &w, false).unwrap().normalized;
        let x = t.features.map(|v| 2.0 * v - 1.0);
        Dataset::new(adj, x, t.targets).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            folds: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_two_steps_by_hand() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (g, p0) = (0.5f64, 1.0f64);
        // step 1
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let p1 = p0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        // step 2
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        let mut p = Tensor::scalar(p0);
        let mut st = AdamState::new(&[&p]);
        let grads = [Tensor::scalar(g)];
        adam_step(&mut [&mut p], &grads, &mut st, lr).unwrap();
        assert!((p.get(0, 0) - p1).abs() < 1e-12);
        adam_step(&mut [&mut p], &grads, &mut st, lr).unwrap();
        assert!((p.get(0, 0) - p2).abs() < 1e-12);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn adam_zero_gradient_only_advances_step() {
        let mut p = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros(1, 2)], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let lr = 0.001;
        for g in [1e-3, -1e-2, 0.5, -3.0, 1e4] {
            let mut p = Tensor::scalar(0.0);
            let mut st = AdamState::new(&[&p]);
            adam_step(&mut [&mut p], &[Tensor::scalar(g)], &mut st, lr).unwrap();
            let delta = p.get(0, 0);
            assert!((delta + lr * g / (g.abs() + ADAM_EPS)).abs() < 1e-12 * lr);
            // distance from -lr*sign(g) is lr*eps/(|g|+eps)
            let tol = if g.abs() >= 1e-2 { 1e-6 * lr } else { 1e-5 * lr };
            assert!((delta + lr * g.signum()).abs() < tol);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Tensor::zeros(2, 2);
        let mut st = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &[Tensor::zeros(2, 1)], &mut st, 0.1).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn kfold_examples() {
        let f = kfold_split(10, 5, 1).unwrap();
        assert!(f.iter().all(|x| x.len() == 2));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(f, kfold_split(10, 5, 1).unwrap());
        let sizes: Vec<usize> = kfold_split(7, 5, 3).unwrap().iter().map(|x| x.len()).collect();
        assert_eq!(sizes, [2, 2, 1, 1, 1]);
        assert!(kfold_split(3, 4, 0).is_err());
    }

    #[test]
    fn metric_hand_cases() {
        assert_eq!(mae(&[3.0, 5.0], &[4.0, 7.0]).unwrap(), 1.5);
        assert!((rmse(&[3.0, 5.0], &[4.0, 7.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(mae(&[0.0], &[-2.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn noise_cases() {
        let x = Tensor::from_rows(&[[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]]).unwrap();
        assert_eq!(add_gaussian_noise(&x, 0.0, 9).unwrap(), x);
        let y = add_gaussian_noise(&x, 0.2, 9).unwrap();
        assert_eq!(y.column_values(1), x.column_values(1));
        assert_ne!(y.column_values(0), x.column_values(0));
        assert_eq!(y, add_gaussian_noise(&x, 0.2, 9).unwrap());
        assert!(add_gaussian_noise(&x, -0.1, 0).is_err());
    }

    #[test]
    fn noise_spread_matches_request() {
        let n = 10_000;
        let mut r = rng::seeded(5);
        let col: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = Tensor::new(n, 1, col.clone()).unwrap();
        let std = SeriesStats::of(&col).unwrap().std;
        let y = add_gaussian_noise(&x, 0.1, 6).unwrap();
        let diff: Vec<f64> = y.as_slice().iter().zip(&col).map(|(a, b)| a - b).collect();
        let s = SeriesStats::of(&diff).unwrap().std;
        assert!((s - 0.1 * std).abs() < 0.05 * 0.1 * std);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let data = small_data(1);
        let mut model = ModelSpec::kan_gcn(vec![4], 2, 2).build(3, 0).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick_cfg()
        };
        let rep = train(&mut model, &data, &cfg, &NoClock).unwrap();
        assert_eq!(model, before);
        assert_eq!(rep.history.len(), 5);
        assert!(rep.history.windows(2).all(|w| (w[0].prediction - w[1].prediction).abs() < 1e-12));
        assert_eq!(rep.initial_mse, rep.final_mse);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = small_data(1);
        let mut model = ModelSpec::kan_gcn(vec![4], 2, 2).build(3, 0).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..quick_cfg()
        };
        let rep = train(&mut model, &data, &cfg, &NoClock).unwrap();
        assert_eq!(model, before);
        assert!(rep.history.is_empty());
        assert_eq!(rep.epochs_run, 0);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = small_data(2);
        let spec = ModelSpec::kan_gcn(vec![8], 2, 2);
        let cfg = TrainConfig {
            epochs: 60,
            ..quick_cfg()
        };
        let run = || {
            let mut m = spec.build(3, 4).unwrap();
            let r = train(&mut m, &data, &cfg, &NoClock).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(r1.final_mse < r1.initial_mse);
        assert_eq!(r1.history[3].learning_rate, 0.01);
    }

    #[test]
    fn decay_and_patience() {
        let data = small_data(3);
        let mut m = ModelSpec::kan_gcn(vec![4], 1, 2).build(3, 0).unwrap();
        let cfg = TrainConfig {
            decay: 0.5,
            learning_rate: 0.0,
            patience: Some(2),
            epochs: 50,
            ..quick_cfg()
        };
        let r = train(&mut m, &data, &cfg, &NoClock).unwrap();
        assert_eq!(r.history[1].learning_rate, 0.0);
        // flat loss never improves after the first epoch
        assert_eq!(r.epochs_run, 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { folds: 1, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { decay: 0.0, ..Default::default() },
            TrainConfig { patience: Some(0), ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn cross_validation_covers_every_node_once() {
        let data = small_data(4);
        let rep = cross_validate(&ModelSpec::kan_gcn(vec![4], 1, 2), &data, &quick_cfg(), &NoClock).unwrap();
        assert_eq!(rep.folds.len(), 4);
        let mut all: Vec<usize> = rep.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..data.node_count()).collect::<Vec<_>>());
        assert!(rep.folds.iter().all(|f| f.metrics.rmse >= f.metrics.mae));
    }

    #[test]
    fn sweep_shapes_and_single_cell() {
        let data = small_data(5);
        let spec = ModelSpec::kan_gcn(vec![4], 1, 2);
        let cfg = quick_cfg();
        let rows = sweep_grid_spline(&spec, &data, &cfg, &[1, 2], &[1, 2, 3], &NoClock).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[4].grid, rows[4].order), (2, 2));

        let one = sweep_grid_spline(&spec, &data, &cfg, &[2], &[3], &NoClock).unwrap();
        let (tr, te) = holdout_split(data.node_count(), &cfg).unwrap();
        let seed = rng::derive_seed(cfg.seed, &[2, 3]);
        let direct = fit_and_score(&ModelSpec::kan_gcn(vec![4], 2, 3), &data, &tr, &te, &cfg, seed, &NoClock).unwrap();
        assert_eq!(one[0].outcome, Ok(direct.2));
        assert!(sweep_grid_spline(&spec, &data, &cfg, &[], &[1], &NoClock).is_err());
    }

    #[test]
    fn sweep_records_cell_failures() {
        let data = small_data(5);
        let rows = sweep_grid_spline(&ModelSpec::kan_gcn(vec![4], 1, 2), &data, &quick_cfg(), &[0, 1], &[2], &NoClock).unwrap();
        assert!(rows[0].outcome.is_err());
        assert!(rows[1].outcome.is_ok());
        assert!(rows[0].accuracy().is_none());
    }

    #[test]
    fn feature_dim_padding() {
        let data = small_data(6);
        let rows = feature_dim_harness(&ModelSpec::kan_gcn(vec![4], 1, 2), &data, &quick_cfg(), &[2, 5], &NoClock).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].padded.is_empty());
        assert_eq!(rows[1].padded, [3, 4]);
        let (x, pad) = resize_features(&data.features, 5).unwrap();
        for c in pad {
            assert!(x.column_values(c).iter().all(|&v| v == 0.0));
        }
        let again = feature_dim_harness(&ModelSpec::kan_gcn(vec![4], 1, 2), &data, &quick_cfg(), &[2, 5], &NoClock).unwrap();
        assert_eq!(rows, again);
    }

    fn node_data(n: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut r = rng::seeded(seed);
        use rand::Rng;
        let x = Tensor::new(n, 2, (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|_| r.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn disruption_on_reference() {
        let (g, w) = reference_network();
        let (x, y) = node_data(5, 1);
        let (a, b) = (g.node_index("V1").unwrap(), g.node_index("V5").unwrap());
        let cfg = TrainConfig { folds: 2, ..quick_cfg() };
        let rep = disruption_eval(&g, EdgeWeights::shared(&w), (a, b), &x, &y, &ModelSpec::kan_gcn(vec![4], 1, 2), &cfg, false, &NoClock).unwrap();
        assert!(!rep.disconnected);
        let r = rep.reroutes.iter().find(|r| (r.source, r.target) == (a.min(b), a.max(b))).unwrap();
        assert!((r.before_cost - 7.1).abs() < 1e-9);
        assert!((r.after_cost - 11.6).abs() < 1e-9);
        let v2 = g.node_index("V2").unwrap();
        assert!(r.after_path.contains(&v2));
        assert!(rep.rmse_delta().is_finite());
    }

    #[test]
    fn disruption_missing_edge_and_complete_graph() {
        use crate::graph::{Edge, EdgeAttributes};
        let attrs = EdgeAttributes {
            length_km: 1.0,
            speed_limit: 50.0,
            congestion: 0.0,
            travel_min: 1.2,
        };
        let mut edges = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                edges.push(Edge { source: i, target: j, attrs });
            }
        }
        let g = TrafficGraph::new((0..5).map(|i| alloc::format!("K{}", i)).collect(), edges).unwrap();
        let w = vec![1.0; g.edge_count()];
        let (x, y) = node_data(5, 2);
        let spec = ModelSpec::kan_gcn(vec![3], 1, 2);
        let cfg = TrainConfig { folds: 2, ..quick_cfg() };
        for (a, b) in [(0, 1), (2, 4), (3, 1)] {
            let rep = disruption_eval(&g, EdgeWeights::shared(&w), (a, b), &x, &y, &spec, &cfg, false, &NoClock).unwrap();
            assert!(!rep.disconnected);
        }
        let (tg, tw) = reference_network();
        let (v1, v5) = (tg.node_index("V1").unwrap(), tg.node_index("V5").unwrap());
        let (cut, pos) = tg.without_edge(v1, v5).unwrap();
        let mut cw = tw.clone();
        cw.remove(pos);
        let err = disruption_eval(&cut, EdgeWeights::shared(&cw), (v1, v5), &x, &y, &spec, &cfg, false, &NoClock);
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn disconnection_is_reported() {
        use crate::graph::{Edge, EdgeAttributes};
        let attrs = EdgeAttributes {
            length_km: 1.0,
            speed_limit: 50.0,
            congestion: 0.0,
            travel_min: 1.2,
        };
        let edges = (0..3).map(|i| Edge { source: i, target: i + 1, attrs }).collect();
        let g = TrafficGraph::new((0..4).map(|i| alloc::format!("P{}", i)).collect(), edges).unwrap();
        let (x, y) = node_data(4, 3);
        let cfg = TrainConfig { folds: 2, ..quick_cfg() };
        let rep = disruption_eval(&g, EdgeWeights::shared(&[1.0; 3]), (1, 2), &x, &y, &ModelSpec::kan_gcn(vec![3], 1, 2), &cfg, false, &NoClock).unwrap();
        assert!(rep.disconnected);
        assert!(rep.reroutes.iter().any(|r| r.after_cost.is_infinite()));
    }

    #[test]
    fn mean_baseline_scores() {
        let s = mean_baseline(&[1.0, 3.0, 10.0], &[0, 1], &[2]).unwrap();
        assert_eq!(s.mae, 8.0);
        assert_eq!(s.rmse, 8.0);
    }

    #[test]
    fn all_model_kinds_train() {
        let data = small_data(7);
        for kind in [ModelKind::KanGcn, ModelKind::Gcn, ModelKind::MlpGcn] {
            let spec = ModelSpec { kind, hidden: vec![4, 4], ..ModelSpec::default() };
            let mut m = spec.build(3, 1).unwrap();
            let r = train(&mut m, &data, &quick_cfg(), &NoClock).unwrap();
            assert_eq!(r.epochs_run, 5);
        }
    }
}
