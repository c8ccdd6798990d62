//! Seeded synthetic node-regression tasks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Result};
use crate::graph::{build_matrices, Edge, EdgeAttributes, TrafficGraph, WeightCoefficients};
use crate::preprocess::{minmax_scale, ScalerParams};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// `X w`
    Linear,
    /// `sin(X w1) + 0.1 (X w2)^2`
    SmoothNonlinear,
    /// `A X w` with the normalized adjacency `A`
    NeighborAvg,
}

impl TargetRule {
    pub fn name(self) -> &'static str {
        match self {
            TargetRule::Linear => "linear",
            TargetRule::SmoothNonlinear => "smooth-nonlinear",
            TargetRule::NeighborAvg => "neighbor-avg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(TargetRule::Linear),
            "smooth-nonlinear" => Some(TargetRule::SmoothNonlinear),
            "neighbor-avg" => Some(TargetRule::NeighborAvg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// Nodes placed at their feature vectors; a Euclidean minimum spanning
    /// tree plus the closest remaining pairs.
    Geometric,
    /// Independent edges with probability `edge_prob`; largest component kept.
    ErdosRenyi,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Geometric => "geometric",
            GraphKind::ErdosRenyi => "erdos-renyi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "geometric" => Some(GraphKind::Geometric),
            "erdos-renyi" => Some(GraphKind::ErdosRenyi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    pub nodes: usize,
    pub features: usize,
    /// Fraction of node pairs connected.
    pub edge_prob: f64,
    pub rule: TargetRule,
    pub graph: GraphKind,
    /// Target noise standard deviation relative to the target spread.
    pub noise: f64,
    pub coeffs: WeightCoefficients,
    pub seed: u64,
}

impl TaskParams {
    pub fn new(nodes: usize, features: usize, edge_prob: f64, rule: TargetRule, seed: u64) -> Self {
        Self {
            nodes,
            features,
            edge_prob,
            rule,
            graph: GraphKind::Geometric,
            noise: 0.0,
            coeffs: WeightCoefficients::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub graph: TrafficGraph,
    /// `N x d`, entries in `[0, 1)`.
    pub features: Tensor,
    /// Min-max scaled targets.
    pub targets: Vec<f64>,
    pub target_scaler: ScalerParams,
    pub rule: TargetRule,
    pub noise: f64,
}

fn normal_vec(r: &mut rng::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            z * scale
        })
        .collect()
}

fn dot_rows(x: &Tensor, w: &[f64]) -> Vec<f64> {
    (0..x.rows()).map(|i| x.row(i).iter().zip(w).map(|(a, b)| a * b).sum()).collect()
}

/// Raw (unscaled) targets for `rule`.
pub fn targets_for(rule: TargetRule, x: &Tensor, adj: &Tensor, w1: &[f64], w2: &[f64]) -> Result<Vec<f64>> {
    match rule {
        TargetRule::Linear => Ok(dot_rows(x, w1)),
        TargetRule::SmoothNonlinear => {
            let a = dot_rows(x, w1);
            let b = dot_rows(x, w2);
            Ok(a.iter().zip(&b).map(|(p, q)| libm::sin(*p) + 0.1 * q * q).collect())
        }
        TargetRule::NeighborAvg => Ok(adj.matmul(&x.matmul(&Tensor::column(w1)?)?)?.into_vec()),
    }
}

fn euclidean(x: &Tensor, i: usize, j: usize) -> f64 {
    libm::sqrt(x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn random_attrs(r: &mut rng::Rng, distance: f64) -> EdgeAttributes {
    const SPEEDS: [f64; 4] = [40.0, 50.0, 60.0, 70.0];
    let length_km = 0.5 + 5.0 * distance;
    let speed_limit = SPEEDS[r.random_range(0..SPEEDS.len())];
    let congestion = r.random_range(0.0..=1.0);
    EdgeAttributes {
        length_km,
        speed_limit,
        congestion,
        travel_min: length_km / speed_limit * 60.0 * (1.0 + congestion),
    }
}

fn geometric_pairs(x: &Tensor, budget: usize) -> Vec<(usize, usize, f64)> {
    let n = x.rows();
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j, euclidean(x, i, j)));
        }
    }
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    // Kruskal spanning tree first, then the closest unused pairs.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut v: usize) -> usize {
        while p[v] != v {
            p[v] = p[p[v]];
            v = p[v];
        }
        v
    }
    let mut used = vec![false; pairs.len()];
    let mut chosen = Vec::new();
    for (k, &(i, j, d)) in pairs.iter().enumerate() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            used[k] = true;
            chosen.push((i, j, d));
        }
    }
    for (k, &p) in pairs.iter().enumerate() {
        if chosen.len() >= budget {
            break;
        }
        if !used[k] {
            chosen.push(p);
        }
    }
    chosen.sort_by_key(|&(i, j, _)| (i, j));
    chosen
}

/// Generates a connected graph, uniform features, and scaled targets.
pub fn gen_task(params: &TaskParams) -> Result<SyntheticTask> {
    if params.nodes < 2 {
        bail!(Parameter, "need at least two nodes");
    }
    if !(params.edge_prob > 0.0 && params.edge_prob <= 1.0) {
        bail!(Parameter, "edge_prob must lie in (0, 1], got {}", params.edge_prob);
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        bail!(Parameter, "noise must be non-negative");
    }
    let (n, d) = (params.nodes, params.features);
    let mut r = rng::seeded(params.seed);
    let x_all = Tensor::new(n, d, (0..n * d).map(|_| r.random::<f64>()).collect())?;

    let mut pairs: Vec<(usize, usize, f64)> = match params.graph {
        GraphKind::Geometric => {
            let budget = libm::round(params.edge_prob * (n * (n - 1) / 2) as f64) as usize;
            geometric_pairs(&x_all, budget)
        }
        GraphKind::ErdosRenyi => {
            let mut out = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if r.random_bool(params.edge_prob) {
                        out.push((i, j, euclidean(&x_all, i, j)));
                    }
                }
            }
            out
        }
    };
    let scale = pairs.iter().map(|p| p.2).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for p in &mut pairs {
        p.2 /= scale;
    }
    let edges: Vec<Edge> = pairs
        .iter()
        .map(|&(i, j, dist)| Edge {
            source: i,
            target: j,
            attrs: random_attrs(&mut r, dist),
        })
        .collect();
    let full = TrafficGraph::new((0..n).map(|i| format!("N{}", i + 1)).collect(), edges)?;

    let comp = full.components();
    let mut sizes = vec![0usize; n];
    for &c in &comp {
        sizes[c] += 1;
    }
    let largest = (0..n).max_by_key(|&c| (sizes[c], core::cmp::Reverse(c))).unwrap_or(0);
    let keep: Vec<usize> = (0..n).filter(|&i| comp[i] == largest).collect();
    if keep.len() < 2 {
        bail!(Domain, "largest connected component has fewer than two nodes");
    }
    let graph = full.subgraph(&keep)?;
    let features = x_all.select_rows(&keep);

    let w_scale = if d == 0 { 0.0 } else { 2.0 / libm::sqrt(d as f64) };
    let w1 = normal_vec(&mut r, d, w_scale);
    let w2 = normal_vec(&mut r, d, w_scale);
    let weights = graph.weights(&params.coeffs)?;
    let adj = build_matrices(&graph, &weights, false)?.normalized;
    let mut raw = targets_for(params.rule, &features, &adj, &w1, &w2)?;
    if params.noise > 0.0 {
        let spread = crate::preprocess::SeriesStats::of(&raw)?.std;
        for v in &mut raw {
            let z: f64 = StandardNormal.sample(&mut r);
            *v += z * params.noise * spread;
        }
    }
    let scaled = minmax_scale(&raw)?;
    Ok(SyntheticTask {
        graph,
        features,
        targets: scaled.values,
        target_scaler: scaled.params,
        rule: params.rule,
        noise: params.noise,
    })
}
