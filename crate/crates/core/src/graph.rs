//! Traffic network: edge attributes, composite edge weights, and the
//! symmetric degree normalization `D^-1/2 A D^-1/2`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

/// Road attributes of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttributes {
    pub length_km: f64,
    pub speed_limit: f64,
    /// Unitless, in `[0, 1]`.
    pub congestion: f64,
    pub travel_min: f64,
}

impl EdgeAttributes {
    pub fn validate(&self) -> core::result::Result<(), String> {
        let all = [self.length_km, self.speed_limit, self.congestion, self.travel_min];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("non-finite attribute".to_string());
        }
        if self.length_km <= 0.0 {
            return Err(format!("length_km must be positive, got {}", self.length_km));
        }
        if self.speed_limit <= 0.0 {
            return Err(format!("speed_kmh must be positive, got {}", self.speed_limit));
        }
        if !(0.0..=1.0).contains(&self.congestion) {
            return Err(format!("congestion must lie in [0, 1], got {}", self.congestion));
        }
        if self.travel_min < 0.0 {
            return Err(format!("travel_min must be non-negative, got {}", self.travel_min));
        }
        Ok(())
    }
}

/// Coefficients of the composite weight `alpha L + beta S + gamma C + delta T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for WeightCoefficients {
    /// Travel time only.
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 1.0,
        }
    }
}

impl WeightCoefficients {
    pub fn uniform(v: f64) -> Self {
        Self {
            alpha: v,
            beta: v,
            gamma: v,
            delta: v,
        }
    }
}

pub fn edge_weight(attrs: &EdgeAttributes, coeffs: &WeightCoefficients) -> Result<f64> {
    let w = coeffs.alpha * attrs.length_km
        + coeffs.beta * attrs.speed_limit
        + coeffs.gamma * attrs.congestion
        + coeffs.delta * attrs.travel_min;
    if !w.is_finite() {
        bail!(NonFinite, "edge weight evaluates to {}", w);
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub attrs: EdgeAttributes,
}

/// Undirected road network with labelled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    node_ids: Vec<String>,
    edges: Vec<Edge>,
}

impl TrafficGraph {
    /// Validates node labels and edges: no self-loops, no duplicate
    /// undirected edge, indices in range, attributes in range.
    pub fn new(node_ids: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let mut labels = BTreeSet::new();
        for id in &node_ids {
            if !labels.insert(id.as_str()) {
                bail!(Parameter, "duplicate node id {:?}", id);
            }
        }
        let mut seen = BTreeSet::new();
        for (index, e) in edges.iter().enumerate() {
            let fail = |reason: String| Err(Error::Graph { index, reason });
            if e.source >= node_ids.len() || e.target >= node_ids.len() {
                return fail(format!("node index out of range ({} nodes)", node_ids.len()));
            }
            if e.source == e.target {
                return fail(format!("self-loop on {}", node_ids[e.source]));
            }
            let key = (e.source.min(e.target), e.source.max(e.target));
            if !seen.insert(key) {
                return fail(format!(
                    "duplicate edge {}-{}",
                    node_ids[e.source], node_ids[e.target]
                ));
            }
            if let Err(reason) = e.attrs.validate() {
                return fail(reason);
            }
        }
        Ok(Self { node_ids, edges })
    }

    /// Builds a graph from labelled edges; nodes are numbered in order of
    /// first appearance.
    pub fn from_labelled<S: AsRef<str>>(edges: &[(S, S, EdgeAttributes)]) -> Result<Self> {
        let mut node_ids: Vec<String> = Vec::new();
        let index_of = |label: &str, ids: &mut Vec<String>| match ids.iter().position(|n| n == label) {
            Some(i) => i,
            None => {
                ids.push(label.to_string());
                ids.len() - 1
            }
        };
        let mut out = Vec::with_capacity(edges.len());
        for (a, b, attrs) in edges {
            let source = index_of(a.as_ref(), &mut node_ids);
            let target = index_of(b.as_ref(), &mut node_ids);
            out.push(Edge {
                source,
                target,
                attrs: *attrs,
            });
        }
        Self::new(node_ids, out)
    }

    pub fn empty() -> Self {
        Self {
            node_ids: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == label)
    }

    /// Position of the undirected edge `{a, b}` in the edge list.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| (e.source == a && e.target == b) || (e.source == b && e.target == a))
    }

    /// Copy of the graph without the edge `{a, b}`; also returns the removed position.
    pub fn without_edge(&self, a: usize, b: usize) -> Result<(Self, usize)> {
        let Some(pos) = self.edge_index(a, b) else {
            bail!(
                Parameter,
                "edge {}-{} is not in the graph",
                self.node_ids.get(a).map_or("?", |s| s.as_str()),
                self.node_ids.get(b).map_or("?", |s| s.as_str())
            );
        };
        let mut edges = self.edges.clone();
        edges.remove(pos);
        Ok((
            Self {
                node_ids: self.node_ids.clone(),
                edges,
            },
            pos,
        ))
    }

    /// Per-edge weights from the composite formula.
    pub fn weights(&self, coeffs: &WeightCoefficients) -> Result<Vec<f64>> {
        self.edges.iter().map(|e| edge_weight(&e.attrs, coeffs)).collect()
    }

    /// Connected component label per node (labels in order of lowest member).
    pub fn components(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.source), find(&mut parent, e.target));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut out = vec![0; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out[i] = label[r];
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// Induced subgraph on `keep` (in the given order).
    pub fn subgraph(&self, keep: &[usize]) -> Result<Self> {
        let mut map = vec![usize::MAX; self.node_count()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let node_ids = keep.iter().map(|&i| self.node_ids[i].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| map[e.source] != usize::MAX && map[e.target] != usize::MAX)
            .map(|e| Edge {
                source: map[e.source],
                target: map[e.target],
                attrs: e.attrs,
            })
            .collect();
        Self::new(node_ids, edges)
    }
}

/// Adjacency, degrees and normalized adjacency of a weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMatrices {
    pub adjacency: Tensor,
    pub degree: Vec<f64>,
    pub normalized: Tensor,
}

/// Builds `A`, `D` and `D^-1/2 A D^-1/2`.
///
/// Nodes of degree zero get a zero row and column in the normalized matrix.
/// With `add_self_loops` the identity is added to `A` first.
pub fn build_matrices(graph: &TrafficGraph, weights: &[f64], add_self_loops: bool) -> Result<GraphMatrices> {
    if weights.len() != graph.edge_count() {
        bail!(
            Parameter,
            "{} weights supplied for {} edges",
            weights.len(),
            graph.edge_count()
        );
    }
    let n = graph.node_count();
    let mut adjacency = Tensor::zeros(n, n);
    for (i, (e, &w)) in graph.edges().iter().zip(weights).enumerate() {
        if !w.is_finite() {
            bail!(NonFinite, "weight of edge {} is {}", i, w);
        }
        if w < 0.0 {
            bail!(Domain, "negative weight {} on edge {}", w, i);
        }
        adjacency.set(e.source, e.target, w);
        adjacency.set(e.target, e.source, w);
    }
    if add_self_loops {
        for i in 0..n {
            adjacency.set(i, i, 1.0);
        }
    }
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    let mut normalized = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let a = adjacency.get(i, j);
            if a == 0.0 || degree[i] == 0.0 || degree[j] == 0.0 {
                continue;
            }
            let v = a / libm::sqrt(degree[i] * degree[j]);
            normalized.set(i, j, v);
            normalized.set(j, i, v);
        }
    }
    Ok(GraphMatrices {
        adjacency,
        degree,
        normalized,
    })
}

/// The five-node, ten-edge road network with its printed weights.
pub fn reference_network() -> (TrafficGraph, Vec<f64>) {
    const ROWS: [(&str, &str, f64, f64, f64, f64, f64); 10] = [
        ("V1", "V2", 6.0, 60.0, 0.2, 6.0, 6.3),
        ("V1", "V3", 4.0, 50.0, 0.3, 5.0, 5.1),
        ("V1", "V4", 8.0, 40.0, 0.4, 10.0, 10.2),
        ("V1", "V5", 10.0, 70.0, 0.1, 7.0, 7.1),
        ("V2", "V3", 3.0, 60.0, 0.3, 4.0, 4.2),
        ("V2", "V4", 6.0, 50.0, 0.2, 6.0, 6.4),
        ("V2", "V5", 5.0, 40.0, 0.4, 5.0, 5.3),
        ("V3", "V4", 7.0, 60.0, 0.1, 6.0, 6.3),
        ("V3", "V5", 9.0, 50.0, 0.3, 9.0, 9.5),
        ("V4", "V5", 11.0, 70.0, 0.2, 9.0, 9.4),
    ];
    let labelled: Vec<(&str, &str, EdgeAttributes)> = ROWS
        .iter()
        .map(|&(a, b, l, s, c, t, _)| {
            (
                a,
                b,
                EdgeAttributes {
                    length_km: l,
                    speed_limit: s,
                    congestion: c,
                    travel_min: t,
                },
            )
        })
        .collect();
    let graph = TrafficGraph::from_labelled(&labelled).expect("fixture is valid");
    (graph, ROWS.iter().map(|r| r.6).collect())
}
