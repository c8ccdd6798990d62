//! Serialized graph bundle: edge and node tables plus derived matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use kanflow_core::graph::{build_matrices, GraphMatrices, TrafficGraph, WeightCoefficients};

use crate::error::{CliError, Result};
use crate::num::{MatrixDoc, Num};
use crate::tables::{EdgeRow, EdgeTable, NodeTable};

pub const BUNDLE_FORMAT: &str = "kanflow-graph";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub start: String,
    pub end: String,
    pub length_km: Num,
    pub speed_kmh: Num,
    pub congestion: Num,
    pub travel_min: Num,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Num>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub values: Vec<Vec<Option<Num>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffDoc {
    pub alpha: Num,
    pub beta: Num,
    pub gamma: Num,
    pub delta: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphBundle {
    pub format: String,
    pub version: u32,
    pub node_ids: Vec<String>,
    pub edges: Vec<EdgeDoc>,
    pub nodes: Option<NodeDoc>,
    pub coefficients: CoeffDoc,
    pub add_self_loops: bool,
    pub adjacency: MatrixDoc,
    pub degree: Vec<Num>,
    pub normalized: MatrixDoc,
}

impl From<WeightCoefficients> for CoeffDoc {
    fn from(c: WeightCoefficients) -> Self {
        Self {
            alpha: Num(c.alpha),
            beta: Num(c.beta),
            gamma: Num(c.gamma),
            delta: Num(c.delta),
        }
    }
}

impl From<CoeffDoc> for WeightCoefficients {
    fn from(c: CoeffDoc) -> Self {
        Self {
            alpha: c.alpha.0,
            beta: c.beta.0,
            gamma: c.gamma.0,
            delta: c.delta.0,
        }
    }
}

impl GraphBundle {
    /// Builds the bundle; node ids follow edge order, then node-table rows
    /// not touched by any edge.
    pub fn build(edges: &EdgeTable, nodes: Option<&NodeTable>, coeffs: WeightCoefficients, add_self_loops: bool) -> Result<Self> {
        let extra: Vec<String> = nodes.map(|n| n.ids.clone()).unwrap_or_default();
        let graph = edges.to_graph(&extra)?;
        let weights = graph.weights(&coeffs)?;
        let m = build_matrices(&graph, &weights, add_self_loops)?;
        Ok(Self {
            format: BUNDLE_FORMAT.to_string(),
            version: BUNDLE_VERSION,
            node_ids: graph.node_ids().to_vec(),
            edges: edges
                .rows
                .iter()
                .map(|r| EdgeDoc {
                    start: r.start.clone(),
                    end: r.end.clone(),
                    length_km: Num(r.attrs.length_km),
                    speed_kmh: Num(r.attrs.speed_limit),
                    congestion: Num(r.attrs.congestion),
                    travel_min: Num(r.attrs.travel_min),
                    weight: r.weight.map(Num),
                })
                .collect(),
            nodes: nodes.map(|n| NodeDoc {
                columns: n.columns.clone(),
                ids: n.ids.clone(),
                values: n.values.iter().map(|r| r.iter().map(|v| v.map(Num)).collect()).collect(),
            }),
            coefficients: coeffs.into(),
            add_self_loops,
            adjacency: (&m.adjacency).into(),
            degree: m.degree.iter().map(|&d| Num(d)).collect(),
            normalized: (&m.normalized).into(),
        })
    }

    pub fn edge_table(&self) -> Result<EdgeTable> {
        let mut rows = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            let row = EdgeRow {
                start: e.start.clone(),
                end: e.end.clone(),
                attrs: kanflow_core::graph::EdgeAttributes {
                    length_km: e.length_km.0,
                    speed_limit: e.speed_kmh.0,
                    congestion: e.congestion.0,
                    travel_min: e.travel_min.0,
                },
                weight: e.weight.map(|w| w.0),
            };
            row.attrs
                .validate()
                .map_err(|m| CliError::input(format!("bundle edge {}: {m}", i + 1)))?;
            rows.push(row);
        }
        let has_weight = !rows.is_empty() && rows.iter().all(|r| r.weight.is_some());
        if !has_weight && rows.iter().any(|r| r.weight.is_some()) {
            return Err(CliError::input("bundle: weight given for some edges but not all"));
        }
        Ok(EdgeTable { rows, has_weight })
    }

    pub fn node_table(&self) -> Option<NodeTable> {
        self.nodes.as_ref().map(|n| NodeTable {
            columns: n.columns.clone(),
            ids: n.ids.clone(),
            values: n.values.iter().map(|r| r.iter().map(|v| v.map(|x| x.0)).collect()).collect(),
        })
    }

    pub fn coefficients(&self) -> WeightCoefficients {
        self.coefficients.into()
    }

    /// Rebuilds the graph with the stored node order.
    pub fn graph(&self) -> Result<TrafficGraph> {
        let graph = self.edge_table()?.to_graph(&self.node_ids)?;
        if graph.node_ids() != self.node_ids.as_slice() {
            return Err(CliError::input("bundle: node order disagrees with edge list"));
        }
        Ok(graph)
    }

    /// Stored matrices, checked against a fresh rebuild.
    pub fn matrices(&self) -> Result<GraphMatrices> {
        let graph = self.graph()?;
        let fresh = build_matrices(&graph, &graph.weights(&self.coefficients())?, self.add_self_loops)?;
        let stored = GraphMatrices {
            adjacency: self.adjacency.to_tensor()?,
            degree: self.degree.iter().map(|d| d.0).collect(),
            normalized: self.normalized.to_tensor()?,
        };
        if stored != fresh {
            return Err(CliError::input("bundle: stored matrices do not match the edge list"));
        }
        Ok(stored)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text).map_err(|e| CliError::input(format!("{source}: {e}")))?;
        if b.format != BUNDLE_FORMAT || b.version != BUNDLE_VERSION {
            return Err(CliError::input(format!(
                "{source}: expected {BUNDLE_FORMAT} version {BUNDLE_VERSION}, found {} version {}",
                b.format, b.version
            )));
        }
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let b = Self::from_json(&text, &path.display().to_string())?;
        b.matrices().map_err(|e| e.context(path.display()))?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kanflow_core::graph::reference_network;

    fn reference() -> EdgeTable {
        let (g, w) = reference_network();
        EdgeTable {
            rows: g
                .edges()
                .iter()
                .zip(w)
                .map(|(e, w)| EdgeRow {
                    start: g.node_ids()[e.source].clone(),
                    end: g.node_ids()[e.target].clone(),
                    attrs: e.attrs,
                    weight: Some(w),
                })
                .collect(),
            has_weight: true,
        }
    }

    #[test]
    fn reference_bundle_shape() {
        let b = GraphBundle::build(&reference(), None, WeightCoefficients::default(), false).unwrap();
        assert_eq!(b.node_ids.len(), 5);
        assert_eq!(b.edges.len(), 10);
        assert_eq!(b.adjacency.rows, 5);
        let m = b.matrices().unwrap();
        assert_eq!(m.adjacency.get(0, 4), 7.0);
    }

    #[test]
    fn json_round_trip_is_idempotent() {
        let nodes = NodeTable {
            columns: vec!["x1".into()],
            ids: vec!["V1".into(), "V9".into()],
            values: vec![vec![Some(0.1)], vec![None]],
        };
        let b = GraphBundle::build(&reference(), Some(&nodes), WeightCoefficients::uniform(0.5), true).unwrap();
        assert_eq!(b.node_ids.last().unwrap(), "V9");
        let text = b.to_json();
        let back = GraphBundle::from_json(&text, "t").unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_json(), text);
        assert_eq!(back.node_table().unwrap(), nodes);
        assert_eq!(back.edge_table().unwrap(), reference());
        back.matrices().unwrap();
    }

    #[test]
    fn tampered_matrices_rejected() {
        let mut b = GraphBundle::build(&reference(), None, WeightCoefficients::default(), false).unwrap();
        b.adjacency.values[1] = Num(99.0);
        assert!(b.matrices().is_err());
        let mut b2 = GraphBundle::build(&reference(), None, WeightCoefficients::default(), false).unwrap();
        b2.format = "other".into();
        assert!(GraphBundle::from_json(&b2.to_json(), "t").is_err());
    }
}
