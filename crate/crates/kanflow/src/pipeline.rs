//! Turns edge and node tables into a training-ready dataset.

use std::collections::HashMap;

use kanflow_core::graph::{build_matrices, GraphMatrices, TrafficGraph, WeightCoefficients};
use kanflow_core::preprocess::{
    apply_missing_policy, minmax_scale, rolling_mean_replace, to_spline_domain, zscore_flags, FeatureTable,
    MissingReport, ScalerParams,
};
use kanflow_core::training::Dataset;
use kanflow_core::Tensor;

use crate::bundle::GraphBundle;
use crate::checkpoint::Checkpoint;
use crate::config::{PreprocessSection, RunConfig};
use crate::error::{CliError, Result};
use crate::tables::{pair_key, EdgeTable, NodeTable};

/// Raw inputs before preprocessing.
#[derive(Debug, Clone)]
pub struct Sources {
    pub edges: EdgeTable,
    pub nodes: NodeTable,
    pub coeffs: WeightCoefficients,
    pub add_self_loops: bool,
}

impl Sources {
    /// Reads the bundle or the edge/node tables named by the config. A
    /// bundle's own coefficients and self-loop flag take precedence.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        if let Some(path) = &cfg.data.bundle {
            let b = GraphBundle::load(path)?;
            let nodes = b
                .node_table()
                .ok_or_else(|| CliError::input(format!("{}: bundle has no node table", path.display())))?;
            return Ok(Self {
                edges: b.edge_table()?,
                nodes,
                coeffs: b.coefficients(),
                add_self_loops: b.add_self_loops,
            });
        }
        let (Some(e), Some(n)) = (&cfg.data.edges, &cfg.data.nodes) else {
            return Err(CliError::input("config field `data`: needs `bundle` or both `edges` and `nodes`"));
        };
        Ok(Self {
            edges: EdgeTable::load(e)?,
            nodes: NodeTable::load(n)?,
            coeffs: cfg.coefficients()?,
            add_self_loops: cfg.model.add_self_loops,
        })
    }
}

/// Fixed scaling taken from a checkpoint.
#[derive(Debug, Clone)]
pub struct FrozenScaling {
    pub features: Vec<(String, ScalerParams)>,
    pub target: ScalerParams,
}

impl From<&Checkpoint> for FrozenScaling {
    fn from(c: &Checkpoint) -> Self {
        Self {
            features: c.features.iter().map(|f| (f.name.clone(), f.params())).collect(),
            target: c.target.params(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: TrafficGraph,
    pub feature_names: Vec<String>,
    /// Scaled to the spline domain `[-1, 1]`.
    pub features: Tensor,
    pub feature_scalers: Vec<ScalerParams>,
    /// Min-max scaled targets.
    pub targets: Vec<f64>,
    pub target_scaler: ScalerParams,
    pub aggregation_weights: Vec<f64>,
    pub routing_weights: Vec<f64>,
    pub matrices: GraphMatrices,
    pub missing: MissingReport,
    /// Labels of nodes dropped for missing data.
    pub dropped: Vec<String>,
    /// Feature columns excluded because too many values were missing.
    pub excluded: Vec<String>,
    pub add_self_loops: bool,
}

impl Prepared {
    pub fn dataset(&self) -> Result<Dataset> {
        Ok(Dataset::new(self.matrices.normalized.clone(), self.features.clone(), self.targets.clone())?)
    }
}

/// Graph order, missing-data policy, outlier smoothing, scaling, and
/// adjacency. With `frozen`, features are the checkpoint's columns scaled
/// by its stored ranges.
pub fn prepare(src: &Sources, target: &str, pre: &PreprocessSection, frozen: Option<&FrozenScaling>) -> Result<Prepared> {
    let nodes = &src.nodes;
    let graph = src.edges.to_graph(&nodes.ids)?;
    let target_col = nodes
        .column_index(target)
        .ok_or_else(|| CliError::input(format!("node table has no target column `{target}`")))?;
    let candidates: Vec<usize> = match frozen {
        Some(f) => f
            .features
            .iter()
            .map(|(name, _)| {
                nodes
                    .column_index(name)
                    .filter(|&c| c != target_col)
                    .ok_or_else(|| CliError::input(format!("feature mismatch: checkpoint feature `{name}` is not in the node table")))
            })
            .collect::<Result<_>>()?,
        None => (0..nodes.columns.len()).filter(|&c| c != target_col).collect(),
    };
    if candidates.is_empty() {
        return Err(CliError::input("node table has no feature columns"));
    }

    let row_of: HashMap<&str, usize> = nodes.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(graph.node_count());
    let mut y_raw = Vec::with_capacity(graph.node_count());
    for id in graph.node_ids() {
        let r = *row_of
            .get(id.as_str())
            .ok_or_else(|| CliError::input(format!("node {id:?} has no row in the node table")))?;
        rows.push(candidates.iter().map(|&c| nodes.values[r][c]).collect::<Vec<_>>());
        y_raw.push(nodes.values[r][target_col]);
    }
    let names: Vec<String> = candidates.iter().map(|&c| nodes.columns[c].clone()).collect();
    let table = FeatureTable::new(names.clone(), rows)?;
    let (table, missing) = apply_missing_policy(&table);

    let keep: Vec<usize> = (0..graph.node_count()).filter(|r| !missing.dropped_rows.contains(r)).collect();
    let dropped: Vec<String> = missing.dropped_rows.iter().map(|&r| graph.node_ids()[r].clone()).collect();
    let graph = if dropped.is_empty() { graph } else { graph.subgraph(&keep)? };
    if graph.node_count() < 2 {
        return Err(CliError::input("fewer than two nodes remain after dropping incomplete rows"));
    }
    let mut y = Vec::with_capacity(keep.len());
    for (&r, id) in keep.iter().zip(graph.node_ids()) {
        y.push(y_raw[r].ok_or_else(|| CliError::input(format!("target `{target}` is missing for node {id:?}")))?);
    }

    let flagged: Vec<usize> = missing.flagged_columns.iter().map(|&(c, _)| c).collect();
    if frozen.is_some() && !flagged.is_empty() {
        return Err(CliError::input(format!(
            "checkpoint feature `{}` has too many missing values",
            names[flagged[0]]
        )));
    }
    let used: Vec<usize> = (0..names.len()).filter(|c| !flagged.contains(c)).collect();
    if used.is_empty() {
        return Err(CliError::input("every feature column has too many missing values"));
    }
    let excluded: Vec<String> = flagged.iter().map(|&c| names[c].clone()).collect();

    let mut columns: Vec<Vec<f64>> = used
        .iter()
        .map(|&c| table.column(c).expect("unflagged columns are complete"))
        .collect();
    if pre.smooth_outliers {
        for col in &mut columns {
            *col = smooth(col, pre)?;
        }
    }

    let (feature_scalers, target_scaler) = match frozen {
        Some(f) => (f.features.iter().map(|(_, p)| *p).collect::<Vec<_>>(), f.target),
        None => (
            columns.iter().map(|c| minmax_scale(c).map(|s| s.params)).collect::<kanflow_core::Result<Vec<_>>>()?,
            minmax_scale(&y)?.params,
        ),
    };
    let n = graph.node_count();
    let mut features = Tensor::zeros(n, columns.len());
    for (j, (col, p)) in columns.iter().zip(&feature_scalers).enumerate() {
        for (i, &v) in col.iter().enumerate() {
            features.set(i, j, to_spline_domain(p.transform(v)));
        }
    }
    let targets: Vec<f64> = y.iter().map(|&v| target_scaler.transform(v)).collect();

    let aggregation_weights = graph.weights(&src.coeffs)?;
    let routing_weights = match src.edges.weight_lookup() {
        Some(lookup) => graph
            .edges()
            .iter()
            .map(|e| lookup[&pair_key(&graph.node_ids()[e.source], &graph.node_ids()[e.target])])
            .collect(),
        None => aggregation_weights.clone(),
    };
    let matrices = build_matrices(&graph, &aggregation_weights, src.add_self_loops)?;

    Ok(Prepared {
        graph,
        feature_names: used.iter().map(|&c| names[c].clone()).collect(),
        features,
        feature_scalers,
        targets,
        target_scaler,
        aggregation_weights,
        routing_weights,
        matrices,
        missing,
        dropped,
        excluded,
        add_self_loops: src.add_self_loops,
    })
}

/// Rolling-mean replacement of z-score outliers, in node order. Constant
/// columns have no outliers.
fn smooth(col: &[f64], pre: &PreprocessSection) -> Result<Vec<f64>> {
    if col.len() < 2 {
        return Ok(col.to_vec());
    }
    let flags = match zscore_flags(col, pre.zscore_threshold) {
        Ok(f) => f,
        Err(kanflow_core::Error::Domain(_)) => return Ok(col.to_vec()),
        Err(e) => return Err(e.into()),
    };
    Ok(rolling_mean_replace(col, &flags, pre.smoothing_window)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::EdgeRow;
    use kanflow_core::graph::reference_network;

    fn reference_sources(values: Vec<Vec<Option<f64>>>, columns: &[&str]) -> Sources {
        let (g, w) = reference_network();
        let edges = EdgeTable {
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
        };
        Sources {
            edges,
            nodes: NodeTable {
                columns: columns.iter().map(|c| c.to_string()).collect(),
                ids: (1..=values.len()).rev().map(|i| format!("V{i}")).collect(),
                values,
            },
            coeffs: WeightCoefficients::default(),
            add_self_loops: false,
        }
    }

    fn full() -> Vec<Vec<Option<f64>>> {
        (0..5).map(|i| vec![Some(i as f64), Some(10.0 - i as f64 * 2.0), Some(1.0 + i as f64)]).collect()
    }

    #[test]
    fn aligns_rows_to_graph_order_and_scales() {
        let p = prepare(&reference_sources(full(), &["a", "b", "target"]), "target", &PreprocessSection::default(), None).unwrap();
        assert_eq!(p.graph.node_ids(), ["V1", "V2", "V3", "V4", "V5"]);
        assert_eq!(p.feature_names, ["a", "b"]);
        // node table lists V5 first, so V1 holds row 4
        assert_eq!(p.features.get(0, 0), 1.0);
        assert_eq!(p.features.get(4, 0), -1.0);
        assert_eq!(p.targets[0], 1.0);
        assert_eq!(p.routing_weights[3], 7.1);
        assert_eq!(p.aggregation_weights[3], 7.0);
    }

    #[test]
    fn drops_sparse_rows_and_excludes_flagged_columns() {
        let mut v: Vec<Vec<Option<f64>>> = full()
            .into_iter()
            .map(|mut r| {
                r.insert(0, Some(r[0].unwrap() * 3.0));
                r.insert(0, Some(r[1].unwrap() - 4.0));
                r
            })
            .collect();
        v[1][1] = None;
        v[1][2] = None;
        v[2][3] = None;
        let p = prepare(&reference_sources(v, &["d", "c", "a", "b", "target"]), "target", &PreprocessSection::default(), None).unwrap();
        assert_eq!(p.dropped, ["V4"]);
        assert_eq!(p.graph.node_count(), 4);
        assert_eq!(p.excluded, ["b"]);
        assert_eq!(p.feature_names, ["d", "c", "a"]);
    }

    #[test]
    fn input_errors() {
        let src = reference_sources(full(), &["a", "b", "target"]);
        assert!(prepare(&src, "y", &PreprocessSection::default(), None).is_err());
        let mut v = full();
        v[0][2] = None;
        let err = prepare(&reference_sources(v, &["a", "b", "target"]), "target", &PreprocessSection::default(), None).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
        let mut short = full();
        short.pop();
        let err = prepare(&reference_sources(short, &["a", "b", "target"]), "target", &PreprocessSection::default(), None).unwrap_err();
        assert!(err.to_string().contains("\"V5\""), "{err}");
        let frozen = FrozenScaling {
            features: vec![("zz".into(), ScalerParams { min: 0.0, max: 1.0 })],
            target: ScalerParams { min: 0.0, max: 1.0 },
        };
        let err = prepare(&src, "target", &PreprocessSection::default(), Some(&frozen)).unwrap_err();
        assert!(err.to_string().contains("feature mismatch"), "{err}");
    }

    #[test]
    fn frozen_scaling_reused() {
        let src = reference_sources(full(), &["a", "b", "target"]);
        let fresh = prepare(&src, "target", &PreprocessSection::default(), None).unwrap();
        let frozen = FrozenScaling {
            features: fresh.feature_names.iter().cloned().zip(fresh.feature_scalers.iter().copied()).collect(),
            target: fresh.target_scaler,
        };
        let again = prepare(&src, "target", &PreprocessSection::default(), Some(&frozen)).unwrap();
        assert_eq!(again.features, fresh.features);
        assert_eq!(again.targets, fresh.targets);
    }

    #[test]
    fn outlier_smoothing_replaces_spikes() {
        let mut v: Vec<Vec<Option<f64>>> = (0..5).map(|i| vec![Some(1.0), Some(i as f64)]).collect();
        v[2][0] = Some(50.0);
        let src = reference_sources(v, &["spiky", "target"]);
        let raw = prepare(&src, "target", &PreprocessSection::default(), None).unwrap();
        assert_eq!(raw.features.get(2, 0), 1.0);
        let pre = PreprocessSection {
            smooth_outliers: true,
            zscore_threshold: 1.5,
            smoothing_window: 2,
        };
        let p = prepare(&src, "target", &pre, None).unwrap();
        assert!(p.features.as_slice().iter().all(|&x| x == -1.0));
    }
}
