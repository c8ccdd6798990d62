//! Edge and node CSV tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use kanflow_core::graph::{Edge, EdgeAttributes, TrafficGraph};

use crate::error::{CliError, Result};
use crate::num::{fmt, parse_finite};

pub const EDGE_COLUMNS: [&str; 6] = ["start", "end", "length_km", "speed_kmh", "congestion", "travel_min"];
/// Optional trailing column with a precomputed routing weight.
pub const WEIGHT_COLUMN: &str = "weight";
pub const NODE_ID_COLUMN: &str = "node_id";

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub start: String,
    pub end: String,
    pub attrs: EdgeAttributes,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeTable {
    pub rows: Vec<EdgeRow>,
    /// Whether the `weight` column is present.
    pub has_weight: bool,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r)
}

fn csv_error(source: &str, e: csv::Error) -> CliError {
    let at = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
    CliError::input(format!("{source}:{at}: {e}"))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

impl EdgeTable {
    /// Parses an edge table. Errors name the 1-based data row.
    pub fn read<R: Read>(r: R, source: &str) -> Result<Self> {
        let mut rd = reader(r);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| csv_error(source, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let has_weight = header.len() == EDGE_COLUMNS.len() + 1 && header[EDGE_COLUMNS.len()] == WEIGHT_COLUMN;
        if header.len() < EDGE_COLUMNS.len() || header[..EDGE_COLUMNS.len()] != EDGE_COLUMNS || (header.len() > EDGE_COLUMNS.len() && !has_weight) {
            return Err(CliError::input(format!(
                "{source}: header must be `{}` with an optional `{WEIGHT_COLUMN}` column, found `{}`",
                EDGE_COLUMNS.join(","),
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| csv_error(source, e))?;
            let bad = |m: String| CliError::input(format!("{source}: row {row}: {m}"));
            let num = |c: usize| parse_finite(&rec[c]).map_err(|m| bad(format!("{}: {m}", header[c])));
            let attrs = EdgeAttributes {
                length_km: num(2)?,
                speed_limit: num(3)?,
                congestion: num(4)?,
                travel_min: num(5)?,
            };
            attrs.validate().map_err(bad)?;
            let weight = if has_weight {
                let w = num(6)?;
                if w < 0.0 {
                    return Err(bad(format!("weight must be non-negative, got {w}")));
                }
                Some(w)
            } else {
                None
            };
            let (start, end) = (rec[0].trim().to_string(), rec[1].trim().to_string());
            if start.is_empty() || end.is_empty() {
                return Err(bad("empty node id".into()));
            }
            rows.push(EdgeRow { start, end, attrs, weight });
        }
        Ok(Self { rows, has_weight })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(open(path)?, &path.display().to_string())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = writer(w);
        let mut header: Vec<&str> = EDGE_COLUMNS.to_vec();
        if self.has_weight {
            header.push(WEIGHT_COLUMN);
        }
        write_record(&mut wr, header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.start.clone(),
                r.end.clone(),
                fmt(r.attrs.length_km),
                fmt(r.attrs.speed_limit),
                fmt(r.attrs.congestion),
                fmt(r.attrs.travel_min),
            ];
            if let (true, Some(w)) = (self.has_weight, r.weight) {
                rec.push(fmt(w));
            }
            write_record(&mut wr, rec)?;
        }
        wr.flush().map_err(|e| CliError::input(e.to_string()))
    }

    /// Builds the graph. Nodes are numbered by first appearance in the edge
    /// rows, followed by `extra_nodes` not already present.
    pub fn to_graph(&self, extra_nodes: &[String]) -> Result<TrafficGraph> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut ids: Vec<String> = Vec::new();
        let mut idx = |s: &str, ids: &mut Vec<String>| -> usize {
            *index.entry(s.to_string()).or_insert_with(|| {
                ids.push(s.to_string());
                ids.len() - 1
            })
        };
        let mut edges = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let source = idx(&r.start, &mut ids);
            let target = idx(&r.end, &mut ids);
            edges.push(Edge {
                source,
                target,
                attrs: r.attrs,
            });
        }
        let present: HashSet<String> = ids.iter().cloned().collect();
        ids.extend(extra_nodes.iter().filter(|n| !present.contains(*n)).cloned());
        TrafficGraph::new(ids, edges).map_err(|e| match e {
            kanflow_core::Error::Graph { index, reason } => CliError::input(format!("edge row {}: {reason}", index + 1)),
            other => other.into(),
        })
    }

    /// Routing weight per edge keyed by unordered label pair.
    pub fn weight_lookup(&self) -> Option<BTreeMap<(String, String), f64>> {
        if !self.has_weight {
            return None;
        }
        Some(
            self.rows
                .iter()
                .filter_map(|r| r.weight.map(|w| (pair_key(&r.start, &r.end), w)))
                .collect(),
        )
    }
}

pub fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Node feature table: `node_id` then numeric columns; empty cells missing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeTable {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl NodeTable {
    pub fn read<R: Read>(r: R, source: &str) -> Result<Self> {
        let mut rd = reader(r);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| csv_error(source, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.first().map(String::as_str) != Some(NODE_ID_COLUMN) {
            return Err(CliError::input(format!("{source}: first column must be `{NODE_ID_COLUMN}`")));
        }
        let columns: Vec<String> = header[1..].to_vec();
        let mut seen_cols = HashSet::new();
        for c in &columns {
            if c.is_empty() || !seen_cols.insert(c) {
                return Err(CliError::input(format!("{source}: empty or duplicate column name {c:?}")));
            }
        }
        let mut seen = HashSet::new();
        let (mut ids, mut values) = (Vec::new(), Vec::new());
        for (i, rec) in rd.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| csv_error(source, e))?;
            let id = rec[0].trim().to_string();
            if id.is_empty() || !seen.insert(id.clone()) {
                return Err(CliError::input(format!("{source}: row {row}: empty or duplicate node id {id:?}")));
            }
            let mut cells = Vec::with_capacity(columns.len());
            for (c, name) in columns.iter().enumerate() {
                let raw = rec[c + 1].trim();
                cells.push(if raw.is_empty() {
                    None
                } else {
                    Some(parse_finite(raw).map_err(|m| CliError::input(format!("{source}: row {row}: {name}: {m}")))?)
                });
            }
            ids.push(id);
            values.push(cells);
        }
        Ok(Self { columns, ids, values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(open(path)?, &path.display().to_string())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = writer(w);
        let mut header = vec![NODE_ID_COLUMN.to_string()];
        header.extend(self.columns.iter().cloned());
        write_record(&mut wr, header)?;
        for (id, row) in self.ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.map(fmt).unwrap_or_default()));
            write_record(&mut wr, rec)?;
        }
        wr.flush().map_err(|e| CliError::input(e.to_string()))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_record<W: Write, I, T>(wr: &mut csv::Writer<W>, rec: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    wr.write_record(rec).map_err(|e| CliError::input(e.to_string()))
}
