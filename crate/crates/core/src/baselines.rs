//! Classical comparison methods: shortest paths, genetic-algorithm routing,
//! the MLP-GCN variant, and an inverse-distance predictor that turns
//! shortest-path distances into node-level predictions.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::error::{bail, Result};
use crate::gcn::{ModelBundle, ModelKind, ModelSpec};
use crate::graph::TrafficGraph;
use crate::rng;

/// A route and its total weight. Unreachable targets carry an empty path
/// and infinite cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub nodes: Vec<usize>,
    pub cost: f64,
}

impl PathResult {
    pub fn unreachable() -> Self {
        Self {
            nodes: Vec::new(),
            cost: f64::INFINITY,
        }
    }

    pub fn is_reachable(&self) -> bool {
        self.cost.is_finite()
    }
}

/// Weighted adjacency lists for routing.
#[derive(Debug, Clone)]
pub struct RoutingGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl RoutingGraph {
    pub fn new(graph: &TrafficGraph, weights: &[f64]) -> Result<Self> {
        if weights.len() != graph.edge_count() {
            bail!(
                Parameter,
                "{} weights supplied for {} edges",
                weights.len(),
                graph.edge_count()
            );
        }
        let mut adj = vec![Vec::new(); graph.node_count()];
        for (i, (e, &w)) in graph.edges().iter().zip(weights).enumerate() {
            if !w.is_finite() || w < 0.0 {
                bail!(Domain, "edge {} has weight {}; routing needs finite non-negative weights", i, w);
            }
            adj[e.source].push((e.target, w));
            adj[e.target].push((e.source, w));
        }
        Ok(Self { adj })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.adj[a].iter().find(|(n, _)| *n == b).map(|(_, w)| *w)
    }

    /// Sum of edge weights along `path`, or `None` if some hop is not an edge.
    pub fn path_cost(&self, path: &[usize]) -> Option<f64> {
        path.windows(2).try_fold(0.0, |acc, w| Some(acc + self.weight(w[0], w[1])?))
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.node_count() {
            bail!(Parameter, "node {} out of range ({} nodes)", v, self.node_count());
        }
        Ok(())
    }
}

#[derive(PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths (binary heap).
pub fn dijkstra(graph: &RoutingGraph, source: usize) -> Result<Vec<PathResult>> {
    graph.check_node(source)?;
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { cost: 0.0, node: source });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &(next, w) in graph.neighbors(node) {
            let cand = cost + w;
            if cand < dist[next] {
                dist[next] = cand;
                prev[next] = node;
                heap.push(Frontier { cost: cand, node: next });
            }
        }
    }
    Ok((0..n)
        .map(|t| {
            if !dist[t].is_finite() {
                return PathResult::unreachable();
            }
            let mut nodes = vec![t];
            let mut cur = t;
            while cur != source {
                cur = prev[cur];
                nodes.push(cur);
            }
            nodes.reverse();
            PathResult { nodes, cost: dist[t] }
        })
        .collect())
}

/// All-pairs distances with successor table for path reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    dist: Vec<f64>,
    next: Vec<usize>,
}

const NO_NEXT: usize = usize::MAX;

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    /// Shortest distance; `f64::INFINITY` marks a disconnected pair.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    pub fn path(&self, i: usize, j: usize) -> PathResult {
        if !self.get(i, j).is_finite() {
            return PathResult::unreachable();
        }
        let mut nodes = vec![i];
        let mut cur = i;
        while cur != j {
            cur = self.next[cur * self.n + j];
            nodes.push(cur);
        }
        PathResult {
            nodes,
            cost: self.get(i, j),
        }
    }
}

/// In-place all-pairs dynamic program. Infinity is only ever compared,
/// never added.
pub fn floyd_warshall(graph: &RoutingGraph) -> DistanceMatrix {
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n * n];
    let mut next = vec![NO_NEXT; n * n];
    for i in 0..n {
        dist[i * n + i] = 0.0;
        next[i * n + i] = i;
        for &(j, w) in graph.neighbors(i) {
            if w < dist[i * n + j] {
                dist[i * n + j] = w;
                next[i * n + j] = j;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[i * n + k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let dkj = dist[k * n + j];
                if !dkj.is_finite() {
                    continue;
                }
                if dik + dkj < dist[i * n + j] {
                    dist[i * n + j] = dik + dkj;
                    next[i * n + j] = next[i * n + k];
                }
            }
        }
    }
    DistanceMatrix { n, dist, next }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 100,
            mutation_rate: 0.2,
            crossover_rate: 0.8,
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population == 0 || self.generations == 0 {
            bail!(Parameter, "population and generations must be at least 1");
        }
        for (name, r) in [("mutation", self.mutation_rate), ("crossover", self.crossover_rate)] {
            if !(0.0..=1.0).contains(&r) {
                bail!(Parameter, "{} rate {} outside [0, 1]", name, r);
            }
        }
        Ok(())
    }
}

/// Result of a GA search with its best-so-far cost per generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaRun {
    pub best: PathResult,
    pub best_per_generation: Vec<f64>,
}

struct GaSearch<'a> {
    graph: &'a RoutingGraph,
    source: usize,
    target: usize,
    rng: rng::Rng,
    fallback: Vec<usize>,
}

const WALK_ATTEMPTS: usize = 16;

impl GaSearch<'_> {
    /// Self-avoiding random walk from the end of `prefix` to the target.
    fn regrow(&mut self, prefix: &[usize]) -> Option<Vec<usize>> {
        let n = self.graph.node_count();
        'attempt: for _ in 0..WALK_ATTEMPTS {
            let mut visited = vec![false; n];
            for &v in prefix {
                visited[v] = true;
            }
            let mut path = prefix.to_vec();
            let mut cur = *prefix.last()?;
            while cur != self.target {
                let options: Vec<usize> = self
                    .graph
                    .neighbors(cur)
                    .iter()
                    .map(|&(v, _)| v)
                    .filter(|&v| !visited[v])
                    .collect();
                if options.is_empty() {
                    continue 'attempt;
                }
                cur = options[self.rng.random_range(0..options.len())];
                visited[cur] = true;
                path.push(cur);
            }
            return Some(path);
        }
        None
    }

    fn cost(&self, path: &[usize]) -> f64 {
        self.graph.path_cost(path).unwrap_or(f64::INFINITY)
    }

    fn random_individual(&mut self) -> Vec<usize> {
        self.regrow(&[self.source]).unwrap_or_else(|| self.fallback.clone())
    }

    fn tournament<'p>(&mut self, pop: &'p [(Vec<usize>, f64)]) -> &'p [usize] {
        let a = self.rng.random_range(0..pop.len());
        let b = self.rng.random_range(0..pop.len());
        if pop[b].1 < pop[a].1 {
            &pop[b].0
        } else {
            &pop[a].0
        }
    }

    /// Splices `p1` up to a shared intermediate node onto the rest of `p2`.
    fn crossover(&mut self, p1: &[usize], p2: &[usize]) -> Vec<usize> {
        let shared: Vec<(usize, usize)> = p1[1..p1.len() - 1]
            .iter()
            .enumerate()
            .filter_map(|(i, v)| p2.iter().position(|w| w == v).map(|j| (i + 1, j)))
            .collect();
        if shared.is_empty() {
            return p1.to_vec();
        }
        let (i, j) = shared[self.rng.random_range(0..shared.len())];
        let mut child = p1[..=i].to_vec();
        child.extend_from_slice(&p2[j + 1..]);
        let mut seen = vec![false; self.graph.node_count()];
        for &v in &child {
            if seen[v] {
                return p1.to_vec();
            }
            seen[v] = true;
        }
        child
    }

    fn mutate(&mut self, path: &[usize]) -> Vec<usize> {
        let cut = self.rng.random_range(0..path.len() - 1);
        self.regrow(&path[..=cut]).unwrap_or_else(|| path.to_vec())
    }
}

fn bfs_path(graph: &RoutingGraph, source: usize, target: usize) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; graph.node_count()];
    prev[source] = source;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        if v == target {
            let mut path = vec![target];
            let mut cur = target;
            while cur != source {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for &(w, _) in graph.neighbors(v) {
            if prev[w] == usize::MAX {
                prev[w] = v;
                queue.push_back(w);
            }
        }
    }
    None
}

/// Evolves simple source-target paths; the best individual is always kept.
pub fn ga_search(graph: &RoutingGraph, source: usize, target: usize, cfg: &GaConfig) -> Result<GaRun> {
    cfg.validate()?;
    graph.check_node(source)?;
    graph.check_node(target)?;
    if source == target {
        bail!(Parameter, "source and target must differ");
    }
    let Some(fallback) = bfs_path(graph, source, target) else {
        bail!(Domain, "no path between {} and {}", source, target);
    };
    let mut ga = GaSearch {
        graph,
        source,
        target,
        rng: rng::seeded(cfg.seed),
        fallback,
    };
    let mut pop: Vec<(Vec<usize>, f64)> = (0..cfg.population)
        .map(|_| {
            let p = ga.random_individual();
            let c = ga.cost(&p);
            (p, c)
        })
        .collect();

    let best_of = |pop: &[(Vec<usize>, f64)]| -> usize {
        let mut best = 0;
        for (i, ind) in pop.iter().enumerate() {
            if ind.1 < pop[best].1 {
                best = i;
            }
        }
        best
    };

    let mut history = Vec::with_capacity(cfg.generations);
    for _ in 0..cfg.generations {
        let elite = pop[best_of(&pop)].clone();
        let mut next = Vec::with_capacity(cfg.population);
        next.push(elite);
        while next.len() < cfg.population {
            let p1 = ga.tournament(&pop).to_vec();
            let mut child = if ga.rng.random_bool(cfg.crossover_rate) {
                let p2 = ga.tournament(&pop).to_vec();
                ga.crossover(&p1, &p2)
            } else {
                p1
            };
            if ga.rng.random_bool(cfg.mutation_rate) {
                child = ga.mutate(&child);
            }
            let c = ga.cost(&child);
            next.push((child, c));
        }
        pop = next;
        history.push(pop[best_of(&pop)].1);
    }
    let (nodes, cost) = pop.swap_remove(best_of(&pop));
    Ok(GaRun {
        best: PathResult { nodes, cost },
        best_per_generation: history,
    })
}

pub fn ga_route(graph: &RoutingGraph, source: usize, target: usize, cfg: &GaConfig) -> Result<PathResult> {
    ga_search(graph, source, target, cfg).map(|r| r.best)
}

/// GCN stack with one aggregation followed by per-node perceptron layers.
/// `dims = [input, hidden...]`.
pub fn mlp_gcn_build(dims: &[usize], seed: u64) -> Result<ModelBundle> {
    if dims.len() < 2 {
        bail!(Parameter, "need an input and at least one hidden width");
    }
    ModelSpec {
        kind: ModelKind::MlpGcn,
        hidden: dims[1..].to_vec(),
        ..ModelSpec::default()
    }
    .build(dims[0], seed)
}

/// Predicts every node as the inverse-distance weighted mean of observed
/// values at other reachable nodes. Zero-distance observations dominate;
/// nodes with no reachable observation get the global observed mean.
pub fn idw_predict(dist: &DistanceMatrix, observed: &[Option<f64>]) -> Result<Vec<f64>> {
    if observed.len() != dist.size() {
        bail!(Parameter, "{} observations for {} nodes", observed.len(), dist.size());
    }
    let known: Vec<f64> = observed.iter().flatten().copied().collect();
    if known.is_empty() {
        bail!(Parameter, "no observed values to interpolate from");
    }
    let global = known.iter().sum::<f64>() / known.len() as f64;
    Ok((0..dist.size())
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            let (mut zsum, mut zcount) = (0.0, 0usize);
            for (j, obs) in observed.iter().enumerate() {
                let Some(v) = obs else { continue };
                let d = dist.get(i, j);
                if j == i || !d.is_finite() {
                    continue;
                }
                if d == 0.0 {
                    zsum += v;
                    zcount += 1;
                } else {
                    num += v / d;
                    den += 1.0 / d;
                }
            }
            if zcount > 0 {
                zsum / zcount as f64
            } else if den > 0.0 {
                num / den
            } else {
                global
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{reference_network, Edge, EdgeAttributes};
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference() -> RoutingGraph {
        let (g, w) = reference_network();
        RoutingGraph::new(&g, &w).unwrap()
    }

    /// Exhaustive enumeration of simple paths.
    fn brute_force(g: &RoutingGraph, s: usize, t: usize) -> f64 {
        fn go(g: &RoutingGraph, v: usize, t: usize, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if v == t {
                *best = best.min(acc);
                return;
            }
            for &(w, c) in g.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    go(g, w, t, seen, acc + c, best);
                    seen[w] = false;
                }
            }
        }
        let mut seen = vec![false; g.node_count()];
        seen[s] = true;
        let mut best = f64::INFINITY;
        go(g, s, t, &mut seen, 0.0, &mut best);
        best
    }

    pub(crate) fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> (TrafficGraph, Vec<f64>) {
        let attrs = EdgeAttributes {
            length_km: 1.0,
            speed_limit: 50.0,
            congestion: 0.1,
            travel_min: 1.0,
        };
        let mut edges = Vec::new();
        for i in 1..n {
            edges.push(Edge { source: rng.random_range(0..i), target: i, attrs });
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.15) && !edges.iter().any(|e| e.source == i && e.target == j) {
                    edges.push(Edge { source: i, target: j, attrs });
                }
            }
        }
        let g = TrafficGraph::new((0..n).map(|i| i.to_string()).collect(), edges).unwrap();
        let w = (0..g.edge_count()).map(|_| rng.random_range(0.1..10.0)).collect();
        (g, w)
    }

    #[test]
    fn reference_shortest_paths() {
        let g = reference();
        let from_v1 = dijkstra(&g, 0).unwrap();
        assert!((from_v1[4].cost - 7.1).abs() < 1e-12);
        assert_eq!(from_v1[4].nodes, vec![0, 4]);
        assert!((from_v1[3].cost - 10.2).abs() < 1e-12);
        assert_eq!(from_v1[0], PathResult { nodes: vec![0], cost: 0.0 });
        for t in 0..5 {
            assert!((from_v1[t].cost - brute_force(&g, 0, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let (g, mut w) = reference_network();
        w[2] = -1.0;
        assert!(RoutingGraph::new(&g, &w).is_err());
    }

    #[test]
    fn floyd_matches_dijkstra_and_brute_force() {
        let g = reference();
        let fw = floyd_warshall(&g);
        for s in 0..5 {
            let d = dijkstra(&g, s).unwrap();
            assert_eq!(fw.get(s, s), 0.0);
            for t in 0..5 {
                assert!((fw.get(s, t) - d[t].cost).abs() < 1e-9);
                assert_eq!(fw.get(s, t), fw.get(t, s));
                let p = fw.path(s, t);
                assert!((g.path_cost(&p.nodes).unwrap() - p.cost).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn disconnected_pairs_are_infinite() {
        let attrs = EdgeAttributes {
            length_km: 1.0,
            speed_limit: 1.0,
            congestion: 0.0,
            travel_min: 1.0,
        };
        let g = TrafficGraph::new(
            (0..3).map(|i| i.to_string()).collect(),
            vec![Edge { source: 0, target: 1, attrs }],
        )
        .unwrap();
        let rg = RoutingGraph::new(&g, &[2.0]).unwrap();
        let fw = floyd_warshall(&rg);
        assert!(fw.get(0, 2).is_infinite());
        assert!(!fw.path(0, 2).is_reachable());
        assert!(!dijkstra(&rg, 0).unwrap()[2].is_reachable());
        assert!(ga_route(&rg, 0, 2, &GaConfig::default()).is_err());
    }

    #[test]
    fn random_graphs_agree_and_satisfy_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let n = rng.random_range(2..=20);
            let (g, w) = random_connected(&mut rng, n);
            let rg = RoutingGraph::new(&g, &w).unwrap();
            let fw = floyd_warshall(&rg);
            for s in 0..n {
                let d = dijkstra(&rg, s).unwrap();
                for t in 0..n {
                    assert!((fw.get(s, t) - d[t].cost).abs() < 1e-9);
                    assert!((rg.path_cost(&d[t].nodes).unwrap() - d[t].cost).abs() < 1e-9);
                    for k in 0..n {
                        assert!(fw.get(s, t) <= fw.get(s, k) + fw.get(k, t) + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn ga_finds_reference_optimum_and_is_deterministic() {
        let g = reference();
        let cfg = GaConfig { seed: 7, ..GaConfig::default() };
        let a = ga_route(&g, 0, 4, &cfg).unwrap();
        assert!((a.cost - 7.1).abs() < 1e-12);
        assert_eq!(a, ga_route(&g, 0, 4, &cfg).unwrap());

        let tiny = GaConfig {
            population: 1,
            generations: 1,
            ..cfg
        };
        let p = ga_route(&g, 0, 4, &tiny).unwrap();
        assert_eq!((p.nodes[0], *p.nodes.last().unwrap()), (0, 4));
        assert!(p.cost >= 7.1 - 1e-12);
        assert!((g.path_cost(&p.nodes).unwrap() - p.cost).abs() < 1e-9);
    }

    #[test]
    fn ga_never_beats_dijkstra_and_improves_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..100 {
            let n = rng.random_range(3..=15);
            let (g, w) = random_connected(&mut rng, n);
            let rg = RoutingGraph::new(&g, &w).unwrap();
            let s = rng.random_range(0..n);
            let t = (s + 1 + rng.random_range(0..n - 1)) % n;
            let cfg = GaConfig {
                population: 10,
                generations: 15,
                seed: trial,
                ..GaConfig::default()
            };
            let run = ga_search(&rg, s, t, &cfg).unwrap();
            let opt = dijkstra(&rg, s).unwrap()[t].cost;
            assert!(run.best.cost >= opt - 1e-9);
            let mut seen = vec![false; n];
            for &v in &run.best.nodes {
                assert!(!seen[v], "path revisits a node");
                seen[v] = true;
            }
            assert!(run.best_per_generation.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn ga_config_validation() {
        let g = reference();
        let bad = GaConfig {
            mutation_rate: 1.5,
            ..GaConfig::default()
        };
        assert!(ga_route(&g, 0, 4, &bad).is_err());
        assert!(ga_route(&g, 2, 2, &GaConfig::default()).is_err());
    }

    #[test]
    fn mlp_gcn_shapes() {
        let m = mlp_gcn_build(&[8, 16, 16], 3).unwrap();
        assert_eq!(m, mlp_gcn_build(&[8, 16, 16], 3).unwrap());
        let shapes: Vec<_> = m.layers().iter().map(|l| l.dims()).collect();
        assert_eq!(shapes, vec![(8, 16), (16, 16)]);
        assert_eq!(m.parameter_count(), 8 * 16 + 16 * 16 + 16 + 1);
        let (graph, _) = reference_network();
        let w = graph.weights(&Default::default()).unwrap();
        let adj = crate::graph::build_matrices(&graph, &w, false).unwrap().normalized;
        let y = m.predict(&adj, &crate::Tensor::filled(5, 8, 0.3)).unwrap();
        assert_eq!(y.len(), 5);
    }

    #[test]
    fn idw_prediction() {
        let g = reference();
        let fw = floyd_warshall(&g);
        let obs = [Some(1.0), Some(3.0), None, None, None];
        let p = idw_predict(&fw, &obs).unwrap();
        // node 0 only sees node 1
        assert!((p[0] - 3.0).abs() < 1e-12);
        let (d0, d1) = (fw.get(2, 0), fw.get(2, 1));
        let expect = (1.0 / d0 + 3.0 / d1) / (1.0 / d0 + 1.0 / d1);
        assert!((p[2] - expect).abs() < 1e-12);
        assert!(idw_predict(&fw, &[None; 5]).is_err());
    }
}
