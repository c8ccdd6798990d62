//! Command-line surface.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use kanflow_core::baselines::{dijkstra, floyd_warshall, ga_route, GaConfig, PathResult, RoutingGraph};
use kanflow_core::featsel::{mutual_information, select_top_k, shapley_exact, shapley_mc, DEFAULT_BINS, MAX_EXACT_FEATURES};
use kanflow_core::gcn::ModelBundle;
use kanflow_core::graph::TrafficGraph;
use kanflow_core::rng::derive_seed;
use kanflow_core::synth::{gen_task, GraphKind, TargetRule, TaskParams};
use kanflow_core::training::{
    add_gaussian_noise, disruption_eval, evaluate, fit_and_score, fold_partition, kfold_split, sweep_grid_spline,
    Dataset, EdgeWeights, FoldResult, MetricsReport,
};

use crate::bundle::GraphBundle;
use crate::checkpoint::{Checkpoint, ScalerDoc};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::num::fmt;
use crate::pipeline::{prepare, FrozenScaling, Prepared, Sources};
use crate::report::{history_table, metrics_table, sweep_table, Table};
use crate::tables::{EdgeRow, EdgeTable, NodeTable};
use crate::WallClock;

pub const SHAPLEY_PERMUTATIONS: usize = 200;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "kanflow", version, about = "KAN-GCN traffic-flow experiments on road graphs")]
pub struct Cli {
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: config `out`, else the current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress the summary on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task as edges.csv and nodes.csv.
    Gen(GenArgs),
    /// Validate edge and node tables and write graph.json.
    Ingest(IngestArgs),
    /// Cross-validate a model and write metrics plus a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, optionally under noise or with an edge removed.
    Evaluate(EvaluateArgs),
    /// Grid-size by spline-order sweep.
    Sweep(SweepArgs),
    /// Mutual information, Shapley values, and top-k feature selection.
    Features(FeaturesArgs),
    /// Shortest-path baselines.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Graph bundle written by `ingest` (replaces the config data section).
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Edge table (replaces the config data section).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Node table.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Target column of the node table.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 50)]
    pub nodes: usize,
    #[arg(long, default_value_t = 8)]
    pub features: usize,
    /// Fraction of node pairs joined by an edge.
    #[arg(long, default_value_t = 0.1)]
    pub edge_prob: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::SmoothNonlinear)]
    pub rule: RuleArg,
    #[arg(long, value_enum, default_value_t = GraphArg::Geometric)]
    pub graph: GraphArg,
    /// Target noise as a fraction of the target standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Linear,
    SmoothNonlinear,
    NeighborAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Geometric,
    ErdosRenyi,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub nodes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated noise levels relative to column standard deviation.
    #[arg(long, value_delimiter = ',')]
    pub noise: Vec<f64>,
    /// Edge to remove, as `A-B` node ids.
    #[arg(long)]
    pub remove_edge: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub grids: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
    pub orders: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Adds Shapley values from this model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Features to select (default: 5, capped at the feature count).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Dijkstra,
    Floyd,
    Ga,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algo: Algo,
    /// Source node id (all sources when omitted).
    #[arg(long)]
    pub source: Option<String>,
    /// Target node id (all targets when omitted).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub population: usize,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.2)]
    pub mutation_rate: f64,
    #[arg(long, default_value_t = 0.8)]
    pub crossover_rate: f64,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.clone(),
        config: cli.config.clone(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Features(a) => cmd_features(&ctx, a),
        Command::Baseline(a) => cmd_baseline(&ctx, a),
    }
}

struct Ctx {
    seed: Option<u64>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    /// Config file, else `fallback`, else defaults; then command-line overrides.
    fn config(&self, data: &DataArgs, fallback: Option<&RunConfig>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(f)) => f.clone(),
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if data.bundle.is_some() || data.edges.is_some() || data.nodes.is_some() {
            cfg.data.bundle = data.bundle.clone();
            cfg.data.edges = data.edges.clone();
            cfg.data.nodes = data.nodes.clone();
        }
        if let Some(t) = &data.target {
            cfg.data.target = t.clone();
        }
        cfg.validate()?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn seed(&self, cfg: Option<&RunConfig>) -> u64 {
        self.seed.or(cfg.map(|c| c.seed)).unwrap_or(0)
    }

    fn out_dir(&self, cfg: Option<&RunConfig>) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.and_then(|c| c.out.clone()))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }

    fn optional_config(&self) -> Result<Option<RunConfig>> {
        self.config.as_deref().map(RunConfig::load).transpose()
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<()> {
    let cfg = ctx.optional_config()?;
    let seed = ctx.seed(cfg.as_ref());
    let rule = match a.rule {
        RuleArg::Linear => TargetRule::Linear,
        RuleArg::SmoothNonlinear => TargetRule::SmoothNonlinear,
        RuleArg::NeighborAvg => TargetRule::NeighborAvg,
    };
    let mut params = TaskParams::new(a.nodes, a.features, a.edge_prob, rule, seed);
    params.graph = match a.graph {
        GraphArg::Geometric => GraphKind::Geometric,
        GraphArg::ErdosRenyi => GraphKind::ErdosRenyi,
    };
    params.noise = a.noise;
    if let Some(c) = &cfg {
        params.coeffs = c.coefficients()?;
    }
    let task = gen_task(&params)?;
    let ids = task.graph.node_ids();
    let edges = EdgeTable {
        rows: task
            .graph
            .edges()
            .iter()
            .map(|e| EdgeRow {
                start: ids[e.source].clone(),
                end: ids[e.target].clone(),
                attrs: e.attrs,
                weight: None,
            })
            .collect(),
        has_weight: false,
    };
    let d = task.features.cols();
    let mut columns: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    columns.push("target".into());
    let nodes = NodeTable {
        columns,
        ids: ids.to_vec(),
        values: (0..ids.len())
            .map(|i| {
                let mut r: Vec<Option<f64>> = task.features.row(i).iter().map(|&v| Some(v)).collect();
                r.push(Some(task.targets[i]));
                r
            })
            .collect(),
    };
    let out = ctx.out_dir(cfg.as_ref())?;
    let (ep, np) = (out.join("edges.csv"), out.join("nodes.csv"));
    edges.write(fs::File::create(&ep).map_err(|e| CliError::io(&ep, e))?)?;
    nodes.write(fs::File::create(&np).map_err(|e| CliError::io(&np, e))?)?;
    ctx.say(format!(
        "generated {} nodes, {} edges, {} features ({}) into {}",
        ids.len(),
        edges.rows.len(),
        d,
        rule.name(),
        out.display()
    ));
    Ok(())
}

fn cmd_ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let cfg = ctx.optional_config()?.unwrap_or_default();
    let edges = EdgeTable::load(&a.edges)?;
    let nodes = a.nodes.as_deref().map(NodeTable::load).transpose()?;
    let bundle = GraphBundle::build(&edges, nodes.as_ref(), cfg.coefficients()?, cfg.model.add_self_loops)?;
    let out = ctx.out_dir(Some(&cfg))?.join("graph.json");
    write_text(&out, &bundle.to_json())?;
    ctx.say(format!(
        "ingested {} nodes, {} edges into {}",
        bundle.node_ids.len(),
        bundle.edges.len(),
        out.display()
    ));
    Ok(())
}

fn prepared(cfg: &RunConfig, frozen: Option<&FrozenScaling>) -> Result<Prepared> {
    let src = Sources::load(cfg)?;
    prepare(&src, &cfg.data.target, &cfg.preprocess, frozen)
}

fn scaler_docs(p: &Prepared) -> (Vec<ScalerDoc>, ScalerDoc) {
    (
        p.feature_names
            .iter()
            .zip(&p.feature_scalers)
            .map(|(n, s)| ScalerDoc::new(n, *s))
            .collect(),
        ScalerDoc::new("target", p.target_scaler),
    )
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = ctx.config(&a.data, None)?;
    let spec = cfg.model_spec()?;
    let tcfg = cfg.train_config()?;
    let prep = prepared(&cfg, None)?;
    let data = prep.dataset()?;
    let out = ctx.out_dir(Some(&cfg))?;
    let clock = WallClock::start();

    let folds = kfold_split(data.node_count(), tcfg.folds, tcfg.seed)?;
    let mut results: Vec<FoldResult> = Vec::with_capacity(folds.len());
    let mut best = None;
    for f in 0..folds.len() {
        let (train_idx, test_idx) = fold_partition(&folds, f);
        let seed = derive_seed(tcfg.seed, &[f as u64]);
        let (model, rep, sc) = fit_and_score(&spec, &data, &train_idx, &test_idx, &tcfg, seed, &clock)
            .map_err(|e| CliError::from(e).context(format!("fold {f}")))?;
        if best.as_ref().is_none_or(|(_, m): &(usize, f64)| sc.mae < *m) {
            best = Some((f, sc.mae));
            let (feats, target) = scaler_docs(&prep);
            let mut echo = cfg.clone();
            echo.out = None;
            let ck = Checkpoint::new(&model, cfg.seed, f, feats, target, echo);
            write_text(&out.join("checkpoint.json"), &ck.to_json())?;
        }
        results.push(FoldResult {
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

    metrics_table(&results).write(&out.join("metrics.csv"))?;
    let hist: Vec<(usize, &[_])> = results.iter().map(|r| (r.fold, r.metrics.history.as_slice())).collect();
    history_table(&hist).write(&out.join("history.csv"))?;
    let mut assign = Table::new(&["fold", "node_id"]);
    let mut timing = Table::new(&["fold", "train_seconds"]);
    for r in &results {
        for &i in &r.test {
            assign.push(vec![r.fold.to_string(), prep.graph.node_ids()[i].clone()]);
        }
        timing.push(vec![r.fold.to_string(), fmt(r.metrics.train_seconds)]);
    }
    assign.write(&out.join("folds.csv"))?;
    timing.write(&out.join("timing.csv"))?;

    let k = results.len() as f64;
    let mae = results.iter().map(|r| r.metrics.mae).sum::<f64>() / k;
    let rmse = results.iter().map(|r| r.metrics.rmse).sum::<f64>() / k;
    ctx.say(format!(
        "{} on {} nodes, {} features: {}-fold mae {mae:.6} rmse {rmse:.6}; best fold {}; wrote {}",
        spec.kind.name(),
        data.node_count(),
        data.features.cols(),
        results.len(),
        best.map(|b| b.0).unwrap_or(0),
        out.display()
    ));
    if !prep.dropped.is_empty() || !prep.excluded.is_empty() {
        ctx.say(format!(
            "dropped nodes: [{}]; excluded features: [{}]",
            prep.dropped.join(", "),
            prep.excluded.join(", ")
        ));
    }
    Ok(())
}

fn all_nodes(data: &Dataset) -> Vec<usize> {
    (0..data.node_count()).collect()
}

/// Splits `A-B` at the unique dash that separates two known node ids.
pub fn split_edge(spec: &str, graph: &TrafficGraph) -> Result<(usize, usize)> {
    let hits: Vec<(usize, usize)> = spec
        .match_indices('-')
        .filter_map(|(i, _)| Some((graph.node_index(&spec[..i])?, graph.node_index(&spec[i + 1..])?)))
        .collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        [] => Err(CliError::input(format!("--remove-edge {spec:?}: expected A-B with two node ids of the graph"))),
        _ => Err(CliError::input(format!("--remove-edge {spec:?}: ambiguous split into node ids"))),
    }
}

fn cmd_evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = ctx.config(&a.data, Some(&ck.config))?;
    let model = ck.to_model()?;
    let prep = prepared(&cfg, Some(&FrozenScaling::from(&ck)))?;
    let data = prep.dataset()?;
    if model.input_dim() != data.features.cols() {
        return Err(CliError::input(format!(
            "checkpoint expects {} features, data has {}",
            model.input_dim(),
            data.features.cols()
        )));
    }
    let out = ctx.out_dir(Some(&cfg))?;
    let idx = all_nodes(&data);

    let levels = if a.noise.is_empty() { vec![0.0] } else { a.noise.clone() };
    let mut t = Table::new(&["noise", "mae", "rmse"]);
    for &pct in &levels {
        let noisy = Dataset {
            features: add_gaussian_noise(&data.features, pct, derive_seed(cfg.seed, &[pct.to_bits()]))?,
            ..data.clone()
        };
        let s = evaluate(&model, &noisy, &idx)?;
        t.push(vec![fmt(pct), fmt(s.mae), fmt(s.rmse)]);
        ctx.say(format!("noise {pct}: mae {:.6} rmse {:.6}", s.mae, s.rmse));
    }
    t.write(&out.join("evaluation.csv"))?;

    if let Some(spec_str) = &a.remove_edge {
        let removed = split_edge(spec_str, &prep.graph)?;
        let clock = WallClock::start();
        let rep = disruption_eval(
            &prep.graph,
            EdgeWeights {
                aggregation: &prep.aggregation_weights,
                routing: &prep.routing_weights,
            },
            removed,
            &prep.features,
            &prep.targets,
            &cfg.model_spec()?,
            &cfg.train_config()?,
            prep.add_self_loops,
            &clock,
        )?;
        let ids = prep.graph.node_ids();
        let mut d = Table::new(&[
            "source",
            "target",
            "disconnected",
            "before_mae",
            "before_rmse",
            "after_mae",
            "after_rmse",
            "mae_delta",
            "rmse_delta",
        ]);
        d.push(vec![
            ids[removed.0].clone(),
            ids[removed.1].clone(),
            rep.disconnected.to_string(),
            fmt(rep.before.mae),
            fmt(rep.before.rmse),
            fmt(rep.after.mae),
            fmt(rep.after.rmse),
            fmt(rep.mae_delta()),
            fmt(rep.rmse_delta()),
        ]);
        d.write(&out.join("disruption.csv"))?;
        let path = |p: &[usize]| p.iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>().join("|");
        let mut r = Table::new(&["source", "target", "before_cost", "after_cost", "before_path", "after_path"]);
        for x in &rep.reroutes {
            r.push(vec![
                ids[x.source].clone(),
                ids[x.target].clone(),
                fmt(x.before_cost),
                fmt(x.after_cost),
                path(&x.before_path),
                path(&x.after_path),
            ]);
        }
        r.write(&out.join("reroutes.csv"))?;
        ctx.say(format!(
            "removed {spec_str}: mae {:.6} -> {:.6}, {} rerouted pairs{}",
            rep.before.mae,
            rep.after.mae,
            rep.reroutes.len(),
            if rep.disconnected { ", graph disconnected" } else { "" }
        ));
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let cfg = ctx.config(&a.data, None)?;
    let spec = cfg.model_spec()?;
    let tcfg = cfg.train_config()?;
    let data = prepared(&cfg, None)?.dataset()?;
    let out = ctx.out_dir(Some(&cfg))?;
    let rows = sweep_grid_spline(&spec, &data, &tcfg, &a.grids, &a.orders, &WallClock::start())?;
    sweep_table(&rows).write(&out.join("sweep.csv"))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    ctx.say(format!("sweep: {} cells, {failed} failed; wrote {}", rows.len(), out.join("sweep.csv").display()));
    if failed == rows.len() {
        let first = rows[0].outcome.as_ref().err().cloned().unwrap_or_default();
        return Err(CliError::Numeric(format!("every sweep cell failed (first: {first})")));
    }
    Ok(())
}

fn cmd_features(ctx: &Ctx, a: &FeaturesArgs) -> Result<()> {
    let ck = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = ctx.config(&a.data, ck.as_ref().map(|c| &c.config))?;
    let frozen = ck.as_ref().map(FrozenScaling::from);
    let prep = prepared(&cfg, frozen.as_ref())?;
    let data = prep.dataset()?;
    let d = data.features.cols();
    let mi = (0..d)
        .map(|j| mutual_information(&data.features.column_values(j), &data.targets, a.bins))
        .collect::<kanflow_core::Result<Vec<f64>>>()?;
    let k = a.k.unwrap_or(DEFAULT_TOP_K.min(d));
    let selected = select_top_k(&mi, k).map_err(|e| CliError::input(format!("--k: {e}")))?;

    let shapley = match &ck {
        Some(ck) => Some(shapley_mean_abs(&ck.to_model()?, &data, cfg.seed)?),
        None => None,
    };
    let mut t = Table::new(&["feature", "mi", "shapley_mean_abs", "selected"]);
    for j in 0..d {
        t.push(vec![
            prep.feature_names[j].clone(),
            fmt(mi[j]),
            shapley.as_ref().map(|s| fmt(s[j])).unwrap_or_default(),
            selected.contains(&j).to_string(),
        ]);
    }
    let out = ctx.out_dir(Some(&cfg))?;
    t.write(&out.join("features.csv"))?;
    let names: Vec<&str> = selected.iter().map(|&j| prep.feature_names[j].as_str()).collect();
    ctx.say(format!("selected {k} of {d} features: {}", names.join(", ")));
    Ok(())
}

/// Mean absolute Shapley value per feature over all nodes.
///
/// A coalition keeps its feature columns and replaces every other column
/// by its mean at every node; node `i`'s prediction is the value. Forward
/// passes are shared across nodes, cached per coalition. Above
/// [`MAX_EXACT_FEATURES`] every node uses the same sampled permutations.
pub fn shapley_mean_abs(model: &ModelBundle, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
    let (n, d) = data.features.shape();
    if model.input_dim() != d {
        return Err(CliError::input(format!("checkpoint expects {} features, data has {d}", model.input_dim())));
    }
    let means: Vec<f64> = (0..d).map(|j| data.features.column_values(j).iter().sum::<f64>() / n as f64).collect();
    let cache: RefCell<HashMap<Vec<bool>, Vec<f64>>> = RefCell::new(HashMap::new());
    let outputs = |z: &[f64]| -> Vec<f64> {
        let key: Vec<bool> = z.iter().map(|&v| v == 1.0).collect();
        if let Some(p) = cache.borrow().get(&key) {
            return p.clone();
        }
        let mut x = data.features.clone();
        for (j, &keep) in key.iter().enumerate() {
            if !keep {
                for i in 0..n {
                    x.set(i, j, means[j]);
                }
            }
        }
        let p = model.predict(&data.adjacency, &x).unwrap_or_else(|_| vec![f64::NAN; n]);
        cache.borrow_mut().insert(key, p.clone());
        p
    };
    let present = vec![1.0; d];
    let absent = vec![vec![0.0; d]];
    let mc_seed = derive_seed(seed, &[0]);
    let mut acc = vec![0.0; d];
    for i in 0..n {
        let f = |z: &[f64]| outputs(z)[i];
        let s = if d <= MAX_EXACT_FEATURES {
            shapley_exact(&f, &present, &absent)?
        } else {
            shapley_mc(&f, &present, &absent, SHAPLEY_PERMUTATIONS, mc_seed)?
        };
        for (a, v) in acc.iter_mut().zip(&s.values) {
            *a += v.abs();
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("Shapley values are not finite".into()));
    }
    Ok(acc.into_iter().map(|v| v / n as f64).collect())
}

fn cmd_baseline(ctx: &Ctx, a: &BaselineArgs) -> Result<()> {
    let cfg = ctx.optional_config()?;
    let seed = ctx.seed(cfg.as_ref());
    let (edges, graph) = match (&a.bundle, &a.edges) {
        (Some(_), Some(_)) => return Err(CliError::input("give --bundle or --edges, not both")),
        (Some(b), None) => {
            let b = GraphBundle::load(b)?;
            (b.edge_table()?, b.graph()?)
        }
        (None, Some(e)) => {
            let t = EdgeTable::load(e)?;
            let g = t.to_graph(&[])?;
            (t, g)
        }
        (None, None) => {
            let c = cfg.as_ref().ok_or_else(|| CliError::input("baseline needs --bundle, --edges, or a config"))?;
            let src = Sources::load(c)?;
            let g = src.edges.to_graph(&[])?;
            (src.edges, g)
        }
    };
    let coeffs = cfg.as_ref().map(|c| c.coefficients()).transpose()?.unwrap_or_default();
    let weights: Vec<f64> = match edges.weight_lookup() {
        Some(_) => edges.rows.iter().map(|r| r.weight.expect("weight column present")).collect(),
        None => graph.weights(&coeffs)?,
    };
    let routing = RoutingGraph::new(&graph, &weights)?;
    let node = |flag: &str, id: &Option<String>| -> Result<Option<usize>> {
        id.as_deref()
            .map(|s| graph.node_index(s).ok_or_else(|| CliError::input(format!("--{flag}: unknown node {s:?}"))))
            .transpose()
    };
    let (src, dst) = (node("source", &a.source)?, node("target", &a.target)?);
    let n = graph.node_count();
    let sources: Vec<usize> = src.map(|s| vec![s]).unwrap_or_else(|| (0..n).collect());
    let targets: Vec<usize> = dst.map(|t| vec![t]).unwrap_or_else(|| (0..n).collect());

    let mut found: Vec<(usize, usize, PathResult)> = Vec::new();
    match a.algo {
        Algo::Dijkstra => {
            for &s in &sources {
                let all = dijkstra(&routing, s)?;
                for &t in &targets {
                    found.push((s, t, all[t].clone()));
                }
            }
        }
        Algo::Floyd => {
            let dm = floyd_warshall(&routing);
            for &s in &sources {
                for &t in &targets {
                    found.push((s, t, dm.path(s, t)));
                }
            }
        }
        Algo::Ga => {
            let (Some(s), Some(t)) = (src, dst) else {
                return Err(CliError::input("--algo ga needs --source and --target"));
            };
            let ga = GaConfig {
                population: a.population,
                generations: a.generations,
                mutation_rate: a.mutation_rate,
                crossover_rate: a.crossover_rate,
                seed,
            };
            found.push((s, t, ga_route(&routing, s, t, &ga)?));
        }
    }

    let ids = graph.node_ids();
    let mut t = Table::new(&["source", "target", "cost", "path"]);
    for (s, d, p) in &found {
        t.push(vec![
            ids[*s].clone(),
            ids[*d].clone(),
            fmt(p.cost),
            p.nodes.iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>().join("|"),
        ]);
    }
    let out = ctx.out_dir(cfg.as_ref())?;
    t.write(&out.join("paths.csv"))?;
    if let [(s, d, p)] = found.as_slice() {
        ctx.say(format!("{} -> {}: cost {}", ids[*s], ids[*d], p.cost));
    } else {
        ctx.say(format!("{} paths written to {}", found.len(), out.join("paths.csv").display()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kanflow_core::graph::reference_network;

    #[test]
    fn every_command_parses_help() {
        for cmd in ["gen", "ingest", "train", "evaluate", "sweep", "features", "baseline"] {
            let err = Cli::try_parse_from(["kanflow", cmd, "--help"]).unwrap_err();
            assert!(!err.use_stderr(), "{cmd}");
        }
    }

    #[test]
    fn unknown_flags_and_values_rejected() {
        assert!(Cli::try_parse_from(["kanflow", "train", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["kanflow", "baseline", "--algo", "astar"]).is_err());
        let c = Cli::try_parse_from(["kanflow", "sweep", "--grids", "1,2", "--orders", "3", "--seed", "4"]).unwrap();
        assert_eq!(c.seed, Some(4));
        let Command::Sweep(s) = c.command else { panic!() };
        assert_eq!((s.grids, s.orders), (vec![1, 2], vec![3]));
    }

    #[test]
    fn edge_spec_splitting() {
        let (g, _) = reference_network();
        assert_eq!(split_edge("V1-V5", &g).unwrap(), (0, 4));
        assert!(split_edge("V1-V9", &g).is_err());
        assert!(split_edge("V1V5", &g).is_err());
        let attrs = g.edges()[0].attrs;
        let dashed = TrafficGraph::from_labelled(&[("a-b", "c", attrs), ("a", "b-c", attrs)]).unwrap();
        assert_eq!(split_edge("a-b-c", &dashed).unwrap_err().exit_code(), 2);
    }
}
