//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kanflow_core::gcn::{Activation, LossConfig, ModelKind, ModelSpec};
use kanflow_core::graph::WeightCoefficients;
use kanflow_core::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub loss: LossSection,
    pub weights: WeightsSection,
    pub preprocess: PreprocessSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    /// Node-table column holding the regression target.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: String,
    pub hidden: Vec<usize>,
    pub grid_size: usize,
    pub spline_order: usize,
    pub activation: String,
    pub add_self_loops: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub decay: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    /// Replace per-column z-score outliers with a rolling mean over node order.
    pub smooth_outliers: bool,
    pub zscore_threshold: f64,
    pub smoothing_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            weights: WeightsSection::default(),
            preprocess: PreprocessSection::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            edges: None,
            nodes: None,
            bundle: None,
            target: "target".to_string(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        Self {
            kind: spec.kind.name().to_string(),
            hidden: spec.hidden,
            grid_size: spec.grid_size,
            spline_order: spec.order,
            activation: spec.activation.name().to_string(),
            add_self_loops: false,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            folds: t.folds,
            decay: t.decay,
            patience: t.patience,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            lambda1: l.lambda1(),
            lambda2: l.lambda2(),
        }
    }
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = WeightCoefficients::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            delta: w.delta,
        }
    }
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            smooth_outliers: false,
            zscore_threshold: kanflow_core::preprocess::ZSCORE_THRESHOLD,
            smoothing_window: kanflow_core::preprocess::DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::input(format!("config field `{name}`: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::input(format!("{source}: {e}")))
    }

    /// Reads, resolves relative paths against the file's directory, and
    /// validates every field and referenced path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.edges, &mut self.data.nodes, &mut self.data.bundle, &mut self.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn check_paths(&self) -> Result<()> {
        for (name, p) in [
            ("data.edges", &self.data.edges),
            ("data.nodes", &self.data.nodes),
            ("data.bundle", &self.data.bundle),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(field(name, format!("file not found: {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.bundle.is_some() && (self.data.edges.is_some() || self.data.nodes.is_some()) {
            return Err(field("data.bundle", "give either a bundle or edge/node tables, not both"));
        }
        if self.data.target.trim().is_empty() {
            return Err(field("data.target", "must name a node-table column"));
        }
        self.model_spec()?;
        self.train_config()?;
        self.coefficients()?;
        let p = &self.preprocess;
        if !(p.zscore_threshold > 0.0 && p.zscore_threshold.is_finite()) {
            return Err(field("preprocess.zscore_threshold", "must be positive"));
        }
        if p.smoothing_window == 0 {
            return Err(field("preprocess.smoothing_window", "must be at least 1"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let kind = ModelKind::parse(&m.kind).ok_or_else(|| field("model.kind", format!("unknown kind {:?} (kan-gcn, gcn, mlp-gcn)", m.kind)))?;
        let activation = Activation::parse(&m.activation)
            .ok_or_else(|| field("model.activation", format!("unknown activation {:?} (relu, identity)", m.activation)))?;
        if m.hidden.is_empty() || m.hidden.contains(&0) {
            return Err(field("model.hidden", "needs at least one positive width"));
        }
        if m.grid_size == 0 {
            return Err(field("model.grid_size", "must be at least 1"));
        }
        Ok(ModelSpec {
            kind,
            hidden: m.hidden.clone(),
            grid_size: m.grid_size,
            order: m.spline_order,
            activation,
        })
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.loss.lambda1, self.loss.lambda2).map_err(|e| field("loss", e))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            folds: t.folds,
            seed: self.seed,
            decay: t.decay,
            patience: t.patience,
            loss: self.loss_config()?,
        };
        cfg.validate().map_err(|e| field("train", e))?;
        Ok(cfg)
    }

    pub fn coefficients(&self) -> Result<WeightCoefficients> {
        let w = &self.weights;
        let c = WeightCoefficients {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            delta: w.delta,
        };
        for (name, v) in [("alpha", c.alpha), ("beta", c.beta), ("gamma", c.gamma), ("delta", c.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(&format!("weights.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
