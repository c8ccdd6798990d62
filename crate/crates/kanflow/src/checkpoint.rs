//! Trained-model checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use kanflow_core::gcn::{Activation, GcnLayer, LayerKind, ModelBundle, ModelLayer, Readout};
use kanflow_core::kan::{KanLayer, SplineGrid};
use kanflow_core::preprocess::ScalerParams;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::num::{MatrixDoc, Num};

pub const CHECKPOINT_FORMAT: &str = "kanflow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "lowercase")]
pub enum LayerDoc {
    Gcn {
        aggregate: bool,
        activation: String,
        weight: MatrixDoc,
    },
    Kan {
        aggregate: bool,
        grid_size: usize,
        order: usize,
        lo: Num,
        hi: Num,
        coeffs: MatrixDoc,
        base_weight: MatrixDoc,
        spline_weight: MatrixDoc,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutDoc {
    pub weight: MatrixDoc,
    pub bias: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalerDoc {
    pub name: String,
    pub min: Num,
    pub max: Num,
}

impl ScalerDoc {
    pub fn new(name: &str, p: ScalerParams) -> Self {
        Self {
            name: name.to_string(),
            min: Num(p.min),
            max: Num(p.max),
        }
    }

    pub fn params(&self) -> ScalerParams {
        ScalerParams {
            min: self.min.0,
            max: self.max.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Cross-validation fold the model was trained on.
    pub fold: usize,
    pub layers: Vec<LayerDoc>,
    pub readout: ReadoutDoc,
    pub features: Vec<ScalerDoc>,
    pub target: ScalerDoc,
    pub config: RunConfig,
}

impl LayerDoc {
    fn from_layer(l: &ModelLayer) -> Self {
        match &l.kind {
            LayerKind::Gcn(g) => LayerDoc::Gcn {
                aggregate: l.aggregate,
                activation: g.activation.name().to_string(),
                weight: (&g.weight).into(),
            },
            LayerKind::Kan(k) => {
                let (lo, hi) = k.grid().domain();
                LayerDoc::Kan {
                    aggregate: l.aggregate,
                    grid_size: k.grid().grid_size(),
                    order: k.grid().order(),
                    lo: Num(lo),
                    hi: Num(hi),
                    coeffs: (&k.coeffs).into(),
                    base_weight: (&k.base_weight).into(),
                    spline_weight: (&k.spline_weight).into(),
                }
            }
        }
    }

    fn to_layer(&self) -> Result<ModelLayer> {
        Ok(match self {
            LayerDoc::Gcn {
                aggregate,
                activation,
                weight,
            } => ModelLayer {
                aggregate: *aggregate,
                kind: LayerKind::Gcn(GcnLayer {
                    weight: weight.to_tensor()?,
                    activation: Activation::parse(activation)
                        .ok_or_else(|| CliError::input(format!("unknown activation {activation:?}")))?,
                }),
            },
            LayerDoc::Kan {
                aggregate,
                grid_size,
                order,
                lo,
                hi,
                coeffs,
                base_weight,
                spline_weight,
            } => {
                let grid = SplineGrid::new(*grid_size, *order, lo.0, hi.0)?;
                ModelLayer {
                    aggregate: *aggregate,
                    kind: LayerKind::Kan(KanLayer::from_parts(
                        grid,
                        coeffs.to_tensor()?,
                        base_weight.to_tensor()?,
                        spline_weight.to_tensor()?,
                    )?),
                }
            }
        })
    }
}

impl Checkpoint {
    pub fn new(
        model: &ModelBundle,
        seed: u64,
        fold: usize,
        features: Vec<ScalerDoc>,
        target: ScalerDoc,
        config: RunConfig,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            fold,
            layers: model.layers().iter().map(LayerDoc::from_layer).collect(),
            readout: ReadoutDoc {
                weight: (&model.readout().weight).into(),
                bias: (&model.readout().bias).into(),
            },
            features,
            target,
            config,
        }
    }

    pub fn to_model(&self) -> Result<ModelBundle> {
        let layers = self.layers.iter().map(LayerDoc::to_layer).collect::<Result<Vec<_>>>()?;
        let readout = Readout {
            weight: self.readout.weight.to_tensor()?,
            bias: self.readout.bias.to_tensor()?,
        };
        let model = ModelBundle::new(layers, readout)?;
        if model.input_dim() != self.features.len() {
            return Err(CliError::input(format!(
                "checkpoint model expects {} features but lists {} scalers",
                model.input_dim(),
                self.features.len()
            )));
        }
        Ok(model)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| CliError::input(format!("{source}: {e}")))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(CliError::input(format!(
                "{source}: expected {CHECKPOINT_FORMAT} version {CHECKPOINT_VERSION}, found {} version {}",
                c.format, c.version
            )));
        }
        c.to_model().map_err(|e| e.context(source))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kanflow_core::gcn::{ModelKind, ModelSpec};
    use kanflow_core::Tensor;

    fn adj() -> Tensor {
        Tensor::from_rows(&[[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]).unwrap()
    }

    #[test]
    fn forward_outputs_survive_round_trip_bit_exactly() {
        let x = Tensor::from_rows(&[[0.1, -0.7], [0.9, 0.3], [-1.0, 0.25]]).unwrap();
        for kind in [ModelKind::KanGcn, ModelKind::Gcn, ModelKind::MlpGcn] {
            let spec = ModelSpec {
                kind,
                hidden: vec![4, 3],
                grid_size: 3,
                order: 2,
                ..ModelSpec::default()
            };
            let model = spec.build(2, 11).unwrap();
            let feats = vec![
                ScalerDoc::new("a", ScalerParams { min: 0.0, max: 1.0 }),
                ScalerDoc::new("b", ScalerParams { min: -1.0, max: 3.0 }),
            ];
            let ck = Checkpoint::new(&model, 11, 2, feats, ScalerDoc::new("target", ScalerParams { min: 1.0, max: 9.0 }), RunConfig::default());
            let back = Checkpoint::from_json(&ck.to_json(), "t").unwrap();
            assert_eq!(back, ck);
            let m2 = back.to_model().unwrap();
            assert_eq!(m2, model);
            let a = model.predict(&adj(), &x).unwrap();
            let b = m2.predict(&adj(), &x).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()), "{kind:?}");
        }
    }

    #[test]
    fn scaler_count_must_match_model() {
        let model = ModelSpec::default().build(3, 0).unwrap();
        let ck = Checkpoint::new(&model, 0, 0, vec![], ScalerDoc::new("target", ScalerParams { min: 0.0, max: 1.0 }), RunConfig::default());
        let err = Checkpoint::from_json(&ck.to_json(), "t").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
