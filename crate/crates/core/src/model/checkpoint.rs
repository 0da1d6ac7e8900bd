use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forward::{input_gradients, predict_samples, InputGradient, Prediction};
use super::{GraphSample, ModelParams, Normalizer, TrainConfig, TrainLog};
use crate::graph::HeteroGraph;
use crate::{Error, Result, TrafficClass, SCHEMA_VERSION};

pub const MODEL_FORMAT: &str = "hetnid-model/1";

/// Checkpoint container: parameters plus everything needed to feed raw
/// graphs to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub schema_version: String,
    pub class_names: Vec<String>,
    pub params: ModelParams,
    pub normalizer: Normalizer,
    pub train_config: TrainConfig,
    pub train_log: Option<TrainLog>,
}

impl TrainedModel {
    pub fn new(params: ModelParams, normalizer: Normalizer, train_config: TrainConfig) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            schema_version: SCHEMA_VERSION.into(),
            class_names: TrafficClass::names(),
            params,
            normalizer,
            train_config,
            train_log: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let data = serde_json::to_vec(self)?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: TrainedModel = serde_json::from_slice(&data)?;
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Schema {
                expected: MODEL_FORMAT.into(),
                found: self.format.clone(),
            });
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                expected: SCHEMA_VERSION.into(),
                found: self.schema_version.clone(),
            });
        }
        self.params.validate()
    }

    pub fn sample(&self, g: &HeteroGraph) -> Result<GraphSample> {
        self.normalizer.apply(g)
    }

    pub fn predict_graphs(&self, graphs: &[HeteroGraph]) -> Result<Vec<Prediction>> {
        let samples = graphs.iter().map(|g| self.sample(g)).collect::<Result<Vec<_>>>()?;
        predict_samples(&self.params, &samples, self.train_config.eval_batch_size)
    }

    pub fn predict(&self, g: &HeteroGraph) -> Result<(TrafficClass, Vec<f64>)> {
        let p = self.predict_graphs(std::slice::from_ref(g))?.remove(0);
        let class = TrafficClass::from_index(p.class)
            .ok_or_else(|| Error::Shape(format!("model predicts class index {}", p.class)))?;
        Ok((class, p.probabilities))
    }

    pub fn input_gradient(&self, g: &HeteroGraph, target: TrafficClass) -> Result<InputGradient> {
        let s = self.sample(g)?;
        Ok(input_gradients(&self.params, &[s], target.index())?.remove(0).1)
    }
}
