//! Two-layer heterogeneous graph-attention classifier.
//!
//! Flow and packet features are projected to a common hidden width, passed
//! through two attention-convolution layers over four relations
//! (`contain`, its reverse `contained_by`, `link` and `link_rev`), pooled
//! per graph with a joint mean over all nodes and classified by a
//! three-layer dense head ending in log-softmax.

mod batch;
mod checkpoint;
mod forward;
mod train;


use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{GraphBatch, GraphSample, Normalizer};
pub use checkpoint::{TrainedModel, MODEL_FORMAT};
pub use forward::{
    forward, forward_detailed, input_gradients, predict_samples, AttentionTrace, InputGradient,
    Mode, Prediction,
};
pub use train::{
    fit, mean_loss, parameter_gradients, train, EpochLog, OptimizerKind, TrainConfig, TrainLog,
};

use crate::flow::PAYLOAD_LEN;
use crate::graph::{CONTAIN_FEATURE_COUNT, LINK_FEATURE_COUNT};
use crate::temporal::EXTENDED_FEATURE_COUNT;
use crate::{Error, Result, TrafficClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub flow_dim: usize,
    pub payload_dim: usize,
    pub contain_dim: usize,
    pub link_dim: usize,
    /// Width of input projections and of both attention layers' output.
    pub hidden: usize,
    pub layer1_heads: usize,
    pub layer2_heads: usize,
    /// Hidden widths of the dense head between pooling and the output.
    pub head_dims: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
    pub leaky_slope: f64,
    pub attention_slope: f64,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            flow_dim: EXTENDED_FEATURE_COUNT,
            payload_dim: PAYLOAD_LEN,
            contain_dim: CONTAIN_FEATURE_COUNT,
            link_dim: LINK_FEATURE_COUNT,
            hidden: 64,
            layer1_heads: 4,
            layer2_heads: 1,
            head_dims: vec![32, 16],
            classes: TrafficClass::COUNT,
            activation: Activation::LeakyRelu,
            leaky_slope: 0.01,
            attention_slope: 0.2,
            batch_norm: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("flow_dim", self.flow_dim),
            ("payload_dim", self.payload_dim),
            ("contain_dim", self.contain_dim),
            ("link_dim", self.link_dim),
            ("hidden", self.hidden),
            ("layer1_heads", self.layer1_heads),
            ("layer2_heads", self.layer2_heads),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.classes < 2 {
            return bad("at least two classes are required".into());
        }
        for h in [self.layer1_heads, self.layer2_heads] {
            if self.hidden % h != 0 {
                return bad(format!("hidden width {} is not divisible by {h} heads", self.hidden));
            }
        }
        if self.head_dims.iter().any(|d| *d == 0) {
            return bad("dense head widths must be positive".into());
        }
        Ok(())
    }

    pub fn heads(&self, layer: usize) -> usize {
        if layer == 1 {
            self.layer1_heads
        } else {
            self.layer2_heads
        }
    }

    fn activation_slope(&self) -> f64 {
        match self.activation {
            Activation::Relu => 0.0,
            Activation::LeakyRelu => self.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// flow -> packet
    Contain,
    /// packet -> flow
    ContainedBy,
    /// packet i -> packet i+1
    Link,
    /// packet i+1 -> packet i
    LinkRev,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::Contain,
        Relation::ContainedBy,
        Relation::Link,
        Relation::LinkRev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Contain => "contain",
            Relation::ContainedBy => "contained_by",
            Relation::Link => "link",
            Relation::LinkRev => "link_rev",
        }
    }

    fn edge_dim(self, cfg: &ModelConfig) -> usize {
        match self {
            Relation::Contain | Relation::ContainedBy => cfg.contain_dim,
            Relation::Link | Relation::LinkRev => cfg.link_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// All learnable tensors by name, plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Array2<f64>>,
    pub running: BTreeMap<String, RunningStats>,
}

pub(crate) const NODE_TYPES: [&str; 2] = ["flow", "packet"];

pub(crate) fn rel_key(layer: usize, rel: Relation, part: &str) -> String {
    format!("l{layer}.{}.{part}", rel.name())
}

pub(crate) fn type_key(layer: usize, ty: &str, part: &str) -> String {
    format!("l{layer}.{ty}.{part}")
}

impl ModelParams {
    /// Expected tensor shapes for a config, by name.
    pub fn shapes(cfg: &ModelConfig) -> BTreeMap<String, (usize, usize)> {
        let h = cfg.hidden;
        let mut s = BTreeMap::new();
        s.insert("proj.flow.w".into(), (cfg.flow_dim, h));
        s.insert("proj.flow.b".into(), (1, h));
        s.insert("proj.packet.w".into(), (cfg.payload_dim, h));
        s.insert("proj.packet.b".into(), (1, h));
        for layer in 1..=2 {
            for rel in Relation::ALL {
                s.insert(rel_key(layer, rel, "w"), (h, h));
                s.insert(rel_key(layer, rel, "we"), (rel.edge_dim(cfg), h));
                for part in ["att_src", "att_dst", "att_edge"] {
                    s.insert(rel_key(layer, rel, part), (1, h));
                }
            }
            for ty in NODE_TYPES {
                s.insert(type_key(layer, ty, "bias"), (1, h));
                if cfg.batch_norm {
                    s.insert(type_key(layer, ty, "bn.gamma"), (1, h));
                    s.insert(type_key(layer, ty, "bn.beta"), (1, h));
                }
            }
        }
        let mut prev = h;
        for (i, d) in cfg.head_dims.iter().chain(std::iter::once(&cfg.classes)).enumerate() {
            s.insert(format!("head.w{i}"), (prev, *d));
            s.insert(format!("head.b{i}"), (1, *d));
            prev = *d;
        }
        s
    }

    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, (r, c)) in Self::shapes(cfg) {
            let is_bias = name.ends_with(".b")
                || name.starts_with("head.b")
                || name.ends_with(".bias")
                || name.ends_with("bn.beta");
            let t = if is_bias {
                Array2::zeros((r, c))
            } else if name.ends_with("bn.gamma") {
                Array2::ones((r, c))
            } else {
                let limit = (6.0 / (r + c) as f64).sqrt();
                Array2::from_shape_fn((r, c), |_| rng.gen_range(-limit..limit))
            };
            tensors.insert(name, t);
        }
        let mut running = BTreeMap::new();
        if cfg.batch_norm {
            for layer in 1..=2 {
                for ty in NODE_TYPES {
                    running.insert(
                        type_key(layer, ty, "bn"),
                        RunningStats {
                            mean: Array1::zeros(cfg.hidden),
                            var: Array1::ones(cfg.hidden),
                        },
                    );
                }
            }
        }
        Ok(Self {
            config: cfg.clone(),
            tensors,
            running,
        })
    }

    pub fn tensor(&self, name: &str) -> &Array2<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor {name}"))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Shape and finiteness check against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = Self::shapes(&self.config);
        if shapes.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, dim) in shapes {
            match self.tensors.get(&name) {
                Some(t) if t.dim() == dim => {
                    if t.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Shape(format!("parameter {name} is not finite")));
                    }
                }
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "parameter {name} has shape {:?}, expected {dim:?}",
                        t.dim()
                    )))
                }
                None => return Err(Error::Shape(format!("parameter {name} missing"))),
            }
        }
        for (name, r) in &self.running {
            if r.var.iter().any(|v| !(*v > 0.0)) || r.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("running stats {name} invalid")));
            }
        }
        Ok(())
    }
}
