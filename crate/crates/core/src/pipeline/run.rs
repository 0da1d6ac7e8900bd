//! Config-driven orchestration with a content-hash manifest.
//!
//! Each stage records the hashes of its inputs and outputs together with a
//! hash of the config sections it depends on. A stage is skipped when all
//! of these still match; otherwise it runs, and a failing stage has its
//! partial outputs moved to `quarantine/`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::labeling::LabelingConfig;
use super::split::SplitPlan;
use super::stages::{self, artifact_name, CaptureStats, FEATURIZED_KIND, FLOW_KIND, PREDICTION_KIND};
use crate::explain::llm::{EndpointConfig, LlmClient};
use crate::explain::ExplainConfig;
use crate::flow::{FlowConfig, FlowRecord};
use crate::graph::codec::{read_corpus, write_corpus};
use crate::io::{read_jsonl, write_jsonl};
use crate::model::{train, ModelConfig, TrainConfig, TrainedModel};
use crate::temporal::{FeaturizedFlow, TemporalConfig};
use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainStageConfig {
    #[serde(flatten)]
    pub explain: ExplainConfig,
    /// Number of test graphs to explain.
    pub limit: usize,
}

impl Default for ExplainStageConfig {
    fn default() -> Self {
        Self {
            explain: ExplainConfig::default(),
            limit: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Capture files or directories of captures.
    pub captures: Vec<PathBuf>,
    pub work_dir: PathBuf,
    pub flow: FlowConfig,
    pub temporal: TemporalConfig,
    pub labeling: LabelingConfig,
    pub split: SplitPlan,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub explain: ExplainStageConfig,
    pub endpoint: EndpointConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            captures: vec![PathBuf::from("captures")],
            work_dir: PathBuf::from("work"),
            flow: FlowConfig::default(),
            temporal: TemporalConfig::default(),
            labeling: LabelingConfig::default(),
            split: SplitPlan::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainStageConfig::default(),
            endpoint: EndpointConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let abs = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.captures = cfg.captures.iter().map(|p| abs(p)).collect();
        cfg.work_dir = abs(&cfg.work_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Extract,
    Featurize,
    PrepareDataset,
    BuildGraphs,
    Train,
    Infer,
    Evaluate,
    Explain,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Extract,
        Stage::Featurize,
        Stage::PrepareDataset,
        Stage::BuildGraphs,
        Stage::Train,
        Stage::Infer,
        Stage::Evaluate,
        Stage::Explain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Featurize => "featurize",
            Stage::PrepareDataset => "prepare-dataset",
            Stage::BuildGraphs => "build-graphs",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Artifact locations inside the work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn flows(&self) -> PathBuf {
        self.root.join("flows.jsonl")
    }
    pub fn extract_stats(&self) -> PathBuf {
        self.root.join("extract_stats.json")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.jsonl")
    }
    pub fn train_flows(&self) -> PathBuf {
        self.root.join("dataset/train.jsonl")
    }
    pub fn test_flows(&self) -> PathBuf {
        self.root.join("dataset/test.jsonl")
    }
    pub fn dataset_summary(&self) -> PathBuf {
        self.root.join("dataset/summary.json")
    }
    pub fn train_graphs(&self) -> PathBuf {
        self.root.join("graphs/train.xgg")
    }
    pub fn test_graphs(&self) -> PathBuf {
        self.root.join("graphs/test.xgg")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model/model.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn eval_json(&self) -> PathBuf {
        self.root.join("reports/evaluation.json")
    }
    pub fn eval_md(&self) -> PathBuf {
        self.root.join("reports/evaluation.md")
    }
    pub fn explanations(&self) -> PathBuf {
        self.root.join("explanations")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn quarantine(&self) -> PathBuf {
        self.root.join("quarantine")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    /// A missing or unreadable manifest counts as empty.
    pub fn load(path: &Path) -> Self {
        std::fs::read(path)
            .ok()
            .and_then(|d| serde_json::from_slice::<Manifest>(&d).ok())
            .filter(|m| m.schema_version == SCHEMA_VERSION)
            .unwrap_or_default()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&data)))
}

fn sha256_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(v)?)))
}

/// Every file under `path` (or `path` itself), sorted.
fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    if path.is_dir() {
        for e in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            out.extend(files_under(&e.map_err(|e| Error::io(path, e))?.path())?);
        }
    }
    out.sort();
    Ok(out)
}

/// Hashes of every file under the given paths, keyed by path.
fn hash_paths(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        for f in files_under(p)? {
            out.insert(f.display().to_string(), sha256_file(&f)?);
        }
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub force: bool,
    /// Stop after this stage.
    pub until: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<(Stage, StageStatus)>,
}

impl RunSummary {
    pub fn status(&self, s: Stage) -> Option<StageStatus> {
        self.stages.iter().find(|(st, _)| *st == s).map(|(_, x)| *x)
    }
}

struct Plan {
    config_hash: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn plan(stage: Stage, cfg: &PipelineConfig, l: &Layout) -> Result<Plan> {
    let (config_hash, inputs, outputs) = match stage {
        Stage::Extract => (
            sha256_json(&cfg.flow)?,
            stages::resolve_captures(&cfg.captures)?,
            vec![l.flows(), l.extract_stats()],
        ),
        Stage::Featurize => (sha256_json(&cfg.temporal)?, vec![l.flows()], vec![l.features()]),
        Stage::PrepareDataset => (
            sha256_json(&(&cfg.labeling, &cfg.split))?,
            vec![l.features()],
            vec![l.train_flows(), l.test_flows(), l.dataset_summary()],
        ),
        Stage::BuildGraphs => (
            sha256_json(&())?,
            vec![l.train_flows(), l.test_flows()],
            vec![l.train_graphs(), l.test_graphs()],
        ),
        Stage::Train => (
            sha256_json(&(&cfg.model, &cfg.train))?,
            vec![l.train_graphs()],
            vec![l.model()],
        ),
        Stage::Infer => (sha256_json(&())?, vec![l.model(), l.test_graphs()], vec![l.predictions()]),
        Stage::Evaluate => (
            sha256_json(&cfg.explain.explain.prompts.payload_classes)?,
            vec![l.predictions()],
            vec![l.eval_json(), l.eval_md()],
        ),
        Stage::Explain => (
            sha256_json(&(&cfg.explain, &cfg.endpoint))?,
            vec![l.model(), l.test_graphs()],
            vec![l.explanations()],
        ),
    };
    Ok(Plan {
        config_hash,
        inputs,
        outputs,
    })
}

fn up_to_date(rec: &StageRecord, p: &Plan) -> Result<bool> {
    if rec.config_hash != p.config_hash {
        return Ok(false);
    }
    if p.outputs.iter().any(|o| !o.exists()) {
        return Ok(false);
    }
    Ok(hash_paths(&p.inputs)? == rec.inputs && hash_paths(&p.outputs)? == rec.outputs)
}

fn execute(stage: Stage, cfg: &PipelineConfig, l: &Layout, inputs: &[PathBuf]) -> Result<()> {
    match stage {
        Stage::Extract => {
            let (flows, stats): (Vec<FlowRecord>, Vec<CaptureStats>) = stages::extract(inputs, &cfg.flow)?;
            write_jsonl(&l.flows(), FLOW_KIND, &flows)?;
            write_json(&l.extract_stats(), &stats)
        }
        Stage::Featurize => {
            let flows: Vec<FlowRecord> = read_jsonl(&l.flows(), FLOW_KIND)?;
            let feats = stages::featurize(flows, &cfg.temporal)?;
            write_jsonl(&l.features(), FEATURIZED_KIND, &feats).map(|_| ())
        }
        Stage::PrepareDataset => {
            let feats: Vec<FeaturizedFlow> = read_jsonl(&l.features(), FEATURIZED_KIND)?;
            let ds = stages::prepare_dataset(feats, &cfg.labeling, &cfg.split)?;
            write_jsonl(&l.train_flows(), FEATURIZED_KIND, &ds.train)?;
            write_jsonl(&l.test_flows(), FEATURIZED_KIND, &ds.test)?;
            write_json(&l.dataset_summary(), &ds.summary)
        }
        Stage::BuildGraphs => {
            for (src, dst) in [(l.train_flows(), l.train_graphs()), (l.test_flows(), l.test_graphs())] {
                let feats: Vec<FeaturizedFlow> = read_jsonl(&src, FEATURIZED_KIND)?;
                write_corpus(&dst, &stages::build_graphs(&feats)?)?;
            }
            Ok(())
        }
        Stage::Train => {
            let graphs = read_corpus(&l.train_graphs())?;
            let (model, _) = train(&graphs, &cfg.model, &cfg.train)?;
            model.save(&l.model())
        }
        Stage::Infer => {
            let model = TrainedModel::load(&l.model())?;
            let graphs = read_corpus(&l.test_graphs())?;
            let preds = stages::infer(&model, &graphs)?;
            write_jsonl(&l.predictions(), PREDICTION_KIND, &preds).map(|_| ())
        }
        Stage::Evaluate => {
            let preds: Vec<stages::PredictionRecord> = read_jsonl(&l.predictions(), PREDICTION_KIND)?;
            let report = stages::evaluate_predictions(&preds, &cfg.explain.explain.prompts.payload_classes)?;
            write_json(&l.eval_json(), &report)?;
            write_text(&l.eval_md(), &report.to_markdown())
        }
        Stage::Explain => {
            let model = TrainedModel::load(&l.model())?;
            let graphs = read_corpus(&l.test_graphs())?;
            let client = LlmClient::new(cfg.endpoint.clone())?;
            let ex = stages::explain_graphs(&model, &graphs, &client, &cfg.explain.explain, cfg.explain.limit)?;
            let dir = l.explanations();
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for e in &ex {
                let name = artifact_name(&e.report.flow_id);
                write_json(&dir.join(format!("{name}.json")), e)?;
                write_text(
                    &dir.join(format!("{name}.md")),
                    &format!("{}\n{}", e.report.to_markdown(), e.attribution.to_markdown()),
                )?;
            }
            Ok(())
        }
    }
}

fn quarantine(stage: Stage, outputs: &[PathBuf], l: &Layout) -> Result<Option<PathBuf>> {
    let present: Vec<&PathBuf> = outputs.iter().filter(|p| p.exists()).collect();
    if present.is_empty() {
        return Ok(None);
    }
    let base = l.quarantine();
    let mut n = 0;
    let dir = loop {
        let d = base.join(format!("{stage}-{n}"));
        if !d.exists() {
            break d;
        }
        n += 1;
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for p in present {
        let name = p.file_name().map(|s| s.to_owned()).unwrap_or_default();
        std::fs::rename(p, dir.join(name)).map_err(|e| Error::io(p, e))?;
    }
    Ok(Some(dir))
}

pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunSummary> {
    let l = Layout::new(&cfg.work_dir);
    std::fs::create_dir_all(&l.root).map_err(|e| Error::io(&l.root, e))?;
    let mut manifest = Manifest::load(&l.manifest());
    let mut summary = RunSummary { stages: Vec::new() };
    for stage in Stage::ALL {
        let p = plan(stage, cfg, &l).map_err(|e| Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        })?;
        let fresh = !opts.force
            && match manifest.stages.get(&stage) {
                Some(rec) => up_to_date(rec, &p)?,
                None => false,
            };
        if fresh {
            log::info!("{stage}: up to date");
            summary.stages.push((stage, StageStatus::Skipped));
        } else {
            log::info!("{stage}: running");
            manifest.stages.remove(&stage);
            manifest.save(&l.manifest())?;
            let run = hash_paths(&p.inputs).and_then(|inputs| {
                execute(stage, cfg, &l, &p.inputs)?;
                Ok(inputs)
            });
            match run {
                Ok(inputs) => {
                    manifest.stages.insert(
                        stage,
                        StageRecord {
                            config_hash: p.config_hash.clone(),
                            inputs,
                            outputs: hash_paths(&p.outputs)?,
                        },
                    );
                    manifest.save(&l.manifest())?;
                    summary.stages.push((stage, StageStatus::Ran));
                }
                Err(e) => {
                    if let Some(dir) = quarantine(stage, &p.outputs, &l)? {
                        log::error!("{stage}: partial outputs moved to {}", dir.display());
                    }
                    return Err(Error::Stage {
                        stage: stage.name().into(),
                        source: Box::new(e),
                    });
                }
            }
        }
        if opts.until == Some(stage) {
            break;
        }
    }
    Ok(summary)
}
