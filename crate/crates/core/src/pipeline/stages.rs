//! The individual pipeline stages as plain functions over in-memory data,
//! plus the artifact formats they exchange.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labeling::{filter_and_label, LabelCounts, LabelingConfig};
use super::metrics::{evaluate, EvalReport};
use super::split::{split_and_balance, ClassSplit, SplitPlan};
use crate::explain::llm::LlmClient;
use crate::explain::{explain_graph, ExplainConfig, Explanation};
use crate::flow::pcap::{list_captures, PcapStats};
use crate::flow::{parse_pcap, FlowAssembler, FlowConfig, FlowRecord};
use crate::graph::{build_graph, HeteroGraph};
use crate::model::TrainedModel;
use crate::temporal::{featurize_flows, FeaturizedFlow, TemporalConfig};
use crate::{Error, Result, TrafficClass};

pub const FLOW_KIND: &str = "flow";
pub const FEATURIZED_KIND: &str = "featurized_flow";
pub const PREDICTION_KIND: &str = "prediction";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub capture: String,
    pub pcap: PcapStats,
    pub flows: usize,
    pub late_packets: u64,
}

/// Capture files named directly, or every capture inside a directory.
pub fn resolve_captures(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_captures(p)?);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no capture files found".into()));
    }
    Ok(out)
}

fn capture_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Parses each capture and assembles its flows; flow ids are
/// `<file name>#<sequence>`.
pub fn extract(captures: &[PathBuf], cfg: &FlowConfig) -> Result<(Vec<FlowRecord>, Vec<CaptureStats>)> {
    let mut flows = Vec::new();
    let mut stats = Vec::new();
    for path in captures {
        let name = capture_name(path);
        let (packets, pcap) = parse_pcap(path)?;
        let mut asm = FlowAssembler::new(*cfg, name.clone());
        let mut got = Vec::new();
        for p in packets {
            asm.push(p);
            got.append(&mut asm.take_closed());
        }
        let late_packets = asm.late_packets();
        got.extend(asm.finish());
        log::info!("{name}: {} packets -> {} flows", pcap.accepted, got.len());
        stats.push(CaptureStats {
            capture: name,
            pcap,
            flows: got.len(),
            late_packets,
        });
        flows.extend(got);
    }
    Ok((flows, stats))
}

/// Temporal features are computed per capture, each capture being an
/// independent recording.
pub fn featurize(flows: Vec<FlowRecord>, cfg: &TemporalConfig) -> Result<Vec<FeaturizedFlow>> {
    let mut by_capture: BTreeMap<String, Vec<FlowRecord>> = BTreeMap::new();
    for f in flows {
        by_capture.entry(f.capture.clone().unwrap_or_default()).or_default().push(f);
    }
    let mut out = Vec::new();
    for (_, fs) in by_capture {
        out.extend(featurize_flows(fs, cfg)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub labeling: LabelCounts,
    pub classes: Vec<ClassSplit>,
    pub train: usize,
    pub test: usize,
}

pub struct PreparedDataset {
    pub train: Vec<FeaturizedFlow>,
    pub test: Vec<FeaturizedFlow>,
    pub summary: DatasetSummary,
}

pub fn prepare_dataset(
    flows: Vec<FeaturizedFlow>,
    labeling: &LabelingConfig,
    plan: &SplitPlan,
) -> Result<PreparedDataset> {
    labeling.validate()?;
    let labeled = filter_and_label(flows, labeling);
    log::info!(
        "labeling: {} attack, {} benign, {} dropped, {} quarantined",
        labeled.counts.retained_attack,
        labeled.counts.retained_benign,
        labeled.counts.dropped,
        labeled.counts.quarantined
    );
    let split = split_and_balance(labeled.retained, plan)?;
    Ok(PreparedDataset {
        summary: DatasetSummary {
            labeling: labeled.counts,
            classes: split.summary,
            train: split.train.len(),
            test: split.test.len(),
        },
        train: split.train,
        test: split.test,
    })
}

pub fn build_graphs(flows: &[FeaturizedFlow]) -> Result<Vec<HeteroGraph>> {
    flows
        .iter()
        .map(|f| {
            let mut g = build_graph(&f.flow, &f.extended)?;
            g.duplicate = f.duplicate;
            Ok(g)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: Option<TrafficClass>,
    pub predicted: TrafficClass,
    pub probabilities: Vec<f64>,
}

pub fn infer(model: &TrainedModel, graphs: &[HeteroGraph]) -> Result<Vec<PredictionRecord>> {
    let preds = model.predict_graphs(graphs)?;
    graphs
        .iter()
        .zip(preds)
        .map(|(g, p)| {
            let predicted = TrafficClass::from_index(p.class)
                .ok_or_else(|| Error::Shape(format!("model predicts class index {}", p.class)))?;
            Ok(PredictionRecord {
                id: g.id.clone(),
                label: g.label,
                predicted,
                probabilities: p.probabilities,
            })
        })
        .collect()
}

/// Metrics over predictions that carry a label.
pub fn evaluate_predictions(preds: &[PredictionRecord], payload_classes: &[TrafficClass]) -> Result<EvalReport> {
    let labeled: Vec<&PredictionRecord> = preds.iter().filter(|p| p.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("no labeled predictions to evaluate".into()));
    }
    let pred: Vec<usize> = labeled.iter().map(|p| p.predicted.index()).collect();
    let labels: Vec<usize> = labeled.iter().map(|p| p.label.unwrap().index()).collect();
    let payload: Vec<usize> = payload_classes.iter().map(|c| c.index()).collect();
    evaluate(&pred, &labels, &TrafficClass::names(), &payload)
}

/// Explains up to `limit` graphs, skipping oversampled duplicates.
pub fn explain_graphs(
    model: &TrainedModel,
    graphs: &[HeteroGraph],
    client: &LlmClient,
    cfg: &ExplainConfig,
    limit: usize,
) -> Result<Vec<Explanation>> {
    graphs
        .iter()
        .filter(|g| !g.duplicate)
        .take(limit)
        .map(|g| explain_graph(model, g, client, cfg))
        .collect()
}

/// File-system safe name for a flow id.
pub fn artifact_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
