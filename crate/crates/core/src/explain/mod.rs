//! Attribution and natural-language explanation of predictions.
//!
//! [`ig`] scores every input coordinate of a graph with Integrated
//! Gradients, [`gen`] turns the top scores into prompts, [`llm`] sends them
//! to a chat-completion endpoint and [`report`] assembles the result.

pub mod gen;
pub mod ig;
pub mod llm;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::graph::HeteroGraph;
use crate::model::TrainedModel;
use crate::temporal::extended_feature_names;
use crate::{Error, Result, TrafficClass};
use gen::{build_flow_query, build_payload_query, payload_to_ascii, rank_flow_features, PromptParts};
use ig::{completeness_check, integrated_gradients, AttributionRequest, ClassLogProb};
use llm::LlmClient;
use report::{compose_explanation, AttributionReport, ExplanationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub steps: usize,
    /// Path points per forward/backward batch.
    pub chunk: usize,
    pub prompts: PromptParts,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            steps: ig::DEFAULT_STEPS,
            chunk: 32,
            prompts: PromptParts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attributed {
    pub prediction: TrafficClass,
    pub probabilities: Vec<f64>,
    pub report: AttributionReport,
}

/// Attributes the model's predicted class for one graph against the zero
/// baseline in normalized input space.
pub fn attribute_graph(model: &TrainedModel, g: &HeteroGraph, cfg: &ExplainConfig) -> Result<Attributed> {
    let (prediction, probabilities) = model.predict(g)?;
    let req = AttributionRequest {
        input: model.sample(g)?,
        baseline: None,
        steps: cfg.steps,
        target: prediction.index(),
    };
    let field = ClassLogProb {
        params: &model.params,
        target: prediction.index(),
    };
    let att = integrated_gradients(&field, &req, cfg.chunk)?;
    let check = completeness_check(&att, att.f_input, att.f_baseline);
    if !check.pass {
        log::warn!(
            "flow {}: completeness gap {:.3e} exceeds tolerance {:.3e} at {} steps",
            g.id,
            check.gap,
            check.tolerance,
            cfg.steps
        );
    }
    let names = extended_feature_names();
    let scores: Vec<f64> = att.flow.to_vec();
    let top = rank_flow_features(&scores, &g.flow_features, &names, cfg.prompts.n_top);
    Ok(Attributed {
        prediction,
        probabilities,
        report: AttributionReport::new(g, &att, check, top),
    })
}

/// Flow query and, for payload-specific classes, the payload query.
pub fn build_queries(a: &Attributed, g: &HeteroGraph, parts: &PromptParts) -> Result<(String, Option<String>)> {
    let flow = build_flow_query(parts, a.prediction, &a.report.top_flow_features);
    let payload = if parts.is_payload_class(a.prediction) {
        let ascii = payload_to_ascii(&a.report.payload_scores, &g.payloads, parts.n_packets);
        Some(build_payload_query(parts, a.prediction, &ascii)?)
    } else {
        None
    };
    Ok((flow, payload))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub attribution: AttributionReport,
    pub report: ExplanationReport,
}

pub fn explain_graph(
    model: &TrainedModel,
    g: &HeteroGraph,
    client: &LlmClient,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    let a = attribute_graph(model, g, cfg)?;
    let (flow_q, payload_q) = build_queries(&a, g, &cfg.prompts)?;
    let flow_r = client.query(&flow_q).map_err(Error::from)?;
    let payload = match payload_q {
        Some(q) => {
            let r = client.query(&q)?;
            Some((q, r))
        }
        None => None,
    };
    let report = compose_explanation(
        &g.id,
        a.prediction,
        &a.probabilities,
        &cfg.prompts,
        (flow_q, flow_r),
        payload,
    )?;
    Ok(Explanation {
        attribution: a.report,
        report,
    })
}
