use serde::{Deserialize, Serialize};

use super::gen::{format_value, PromptParts, RankedFeature};
use super::ig::{Attribution, CompletenessCheck};
use super::llm::{LlmResponse, SYSTEM_PROMPT_VERSION};
use crate::graph::{HeteroGraph, CONTAIN_FEATURE_NAMES};
use crate::temporal::extended_feature_names;
use crate::{Error, Result, TrafficClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub class: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmMetadata {
    pub model: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub offline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub flow_id: String,
    pub prediction: String,
    pub probabilities: Vec<ClassProbability>,
    pub flow_query: String,
    pub flow_response: String,
    pub payload_query: Option<String>,
    pub payload_response: Option<String>,
    /// Flow response followed by the payload response, if any.
    pub explanation: String,
    pub llm: LlmMetadata,
    pub prompt_version: String,
    pub system_prompt_version: String,
}

/// Payload parts must be given exactly when `pred` is payload-specific.
pub fn compose_explanation(
    flow_id: &str,
    pred: TrafficClass,
    probabilities: &[f64],
    parts: &PromptParts,
    flow: (String, LlmResponse),
    payload: Option<(String, LlmResponse)>,
) -> Result<ExplanationReport> {
    if parts.is_payload_class(pred) != payload.is_some() {
        return Err(Error::InvalidArgument(format!(
            "payload section for {pred} must be {}",
            if parts.is_payload_class(pred) { "present" } else { "absent" }
        )));
    }
    let (flow_query, flow_resp) = flow;
    let mut explanation = flow_resp.text.clone();
    let mut llm = LlmMetadata {
        model: flow_resp.model.clone(),
        latency_ms: flow_resp.latency_ms,
        attempts: flow_resp.attempts,
        offline: flow_resp.offline,
    };
    let (payload_query, payload_response) = match payload {
        Some((q, r)) => {
            explanation.push_str("\n\n");
            explanation.push_str(&r.text);
            llm.latency_ms += r.latency_ms;
            llm.attempts += r.attempts;
            llm.offline |= r.offline;
            (Some(q), Some(r.text))
        }
        None => (None, None),
    };
    Ok(ExplanationReport {
        flow_id: flow_id.into(),
        prediction: pred.name().into(),
        probabilities: TrafficClass::ALL
            .iter()
            .zip(probabilities)
            .map(|(c, p)| ClassProbability {
                class: c.name().into(),
                probability: *p,
            })
            .collect(),
        flow_query,
        flow_response: flow_resp.text,
        payload_query,
        payload_response,
        explanation,
        llm,
        prompt_version: parts.version.clone(),
        system_prompt_version: SYSTEM_PROMPT_VERSION.into(),
    })
}

fn quote(s: &str) -> String {
    s.lines().map(|l| format!("> {l}\n")).collect()
}

impl ExplanationReport {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("# Flow {}\n\nPredicted class: **{}**\n\n", self.flow_id, self.prediction);
        s += "| Class | Probability |\n|---|---:|\n";
        for p in &self.probabilities {
            s += &format!("| {} | {:.4} |\n", p.class, p.probability);
        }
        s += &format!(
            "\nModel: {}{}, {} ms, {} attempt(s)\n\n## Flow query\n\n{}\n## Flow response\n\n{}\n",
            self.llm.model,
            if self.llm.offline { " (offline)" } else { "" },
            self.llm.latency_ms,
            self.llm.attempts,
            quote(&self.flow_query),
            self.flow_response
        );
        if let (Some(q), Some(r)) = (&self.payload_query, &self.payload_response) {
            s += &format!("\n## Payload query\n\n{}\n## Payload response\n\n{}\n", quote(q), r);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    /// Raw feature value before standardization.
    pub value: f64,
    pub score: f64,
}

/// Attribution scores keyed by the graph's feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub flow_id: String,
    pub target: String,
    pub steps: usize,
    pub f_input: f64,
    pub f_baseline: f64,
    pub completeness: CompletenessCheck,
    pub flow_features: Vec<FeatureScore>,
    pub top_flow_features: Vec<RankedFeature>,
    /// One 1500-vector per packet.
    pub payload_scores: Vec<Vec<f64>>,
    /// Per packet, in `contain` feature order.
    pub contain_scores: Vec<Vec<f64>>,
    pub link_scores: Vec<f64>,
}

impl AttributionReport {
    pub fn new(g: &HeteroGraph, att: &Attribution, check: CompletenessCheck, top: Vec<RankedFeature>) -> Self {
        let target = TrafficClass::from_index(att.target).map_or_else(|| att.target.to_string(), |c| c.name().into());
        Self {
            flow_id: g.id.clone(),
            target,
            steps: att.steps,
            f_input: att.f_input,
            f_baseline: att.f_baseline,
            completeness: check,
            flow_features: extended_feature_names()
                .into_iter()
                .zip(&g.flow_features)
                .zip(att.flow.iter())
                .map(|((name, v), s)| FeatureScore {
                    name: name.into(),
                    value: *v,
                    score: *s,
                })
                .collect(),
            top_flow_features: top,
            payload_scores: att.packets.rows().into_iter().map(|r| r.to_vec()).collect(),
            contain_scores: att.contain.rows().into_iter().map(|r| r.to_vec()).collect(),
            link_scores: att.link.iter().copied().collect(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# Attribution for flow {}\n\nTarget: {}  \nSteps: {}  \nF(x) = {:.6}, F(baseline) = {:.6}  \nCompleteness gap: {:.3e} (tolerance {:.3e}, {})\n\n",
            self.flow_id,
            self.target,
            self.steps,
            self.f_input,
            self.f_baseline,
            self.completeness.gap,
            self.completeness.tolerance,
            if self.completeness.pass { "pass" } else { "fail" }
        );
        s += "| Feature | Value | Score |\n|---|---:|---:|\n";
        for f in &self.top_flow_features {
            s += &format!("| {} | {} | {:.6} |\n", f.name, format_value(f.value), f.score);
        }
        s += "\n| Packet | Payload score sum | ";
        s += &CONTAIN_FEATURE_NAMES.join(" | ");
        s += " |\n|---:|---:|";
        s += &"---:|".repeat(CONTAIN_FEATURE_NAMES.len());
        s += "\n";
        for (i, (p, c)) in self.payload_scores.iter().zip(&self.contain_scores).enumerate() {
            s += &format!(
                "| {i} | {:.6} | {} |\n",
                p.iter().sum::<f64>(),
                c.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" | ")
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::llm::offline_placeholder;

    fn resp(text: &str) -> LlmResponse {
        LlmResponse {
            text: text.into(),
            model: "m".into(),
            latency_ms: 3,
            attempts: 1,
            offline: false,
        }
    }

    #[test]
    fn flow_only_for_flow_classes() {
        let p = PromptParts::default();
        let r = compose_explanation("f", TrafficClass::DDoS, &[0.0; 8], &p, ("q".into(), resp("R")), None).unwrap();
        assert!(r.payload_query.is_none() && r.payload_response.is_none());
        assert_eq!(r.explanation, "R");
        assert!(compose_explanation(
            "f",
            TrafficClass::DDoS,
            &[0.0; 8],
            &p,
            ("q".into(), resp("R")),
            Some(("pq".into(), resp("P")))
        )
        .is_err());
    }

    #[test]
    fn both_sections_for_payload_classes() {
        let p = PromptParts::default();
        let r = compose_explanation(
            "f",
            TrafficClass::WebBased,
            &[0.125; 8],
            &p,
            ("q".into(), resp("R")),
            Some(("pq".into(), resp("P"))),
        )
        .unwrap();
        assert_eq!(r.explanation, "R\n\nP");
        assert_eq!(r.llm.latency_ms, 6);
        assert!(r.to_markdown().contains("## Payload response"));
        let back: ExplanationReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn offline_keeps_query() {
        let p = PromptParts::default();
        let q = "The predicted class from GNN is DoS.".to_string();
        let off = LlmResponse {
            text: offline_placeholder(&q),
            model: "offline".into(),
            latency_ms: 0,
            attempts: 0,
            offline: true,
        };
        let r = compose_explanation("f", TrafficClass::DoS, &[0.0; 8], &p, (q.clone(), off), None).unwrap();
        assert!(r.llm.offline);
        assert!(r.flow_response.contains(&q));
        assert_eq!(r.flow_query, q);
    }
}
