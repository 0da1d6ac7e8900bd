//! Prompt construction for the flow and payload queries.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, TrafficClass};

pub const PROMPT_VERSION: &str = "prompts/1";

pub const P_INIT: &str = "The predicted class from GNN is {class}.";
pub const P_PART2: &str = "The top features contributing to this prediction are:";
pub const P_ALIGN: &str = "Don't expect any values on your own. Explain the predicted outcome and its potential reason along with the potential mitigation. Start your answer with \"The predicted outcome is\".";
pub const P_PAYLOAD_PREFIX: &str =
    "Analyze whether this payload of network flow is malicious or not. Give reason concisely.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptParts {
    pub version: String,
    /// `{class}` is replaced by the predicted class name.
    pub p_init: String,
    pub p_part2: String,
    pub p_align: String,
    pub p_payload_prefix: String,
    pub n_top: usize,
    pub n_packets: usize,
    pub payload_classes: Vec<TrafficClass>,
}

impl Default for PromptParts {
    fn default() -> Self {
        Self {
            version: PROMPT_VERSION.into(),
            p_init: P_INIT.into(),
            p_part2: P_PART2.into(),
            p_align: P_ALIGN.into(),
            p_payload_prefix: P_PAYLOAD_PREFIX.into(),
            n_top: 5,
            n_packets: 3,
            payload_classes: vec![TrafficClass::WebBased, TrafficClass::Bruteforce],
        }
    }
}

impl PromptParts {
    pub fn is_payload_class(&self, c: TrafficClass) -> bool {
        self.payload_classes.contains(&c)
    }

    pub fn init_for(&self, c: TrafficClass) -> String {
        self.p_init.replace("{class}", c.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub name: String,
    pub value: f64,
    pub score: f64,
}

/// Top `n` features by score, descending; equal scores keep schema order.
/// `n` is clamped to the number of features.
pub fn rank_flow_features(scores: &[f64], values: &[f64], names: &[&str], n: usize) -> Vec<RankedFeature> {
    let len = scores.len().min(values.len()).min(names.len());
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    idx.into_iter()
        .take(n.min(len))
        .map(|i| RankedFeature {
            index: i,
            name: names[i].to_string(),
            value: values[i],
            score: scores[i],
        })
        .collect()
}

/// Integers without a fractional part; other values with up to six
/// decimals, trailing zeros removed.
pub fn format_value(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v.fract() == 0.0 && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn build_flow_query(parts: &PromptParts, pred: TrafficClass, top: &[RankedFeature]) -> String {
    let mut q = parts.init_for(pred);
    q.push('\n');
    q.push_str(&parts.p_part2);
    q.push('\n');
    for f in top {
        q.push_str(&format!("- {} with actual value {}\n", f.name, format_value(f.value)));
    }
    q.push_str(&parts.p_align);
    q
}

fn render_bytes(row: &[u8]) -> String {
    let end = row.iter().rposition(|b| *b != 0).map_or(0, |i| i + 1);
    row[..end]
        .iter()
        .map(|b| if (0x20..=0x7e).contains(b) { *b as char } else { '.' })
        .collect()
}

/// Renders the `top_n` packets with the highest mean min-max-normalized
/// attribution. Packets are joined with `" | "`; packets that are all
/// padding are skipped.
pub fn payload_to_ascii(scores: &[Vec<f64>], payloads: &[Vec<u8>], top_n: usize) -> String {
    let n = scores.len().min(payloads.len());
    let mean: Vec<f64> = scores[..n]
        .iter()
        .map(|s| {
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if s.is_empty() || !(hi > lo) {
                return 0.0;
            }
            s.iter().map(|v| (v - lo) / (hi - lo)).sum::<f64>() / s.len() as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| mean[*b].total_cmp(&mean[*a]).then(a.cmp(b)));
    order
        .into_iter()
        .take(top_n)
        .map(|i| render_bytes(&payloads[i]))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" | ")
}

pub fn build_payload_query(parts: &PromptParts, pred: TrafficClass, ascii: &str) -> Result<String> {
    if !parts.is_payload_class(pred) {
        return Err(Error::InvalidArgument(format!(
            "{pred} is not a payload-specific class"
        )));
    }
    let mut q = parts.p_payload_prefix.clone();
    q.push('\n');
    if !ascii.is_empty() {
        q.push_str(ascii);
        q.push('\n');
    }
    q.push_str(&parts.p_align);
    Ok(q)
}
