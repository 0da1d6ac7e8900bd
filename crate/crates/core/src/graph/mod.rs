//! One heterogeneous graph per flow: a flow node carrying the 92 extended
//! features, one packet node per packet carrying its encoded payload,
//! `contain` edges from the flow node to every packet and `link` edges
//! chaining consecutive packets.
//!
//! Only the forward relations are stored. The model materializes the
//! reverse relations when it builds a batch.

pub mod codec;

use serde::{Deserialize, Serialize};

use crate::flow::{encode_payload, FlowRecord, PAYLOAD_LEN};
use crate::temporal::{ExtendedFeatures, EXTENDED_FEATURE_COUNT};
use crate::{Error, Result, TrafficClass};

pub const CONTAIN_FEATURE_COUNT: usize = 4;
pub const LINK_FEATURE_COUNT: usize = 1;
pub const CONTAIN_FEATURE_NAMES: [&str; CONTAIN_FEATURE_COUNT] =
    ["ip_layer_size", "transport_layer_size", "payload_size", "direction"];
pub const LINK_FEATURE_NAMES: [&str; LINK_FEATURE_COUNT] = ["t_delta_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    /// Id of the flow the graph was built from.
    pub id: String,
    pub flow_features: Vec<f64>,
    /// n rows of [`PAYLOAD_LEN`] bytes.
    #[serde(with = "hex_rows")]
    pub payloads: Vec<Vec<u8>>,
    /// Per packet: ip layer size, transport layer size, payload size, direction.
    pub contain: Vec<[f64; CONTAIN_FEATURE_COUNT]>,
    /// Seconds between packet i and packet i+1.
    pub link: Vec<f64>,
    pub label: Option<TrafficClass>,
    /// Oversampled copy created while balancing a training set.
    #[serde(default)]
    pub duplicate: bool,
}

pub fn build_graph(flow: &FlowRecord, ext: &ExtendedFeatures) -> Result<HeteroGraph> {
    if flow.packets.is_empty() {
        return Err(Error::EmptyFlow);
    }
    let payloads = flow.packets.iter().map(|p| encode_payload(&p.payload)).collect();
    let contain = flow
        .packets
        .iter()
        .map(|p| {
            [
                p.ip_layer_size as f64,
                p.transport_layer_size as f64,
                p.payload_size as f64,
                p.direction.as_feature(),
            ]
        })
        .collect();
    let link = flow
        .packets
        .windows(2)
        .map(|w| w[1].timestamp_us.saturating_sub(w[0].timestamp_us) as f64 / 1e6)
        .collect();
    let g = HeteroGraph {
        id: flow.id.clone(),
        flow_features: ext.values().to_vec(),
        payloads,
        contain,
        link,
        label: flow.label,
        duplicate: false,
    };
    g.validate()?;
    Ok(g)
}

impl HeteroGraph {
    pub fn num_packets(&self) -> usize {
        self.payloads.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_packets() + 1
    }

    pub fn num_edges(&self) -> usize {
        self.contain.len() + self.link.len()
    }

    /// `(flow node, packet index)` pairs; the flow node is always 0.
    pub fn contain_edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_packets()).map(|i| (0, i)).collect()
    }

    /// `(packet index, packet index)` pairs.
    pub fn link_edges(&self) -> Vec<(usize, usize)> {
        (0..self.link.len()).map(|i| (i, i + 1)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_packets();
        if n == 0 {
            return Err(Error::EmptyFlow);
        }
        if self.flow_features.len() != EXTENDED_FEATURE_COUNT {
            return Err(Error::Shape(format!(
                "graph {}: flow node has {} features, expected {EXTENDED_FEATURE_COUNT}",
                self.id,
                self.flow_features.len()
            )));
        }
        if let Some(row) = self.payloads.iter().position(|r| r.len() != PAYLOAD_LEN) {
            return Err(Error::Shape(format!(
                "graph {}: payload row {row} has {} bytes",
                self.id,
                self.payloads[row].len()
            )));
        }
        if self.contain.len() != n || self.link.len() != n - 1 {
            return Err(Error::Shape(format!(
                "graph {}: {n} packets but {} contain and {} link edges",
                self.id,
                self.contain.len(),
                self.link.len()
            )));
        }
        if self.link.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Shape(format!("graph {}: negative t_delta", self.id)));
        }
        Ok(())
    }

    /// Shallow summary for the debug JSON export.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "label": self.label.map(|c| c.name()),
            "duplicate": self.duplicate,
            "nodes": { "flow": 1, "packet": self.num_packets() },
            "edges": {
                "contain": self.contain_edges(),
                "link": self.link_edges(),
            },
            "flow_features": self.flow_features,
            "contain_features": self.contain,
            "link_features": self.link,
            "payload_nonzero_bytes": self
                .payloads
                .iter()
                .map(|r| r.iter().filter(|b| **b != 0).count())
                .collect::<Vec<_>>(),
        })
    }
}

mod hex_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(rows: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        rows.iter().map(hex::encode).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|r| hex::decode(r).map_err(serde::de::Error::custom))
            .collect()
    }
}
