//! Network intrusion detection over heterogeneous flow/packet graphs.
//!
//! Packets read from pcap captures are assembled into bounded bidirectional
//! flows ([`flow`]), enriched with rolling per-destination statistics
//! ([`temporal`]), turned into one typed graph per flow ([`graph`]),
//! classified by a two-layer heterogeneous graph-attention network
//! ([`model`]) and explained with Integrated Gradients plus prompt
//! generation for a chat-completion endpoint ([`explain`]).
//! [`pipeline`] wires the stages together and handles dataset preparation
//! and evaluation.

pub mod autodiff;
pub mod class;
pub mod error;
pub mod explain;
pub mod flow;
pub mod graph;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod temporal;

pub use class::TrafficClass;
pub use error::{Error, Result};
pub use flow::{
    assemble_flows, compute_flow_features, compute_packet_features, encode_payload, parse_pcap,
    FlowAssembler, FlowConfig, FlowKey, FlowRecord, PacketRecord, PAYLOAD_LEN,
};
pub use graph::{build_graph, HeteroGraph};
pub use model::{ModelConfig, ModelParams};
pub use temporal::{ExtendedFeatures, TemporalConfig, TemporalFeatures, TemporalState};

/// Version tag of the flow/temporal/packet feature catalog. Written into
/// every output header and checked when artifacts are read back.
pub const SCHEMA_VERSION: &str = "hetnid-features/1";
