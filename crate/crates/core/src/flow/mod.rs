//! Packet ingestion, bounded bidirectional flow assembly and flow/packet
//! feature computation.

mod assemble;
pub mod features;
pub(crate) mod packet;
mod payload;
pub mod pcap;

use std::net::IpAddr;

use serde::{Deserialize, Serialize};

pub use assemble::{assemble_flows, FlowAssembler, FlowConfig};
pub use features::{
    compute_flow_features, compute_packet_features, PacketNodeFeatures, FLOW_FEATURE_COUNT,
    FLOW_FEATURE_NAMES, PACKET_FEATURE_COUNT, PACKET_FEATURE_NAMES,
};
pub use packet::{Direction, MacAddr, PacketRecord, Protocol, TcpFlags};
pub use payload::{encode_payload, PAYLOAD_LEN};
pub use pcap::{parse_pcap, PcapStats};

use crate::TrafficClass;

/// Canonical 5-tuple; the initiator (source of the first packet seen) comes
/// first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub initiator_ip: IpAddr,
    pub initiator_port: u16,
    pub responder_ip: IpAddr,
    pub responder_port: u16,
    pub protocol: Protocol,
}

/// Direction-agnostic table key: endpoints in sorted order.
pub(crate) type LookupKey = ((IpAddr, u16), (IpAddr, u16), Protocol);

impl FlowKey {
    pub fn from_packet(p: &PacketRecord) -> Self {
        let icmp = p.protocol == Protocol::Icmp;
        FlowKey {
            initiator_ip: p.src_ip,
            initiator_port: if icmp { 0 } else { p.src_port },
            responder_ip: p.dst_ip,
            responder_port: if icmp { 0 } else { p.dst_port },
            protocol: p.protocol,
        }
    }

    pub(crate) fn lookup(&self) -> LookupKey {
        let a = (self.initiator_ip, self.initiator_port);
        let b = (self.responder_ip, self.responder_port);
        if a <= b {
            (a, b, self.protocol)
        } else {
            (b, a, self.protocol)
        }
    }

    /// Whether `p` travels from the initiator to the responder.
    pub fn direction_of(&self, p: &PacketRecord) -> Direction {
        let port = if self.protocol == Protocol::Icmp { 0 } else { p.src_port };
        if p.src_ip == self.initiator_ip && port == self.initiator_port {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// A closed flow: up to `max_packets` packets plus its 76 flow features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    /// Unique within a run: `<capture>#<sequence>`.
    pub id: String,
    pub capture: Option<String>,
    pub key: FlowKey,
    pub start_time_us: u64,
    pub end_time_us: u64,
    /// MACs of the first packet (metadata only, not part of the key).
    pub src_mac: Option<MacAddr>,
    pub dst_mac: Option<MacAddr>,
    pub packets: Vec<PacketRecord>,
    pub flow_features: Vec<f64>,
    pub label: Option<TrafficClass>,
    pub subclass: Option<String>,
}

impl FlowRecord {
    /// Build a record from raw packets: assigns directions, sorts by time
    /// (stable) and computes flow features.
    pub fn from_packets(key: FlowKey, mut packets: Vec<PacketRecord>) -> Self {
        packets.sort_by_key(|p| p.timestamp_us);
        for p in &mut packets {
            p.direction = key.direction_of(p);
        }
        let first = packets.first();
        let mut rec = FlowRecord {
            id: String::new(),
            capture: None,
            key,
            start_time_us: first.map(|p| p.timestamp_us).unwrap_or(0),
            end_time_us: packets.last().map(|p| p.timestamp_us).unwrap_or(0),
            src_mac: first.and_then(|p| p.src_mac),
            dst_mac: first.and_then(|p| p.dst_mac),
            packets,
            flow_features: Vec::new(),
            label: None,
            subclass: None,
        };
        rec.flow_features = compute_flow_features(&rec);
        rec
    }

    pub fn destination(&self) -> IpAddr {
        self.key.responder_ip
    }

    /// n x 1500 payload matrix, one encoded row per packet.
    pub fn payload_matrix(&self) -> Vec<Vec<u8>> {
        self.packets.iter().map(|p| encode_payload(&p.payload)).collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.end_time_us.saturating_sub(self.start_time_us) as f64 / 1e6
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use std::net::{IpAddr, Ipv4Addr};

    use super::*;

    pub fn pkt(ts: u64, size: u32) -> PacketRecord {
        PacketRecord {
            timestamp_us: ts,
            src_ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
            dst_ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            src_port: 40000,
            dst_port: 80,
            src_mac: Some(MacAddr([2, 0, 0, 0, 0, 1])),
            dst_mac: Some(MacAddr([2, 0, 0, 0, 0, 2])),
            protocol: Protocol::Udp,
            tcp_flags: TcpFlags::default(),
            ip_layer_size: size,
            transport_layer_size: size.saturating_sub(20),
            payload_size: 0,
            ttl: 64,
            tcp_window: 0,
            icmp_type: None,
            direction: Direction::Forward,
            payload: Vec::new(),
        }
    }

    pub fn tcp_pkt(ts: u64, size: u32, flags: u8) -> PacketRecord {
        PacketRecord {
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags(flags),
            tcp_window: 1024,
            ..pkt(ts, size)
        }
    }

    pub fn reversed(mut p: PacketRecord) -> PacketRecord {
        std::mem::swap(&mut p.src_ip, &mut p.dst_ip);
        std::mem::swap(&mut p.src_port, &mut p.dst_port);
        std::mem::swap(&mut p.src_mac, &mut p.dst_mac);
        p
    }
}
