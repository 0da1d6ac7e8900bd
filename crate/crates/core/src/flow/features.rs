//! Flow-level (76) and packet-level (14) feature catalogs.
//!
//! Sizes are IP-layer bytes, times are seconds. Statistics over an empty
//! set (e.g. backward stats of a one-way flow) and rates over a zero
//! duration are 0; standard deviations are population deviations.

use super::packet::{Direction, PacketRecord, Protocol};
use super::FlowRecord;

pub const FLOW_FEATURE_COUNT: usize = 76;
pub const PACKET_FEATURE_COUNT: usize = 14;

pub const FLOW_FEATURE_NAMES: [&str; FLOW_FEATURE_COUNT] = [
    "src_port",
    "dst_port",
    "protocol",
    "duration_s",
    "total_packets",
    "fwd_packets",
    "bwd_packets",
    "total_bytes",
    "fwd_bytes",
    "bwd_bytes",
    "pkt_len_min",
    "pkt_len_max",
    "pkt_len_mean",
    "pkt_len_std",
    "fwd_pkt_len_min",
    "fwd_pkt_len_max",
    "fwd_pkt_len_mean",
    "fwd_pkt_len_std",
    "bwd_pkt_len_min",
    "bwd_pkt_len_max",
    "bwd_pkt_len_mean",
    "bwd_pkt_len_std",
    "flow_bytes_per_s",
    "flow_packets_per_s",
    "fwd_packets_per_s",
    "bwd_packets_per_s",
    "flow_iat_mean",
    "flow_iat_std",
    "flow_iat_max",
    "flow_iat_min",
    "fwd_iat_total",
    "fwd_iat_mean",
    "fwd_iat_std",
    "fwd_iat_max",
    "fwd_iat_min",
    "bwd_iat_total",
    "bwd_iat_mean",
    "bwd_iat_std",
    "bwd_iat_max",
    "bwd_iat_min",
    "fin_count",
    "syn_count",
    "rst_count",
    "psh_count",
    "ack_count",
    "urg_count",
    "fwd_psh_count",
    "bwd_psh_count",
    "fwd_urg_count",
    "bwd_urg_count",
    "fwd_header_bytes",
    "bwd_header_bytes",
    "fwd_header_len_min",
    "bwd_header_len_min",
    "payload_bytes_total",
    "fwd_payload_bytes",
    "bwd_payload_bytes",
    "payload_len_min",
    "payload_len_max",
    "payload_len_mean",
    "payload_len_std",
    "down_up_ratio",
    "fwd_seg_size_avg",
    "bwd_seg_size_avg",
    "fwd_init_win_bytes",
    "bwd_init_win_bytes",
    "fwd_act_data_pkts",
    "bwd_act_data_pkts",
    "fwd_ttl_mean",
    "bwd_ttl_mean",
    "is_tcp",
    "is_udp",
    "is_icmp",
    "dst_port_well_known",
    "bidirectional",
    "payload_packet_ratio",
];

pub const PACKET_FEATURE_NAMES: [&str; PACKET_FEATURE_COUNT] = [
    "syn",
    "ack",
    "fin",
    "rst",
    "psh",
    "urg",
    "ip_layer_size",
    "transport_layer_size",
    "payload_size",
    "direction",
    "inter_arrival_s",
    "ttl",
    "tcp_window",
    "header_bytes",
];

/// Index of a flow feature by name.
pub fn flow_feature_index(name: &str) -> Option<usize> {
    FLOW_FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, Default)]
struct Summary {
    n: usize,
    sum: f64,
    min: f64,
    max: f64,
    mean: f64,
    std: f64,
}

fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary::default();
    }
    let n = values.len();
    let sum: f64 = values.iter().sum();
    let mean = sum / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Summary {
        n,
        sum,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    }
}

fn gaps_s(ts: &[u64]) -> Vec<f64> {
    ts.windows(2)
        .map(|w| w[1].saturating_sub(w[0]) as f64 / 1e6)
        .collect()
}

fn rate(count: f64, duration: f64) -> f64 {
    if duration > 0.0 {
        count / duration
    } else {
        0.0
    }
}

/// The 76 flow-level features, in [`FLOW_FEATURE_NAMES`] order.
pub fn compute_flow_features(flow: &FlowRecord) -> Vec<f64> {
    let pkts = &flow.packets;
    if pkts.is_empty() {
        return vec![0.0; FLOW_FEATURE_COUNT];
    }
    let dir = |d: Direction| pkts.iter().filter(move |p| p.direction == d);
    let fwd: Vec<&PacketRecord> = dir(Direction::Forward).collect();
    let bwd: Vec<&PacketRecord> = dir(Direction::Backward).collect();

    let sizes = |ps: &[&PacketRecord]| -> Vec<f64> {
        ps.iter().map(|p| p.ip_layer_size as f64).collect()
    };
    let all: Vec<&PacketRecord> = pkts.iter().collect();
    let len_all = summarize(&sizes(&all));
    let len_fwd = summarize(&sizes(&fwd));
    let len_bwd = summarize(&sizes(&bwd));

    let ts = |ps: &[&PacketRecord]| -> Vec<u64> { ps.iter().map(|p| p.timestamp_us).collect() };
    let iat_all = summarize(&gaps_s(&ts(&all)));
    let iat_fwd = summarize(&gaps_s(&ts(&fwd)));
    let iat_bwd = summarize(&gaps_s(&ts(&bwd)));

    let payload_lens: Vec<f64> = pkts.iter().map(|p| p.payload_size as f64).collect();
    let pl_all = summarize(&payload_lens);
    let pl_fwd: f64 = fwd.iter().map(|p| p.payload_size as f64).sum();
    let pl_bwd: f64 = bwd.iter().map(|p| p.payload_size as f64).sum();

    let count = |ps: &[&PacketRecord], f: fn(&PacketRecord) -> bool| -> f64 {
        ps.iter().filter(|p| f(p)).count() as f64
    };
    let hdr = |ps: &[&PacketRecord]| -> Vec<f64> {
        ps.iter().map(|p| p.header_bytes() as f64).collect()
    };
    let hdr_fwd = summarize(&hdr(&fwd));
    let hdr_bwd = summarize(&hdr(&bwd));
    let ttl_mean = |ps: &[&PacketRecord]| -> f64 {
        summarize(&ps.iter().map(|p| p.ttl as f64).collect::<Vec<_>>()).mean
    };

    let duration = (flow.end_time_us.saturating_sub(flow.start_time_us)) as f64 / 1e6;
    let total = pkts.len() as f64;
    let (nf, nb) = (fwd.len() as f64, bwd.len() as f64);
    let proto = flow.key.protocol;
    let is_tcp = proto == Protocol::Tcp;
    let flag = |ps: &[&PacketRecord], f: fn(&PacketRecord) -> bool| -> f64 {
        if is_tcp {
            count(ps, f)
        } else {
            0.0
        }
    };
    let init_win = |ps: &[&PacketRecord]| -> f64 {
        match ps.first() {
            Some(p) if is_tcp => p.tcp_window as f64,
            _ => 0.0,
        }
    };
    let seg_avg = |bytes: f64, n: f64| if n > 0.0 { bytes / n } else { 0.0 };
    let dst_port = flow.key.responder_port;

    let v = vec![
        flow.key.initiator_port as f64,
        dst_port as f64,
        proto.ip_number() as f64,
        duration,
        total,
        nf,
        nb,
        len_all.sum,
        len_fwd.sum,
        len_bwd.sum,
        len_all.min,
        len_all.max,
        len_all.mean,
        len_all.std,
        len_fwd.min,
        len_fwd.max,
        len_fwd.mean,
        len_fwd.std,
        len_bwd.min,
        len_bwd.max,
        len_bwd.mean,
        len_bwd.std,
        rate(len_all.sum, duration),
        rate(total, duration),
        rate(nf, duration),
        rate(nb, duration),
        iat_all.mean,
        iat_all.std,
        iat_all.max,
        iat_all.min,
        iat_fwd.sum,
        iat_fwd.mean,
        iat_fwd.std,
        iat_fwd.max,
        iat_fwd.min,
        iat_bwd.sum,
        iat_bwd.mean,
        iat_bwd.std,
        iat_bwd.max,
        iat_bwd.min,
        flag(&all, |p| p.tcp_flags.fin()),
        flag(&all, |p| p.tcp_flags.syn()),
        flag(&all, |p| p.tcp_flags.rst()),
        flag(&all, |p| p.tcp_flags.psh()),
        flag(&all, |p| p.tcp_flags.ack()),
        flag(&all, |p| p.tcp_flags.urg()),
        flag(&fwd, |p| p.tcp_flags.psh()),
        flag(&bwd, |p| p.tcp_flags.psh()),
        flag(&fwd, |p| p.tcp_flags.urg()),
        flag(&bwd, |p| p.tcp_flags.urg()),
        hdr_fwd.sum,
        hdr_bwd.sum,
        hdr_fwd.min,
        hdr_bwd.min,
        pl_all.sum,
        pl_fwd,
        pl_bwd,
        pl_all.min,
        pl_all.max,
        pl_all.mean,
        pl_all.std,
        if nf > 0.0 { nb / nf } else { 0.0 },
        seg_avg(pl_fwd, nf),
        seg_avg(pl_bwd, nb),
        init_win(&fwd),
        init_win(&bwd),
        count(&fwd, |p| p.payload_size > 0),
        count(&bwd, |p| p.payload_size > 0),
        ttl_mean(&fwd),
        ttl_mean(&bwd),
        is_tcp as u8 as f64,
        (proto == Protocol::Udp) as u8 as f64,
        (proto == Protocol::Icmp) as u8 as f64,
        (proto != Protocol::Icmp && dst_port < 1024) as u8 as f64,
        (nb > 0.0) as u8 as f64,
        count(&all, |p| p.payload_size > 0) / total,
    ];
    debug_assert_eq!(v.len(), FLOW_FEATURE_COUNT);
    debug_assert!(len_all.n == pkts.len());
    v
}

/// Per-packet node inputs: the encoded payload plus 14 header scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketNodeFeatures {
    pub payload: Vec<u8>,
    pub scalars: [f64; PACKET_FEATURE_COUNT],
}

/// `previous` is the preceding packet of the same flow, if any; it sets the
/// inter-arrival scalar.
pub fn compute_packet_features(
    packet: &PacketRecord,
    previous: Option<&PacketRecord>,
) -> PacketNodeFeatures {
    let is_tcp = packet.protocol == Protocol::Tcp;
    let f = packet.tcp_flags;
    let bit = |b: bool| if is_tcp && b { 1.0 } else { 0.0 };
    let iat = previous
        .map(|p| packet.timestamp_us.saturating_sub(p.timestamp_us) as f64 / 1e6)
        .unwrap_or(0.0);
    PacketNodeFeatures {
        payload: super::encode_payload(&packet.payload),
        scalars: [
            bit(f.syn()),
            bit(f.ack()),
            bit(f.fin()),
            bit(f.rst()),
            bit(f.psh()),
            bit(f.urg()),
            packet.ip_layer_size as f64,
            packet.transport_layer_size as f64,
            packet.payload_size as f64,
            packet.direction.as_feature(),
            iat,
            packet.ttl as f64,
            if is_tcp { packet.tcp_window as f64 } else { 0.0 },
            packet.header_bytes() as f64,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::{pkt, tcp_pkt};
    use crate::flow::{FlowKey, TcpFlags};

    fn flow_of(packets: Vec<PacketRecord>) -> FlowRecord {
        FlowRecord::from_packets(FlowKey::from_packet(&packets[0]), packets)
    }

    #[test]
    fn names_are_unique() {
        let mut v = FLOW_FEATURE_NAMES.to_vec();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), FLOW_FEATURE_COUNT);
    }

    #[test]
    fn single_syn_packet() {
        let p = tcp_pkt(0, 60, TcpFlags::SYN);
        let f = compute_flow_features(&flow_of(vec![p]));
        let at = |n: &str| f[flow_feature_index(n).unwrap()];
        assert_eq!(at("total_packets"), 1.0);
        assert_eq!(at("total_bytes"), 60.0);
        assert_eq!(at("duration_s"), 0.0);
        assert_eq!(at("syn_count"), 1.0);
        for name in FLOW_FEATURE_NAMES.iter().filter(|n| n.ends_with("_std")) {
            assert_eq!(at(name), 0.0, "{name}");
        }
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn two_packets_ten_ms_apart() {
        let f = compute_flow_features(&flow_of(vec![pkt(0, 100), pkt(10_000, 100)]));
        let at = |n: &str| f[flow_feature_index(n).unwrap()];
        assert!((at("duration_s") - 0.010).abs() < 1e-12);
        assert!((at("flow_iat_mean") - 0.010).abs() < 1e-12);
    }

    #[test]
    fn packet_scalars() {
        let mut p = tcp_pkt(0, 60, TcpFlags::SYN);
        let pf = compute_packet_features(&p, None);
        assert_eq!(&pf.scalars[..6], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(pf.payload.iter().all(|&b| b == 0));
        assert_eq!(pf.scalars[9], 0.0);
        p.direction = Direction::Backward;
        assert_eq!(compute_packet_features(&p, None).scalars[9], 1.0);
    }
}
