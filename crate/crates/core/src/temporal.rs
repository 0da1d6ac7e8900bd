//! Rolling per-destination statistics over closed flows.
//!
//! Each closed flow becomes one window event stamped with its end time and
//! filed under its destination (the responder address). Features for a
//! destination at time `at` aggregate events with timestamps in
//! `(at - W, at]`. "Received at the destination" counts are taken over the
//! forward-direction packets of each flow; `Rolling_bipackets_Sum` counts
//! both directions and `Rolling_fin_Sum` counts backward FIN packets.

use std::collections::{BTreeMap, VecDeque};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flow::{Direction, FlowRecord, Protocol, FLOW_FEATURE_COUNT, FLOW_FEATURE_NAMES};
use crate::{Error, Result};

pub const TEMPORAL_FEATURE_COUNT: usize = 16;
pub const EXTENDED_FEATURE_COUNT: usize = FLOW_FEATURE_COUNT + TEMPORAL_FEATURE_COUNT;

pub const TEMPORAL_FEATURE_NAMES: [&str; TEMPORAL_FEATURE_COUNT] = [
    "Rolling_UDP_Sum",
    "Rolling_TCP_Sum",
    "Rolling_ACK_Sum",
    "Rolling_FIN_Sum",
    "Rolling_RST_Sum",
    "Rolling_fin_Sum",
    "Rolling_psh_Sum",
    "Rolling_SYN_Sum",
    "Rolling_ICMP_Sum",
    "Rolling_http_port",
    "Rolling_Average_Duration",
    "Rolling_DNS_Sum",
    "Rolling_vulnerable_port",
    "Rolling_packets_Sum",
    "Rolling_bipackets_Sum",
    "Unique_Ports_In_SourceDestination",
];

/// Names of the 92 extended features: flow features then temporal ones.
pub fn extended_feature_names() -> Vec<&'static str> {
    FLOW_FEATURE_NAMES
        .iter()
        .chain(TEMPORAL_FEATURE_NAMES.iter())
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub window_us: u64,
    pub http_ports: Vec<u16>,
    pub vulnerable_ports: Vec<u16>,
    pub dns_port: u16,
    /// How far behind the newest end time a flow may arrive.
    pub order_tolerance_us: u64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            window_us: 60_000_000,
            http_ports: vec![80, 8080, 8000, 443],
            vulnerable_ports: vec![23, 2323, 445, 3389, 21, 69],
            dns_port: 53,
            order_tolerance_us: 0,
        }
    }
}

impl TemporalConfig {
    pub fn with_window_s(window_s: f64) -> Self {
        Self {
            window_us: (window_s * 1e6).round() as u64,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Counts {
    udp: u64,
    tcp: u64,
    ack: u64,
    fin: u64,
    rst: u64,
    bwd_fin: u64,
    psh: u64,
    syn: u64,
    icmp: u64,
    dns: u64,
    packets: u64,
    bipackets: u64,
    http: u64,
    vulnerable: u64,
    duration_us: u64,
    flows: u64,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.zip_with(o, |a, b| a + b);
    }

    fn sub(&mut self, o: &Counts) {
        self.zip_with(o, |a, b| a - b);
    }

    fn zip_with(&mut self, o: &Counts, f: impl Fn(u64, u64) -> u64) {
        self.udp = f(self.udp, o.udp);
        self.tcp = f(self.tcp, o.tcp);
        self.ack = f(self.ack, o.ack);
        self.fin = f(self.fin, o.fin);
        self.rst = f(self.rst, o.rst);
        self.bwd_fin = f(self.bwd_fin, o.bwd_fin);
        self.psh = f(self.psh, o.psh);
        self.syn = f(self.syn, o.syn);
        self.icmp = f(self.icmp, o.icmp);
        self.dns = f(self.dns, o.dns);
        self.packets = f(self.packets, o.packets);
        self.bipackets = f(self.bipackets, o.bipackets);
        self.http = f(self.http, o.http);
        self.vulnerable = f(self.vulnerable, o.vulnerable);
        self.duration_us = f(self.duration_us, o.duration_us);
        self.flows = f(self.flows, o.flows);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowEvent {
    ts_us: u64,
    src_port: u16,
    counts: Counts,
}

impl WindowEvent {
    fn from_flow(flow: &FlowRecord, cfg: &TemporalConfig) -> Self {
        let mut c = Counts {
            flows: 1,
            duration_us: flow.end_time_us.saturating_sub(flow.start_time_us),
            ..Counts::default()
        };
        let proto = flow.key.protocol;
        let dport = flow.key.responder_port;
        let tcp = proto == Protocol::Tcp;
        for p in &flow.packets {
            c.bipackets += 1;
            if p.direction == Direction::Backward {
                if tcp && p.tcp_flags.fin() {
                    c.bwd_fin += 1;
                }
                continue;
            }
            c.packets += 1;
            match proto {
                Protocol::Udp => c.udp += 1,
                Protocol::Icmp => c.icmp += 1,
                Protocol::Tcp => {
                    c.tcp += 1;
                    let f = p.tcp_flags;
                    c.ack += f.ack() as u64;
                    c.fin += f.fin() as u64;
                    c.rst += f.rst() as u64;
                    c.psh += f.psh() as u64;
                    c.syn += f.syn() as u64;
                }
                Protocol::Other(_) => {}
            }
            if proto != Protocol::Icmp && dport == cfg.dns_port {
                c.dns += 1;
            }
        }
        if proto != Protocol::Icmp {
            c.http = cfg.http_ports.contains(&dport) as u64;
            c.vulnerable = cfg.vulnerable_ports.contains(&dport) as u64;
        }
        WindowEvent {
            ts_us: flow.end_time_us,
            src_port: flow.key.initiator_port,
            counts: c,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct DestWindow {
    events: VecDeque<WindowEvent>,
    totals: Counts,
    ports: BTreeMap<u16, u32>,
}

impl DestWindow {
    fn insert(&mut self, ev: WindowEvent) {
        self.totals.add(&ev.counts);
        *self.ports.entry(ev.src_port).or_default() += 1;
        let pos = self.events.partition_point(|e| e.ts_us <= ev.ts_us);
        self.events.insert(pos, ev);
    }

    /// Drop events with `ts <= cutoff`.
    fn evict_through(&mut self, cutoff: u64) {
        while self.events.front().is_some_and(|e| e.ts_us <= cutoff) {
            let ev = self.events.pop_front().expect("checked");
            self.totals.sub(&ev.counts);
            if let Some(n) = self.ports.get_mut(&ev.src_port) {
                *n -= 1;
                if *n == 0 {
                    self.ports.remove(&ev.src_port);
                }
            }
        }
    }

    /// Aggregate over events in `(lo, hi]` without mutating.
    fn aggregate(&self, lo: Option<u64>, hi: u64) -> (Counts, usize) {
        let mut c = self.totals;
        let mut dropped: BTreeMap<u16, u32> = BTreeMap::new();
        let mut front = 0;
        if let Some(lo) = lo {
            for e in self.events.iter().take_while(|e| e.ts_us <= lo) {
                c.sub(&e.counts);
                *dropped.entry(e.src_port).or_default() += 1;
                front += 1;
            }
        }
        for e in self.events.iter().skip(front).rev().take_while(|e| e.ts_us > hi) {
            c.sub(&e.counts);
            *dropped.entry(e.src_port).or_default() += 1;
        }
        let gone = dropped
            .iter()
            .filter(|(p, n)| self.ports.get(p).copied().unwrap_or(0) == **n)
            .count();
        (c, self.ports.len() - gone)
    }
}

/// The 16 rolling features for one destination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalFeatures {
    #[serde(rename = "Rolling_UDP_Sum")]
    pub rolling_udp_sum: f64,
    #[serde(rename = "Rolling_TCP_Sum")]
    pub rolling_tcp_sum: f64,
    #[serde(rename = "Rolling_ACK_Sum")]
    pub rolling_ack_sum: f64,
    #[serde(rename = "Rolling_FIN_Sum")]
    pub rolling_fin_sum: f64,
    #[serde(rename = "Rolling_RST_Sum")]
    pub rolling_rst_sum: f64,
    /// Backward-direction FIN packets.
    #[serde(rename = "Rolling_fin_Sum")]
    pub rolling_bwd_fin_sum: f64,
    #[serde(rename = "Rolling_psh_Sum")]
    pub rolling_psh_sum: f64,
    #[serde(rename = "Rolling_SYN_Sum")]
    pub rolling_syn_sum: f64,
    #[serde(rename = "Rolling_ICMP_Sum")]
    pub rolling_icmp_sum: f64,
    #[serde(rename = "Rolling_http_port")]
    pub rolling_http_port: f64,
    #[serde(rename = "Rolling_Average_Duration")]
    pub rolling_average_duration: f64,
    #[serde(rename = "Rolling_DNS_Sum")]
    pub rolling_dns_sum: f64,
    #[serde(rename = "Rolling_vulnerable_port")]
    pub rolling_vulnerable_port: f64,
    #[serde(rename = "Rolling_packets_Sum")]
    pub rolling_packets_sum: f64,
    #[serde(rename = "Rolling_bipackets_Sum")]
    pub rolling_bipackets_sum: f64,
    #[serde(rename = "Unique_Ports_In_SourceDestination")]
    pub unique_ports_in_source_destination: f64,
}

impl TemporalFeatures {
    /// Values in [`TEMPORAL_FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; TEMPORAL_FEATURE_COUNT] {
        [
            self.rolling_udp_sum,
            self.rolling_tcp_sum,
            self.rolling_ack_sum,
            self.rolling_fin_sum,
            self.rolling_rst_sum,
            self.rolling_bwd_fin_sum,
            self.rolling_psh_sum,
            self.rolling_syn_sum,
            self.rolling_icmp_sum,
            self.rolling_http_port,
            self.rolling_average_duration,
            self.rolling_dns_sum,
            self.rolling_vulnerable_port,
            self.rolling_packets_sum,
            self.rolling_bipackets_sum,
            self.unique_ports_in_source_destination,
        ]
    }

    fn from_counts(c: &Counts, unique_ports: usize) -> Self {
        let f = |v: u64| v as f64;
        TemporalFeatures {
            rolling_udp_sum: f(c.udp),
            rolling_tcp_sum: f(c.tcp),
            rolling_ack_sum: f(c.ack),
            rolling_fin_sum: f(c.fin),
            rolling_rst_sum: f(c.rst),
            rolling_bwd_fin_sum: f(c.bwd_fin),
            rolling_psh_sum: f(c.psh),
            rolling_syn_sum: f(c.syn),
            rolling_icmp_sum: f(c.icmp),
            rolling_http_port: f(c.http),
            rolling_average_duration: if c.flows > 0 {
                c.duration_us as f64 / c.flows as f64 / 1e6
            } else {
                0.0
            },
            rolling_dns_sum: f(c.dns),
            rolling_vulnerable_port: if c.vulnerable > 0 { 1.0 } else { 0.0 },
            rolling_packets_sum: f(c.packets),
            rolling_bipackets_sum: f(c.bipackets),
            unique_ports_in_source_destination: unique_ports as f64,
        }
    }
}

/// Per-destination sliding windows. Single writer; cloneable snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalState {
    pub config: TemporalConfig,
    latest_us: Option<u64>,
    windows: BTreeMap<IpAddr, DestWindow>,
}

impl TemporalState {
    pub fn new(config: TemporalConfig) -> Self {
        Self {
            config,
            latest_us: None,
            windows: BTreeMap::new(),
        }
    }

    /// Add a closed flow. Flows must arrive in non-decreasing end-time order
    /// (up to the configured tolerance).
    pub fn update_window(&mut self, flow: &FlowRecord) -> Result<()> {
        let end = flow.end_time_us;
        if let Some(latest) = self.latest_us {
            if end.saturating_add(self.config.order_tolerance_us) < latest {
                return Err(Error::OutOfOrder { got: end, latest });
            }
        }
        let latest = self.latest_us.map_or(end, |l| l.max(end));
        self.latest_us = Some(latest);
        let ev = WindowEvent::from_flow(flow, &self.config);
        let w = self.windows.entry(flow.destination()).or_default();
        w.insert(ev);
        if let Some(cutoff) = latest.checked_sub(self.config.window_us) {
            w.evict_through(cutoff);
        }
        Ok(())
    }

    /// Features for `dest` over events in `(at - W, at]`. Unknown
    /// destinations yield all zeros.
    pub fn compute_temporal_features(&self, dest: IpAddr, at: u64) -> TemporalFeatures {
        match self.windows.get(&dest) {
            None => TemporalFeatures::default(),
            Some(w) => {
                let (c, ports) = w.aggregate(at.checked_sub(self.config.window_us), at);
                TemporalFeatures::from_counts(&c, ports)
            }
        }
    }

    /// Number of retained events across destinations.
    pub fn retained_events(&self) -> usize {
        self.windows.values().map(|w| w.events.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let data = serde_json::to_vec(&Checkpoint {
            schema_version: crate::SCHEMA_VERSION.to_string(),
            state: self.clone(),
        })?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&data)?;
        if ck.schema_version != crate::SCHEMA_VERSION {
            return Err(Error::Schema {
                expected: crate::SCHEMA_VERSION.into(),
                found: ck.schema_version,
            });
        }
        Ok(ck.state)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: String,
    state: TemporalState,
}

/// Flow features followed by temporal features (92 values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExtendedFeatures(Vec<f64>);

impl ExtendedFeatures {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        extended_feature_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.0[i])
    }

    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        if v.len() != EXTENDED_FEATURE_COUNT {
            return Err(Error::Shape(format!(
                "extended features need {EXTENDED_FEATURE_COUNT} values, got {}",
                v.len()
            )));
        }
        Ok(Self(v))
    }
}

pub fn extend_features(flow_features: &[f64], temporal: &TemporalFeatures) -> Result<ExtendedFeatures> {
    if flow_features.len() != FLOW_FEATURE_COUNT {
        return Err(Error::Shape(format!(
            "flow features need {FLOW_FEATURE_COUNT} values, got {}",
            flow_features.len()
        )));
    }
    let mut v = Vec::with_capacity(EXTENDED_FEATURE_COUNT);
    v.extend_from_slice(flow_features);
    v.extend_from_slice(&temporal.to_array());
    Ok(ExtendedFeatures(v))
}

/// Flow plus its temporal context, as written by the featurize stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedFlow {
    pub flow: FlowRecord,
    pub temporal: TemporalFeatures,
    pub extended: ExtendedFeatures,
    /// Set on oversampled copies produced by dataset balancing.
    #[serde(default)]
    pub duplicate: bool,
}

/// Run the extractor over flows of one capture: flows are ordered by end
/// time, pushed into a fresh state and scored at their own end time.
pub fn featurize_flows(flows: Vec<FlowRecord>, cfg: &TemporalConfig) -> Result<Vec<FeaturizedFlow>> {
    let mut flows = flows;
    flows.sort_by(|a, b| {
        (a.end_time_us, a.start_time_us, &a.id).cmp(&(b.end_time_us, b.start_time_us, &b.id))
    });
    let mut state = TemporalState::new(cfg.clone());
    let mut out = Vec::with_capacity(flows.len());
    for flow in flows {
        state.update_window(&flow)?;
        let temporal = state.compute_temporal_features(flow.destination(), flow.end_time_us);
        let extended = extend_features(&flow.flow_features, &temporal)?;
        out.push(FeaturizedFlow {
            flow,
            temporal,
            extended,
            duplicate: false,
        });
    }
    Ok(out)
}
