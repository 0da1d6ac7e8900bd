//! Class labels from capture provenance, filtered by attacker MAC address.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::flow::{FlowRecord, MacAddr};
use crate::temporal::FeaturizedFlow;
use crate::{Error, Result, TrafficClass};

pub const DEFAULT_ATTACKER_MACS: [&str; 9] = [
    "E4:5F:01:55:90:C4",
    "DC:A6:32:C9:E4:D5",
    "DC:A6:32:DC:27:D5",
    "DC:A6:32:C9:E5:EF",
    "DC:A6:32:C9:E4:AB",
    "DC:A6:32:C9:E4:90",
    "DC:A6:32:C9:E5:A4",
    "B0:09:DA:3E:82:6C",
    "AC:17:02:05:34:27",
];

/// Capture-name prefix of each attack subclass and its coarse class.
pub const DEFAULT_CLASS_MAP: [(&str, TrafficClass); 34] = [
    ("BenignTraffic", TrafficClass::Benign),
    ("DDoS-ICMP_Flood", TrafficClass::DDoS),
    ("DDoS-UDP_Flood", TrafficClass::DDoS),
    ("DDoS-TCP_Flood", TrafficClass::DDoS),
    ("DDoS-PSHACK_Flood", TrafficClass::DDoS),
    ("DDoS-SYN_Flood", TrafficClass::DDoS),
    ("DDoS-RSTFINFlood", TrafficClass::DDoS),
    ("DDoS-SynonymousIP_Flood", TrafficClass::DDoS),
    ("DDoS-ICMP_Fragmentation", TrafficClass::DDoS),
    ("DDoS-UDP_Fragmentation", TrafficClass::DDoS),
    ("DDoS-ACK_Fragmentation", TrafficClass::DDoS),
    ("DDoS-HTTP_Flood", TrafficClass::DDoS),
    ("DDoS-SlowLoris", TrafficClass::DDoS),
    ("DoS-UDP_Flood", TrafficClass::DoS),
    ("DoS-TCP_Flood", TrafficClass::DoS),
    ("DoS-SYN_Flood", TrafficClass::DoS),
    ("DoS-HTTP_Flood", TrafficClass::DoS),
    ("Mirai-greeth_flood", TrafficClass::Mirai),
    ("Mirai-udpplain", TrafficClass::Mirai),
    ("Mirai-greip_flood", TrafficClass::Mirai),
    ("Recon-HostDiscovery", TrafficClass::Recon),
    ("Recon-OSScan", TrafficClass::Recon),
    ("Recon-PortScan", TrafficClass::Recon),
    ("Recon-PingSweep", TrafficClass::Recon),
    ("VulnerabilityScan", TrafficClass::Recon),
    ("MITM-ArpSpoofing", TrafficClass::Spoofing),
    ("DNS_Spoofing", TrafficClass::Spoofing),
    ("SqlInjection", TrafficClass::WebBased),
    ("CommandInjection", TrafficClass::WebBased),
    ("Backdoor_Malware", TrafficClass::WebBased),
    ("Uploading_Attack", TrafficClass::WebBased),
    ("XSS", TrafficClass::WebBased),
    ("BrowserHijacking", TrafficClass::WebBased),
    ("DictionaryBruteForce", TrafficClass::Bruteforce),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapping {
    /// Matched case-insensitively against the start of the capture name.
    pub prefix: String,
    pub class: TrafficClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    pub attacker_macs: Vec<MacAddr>,
    pub class_map: Vec<ClassMapping>,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            attacker_macs: DEFAULT_ATTACKER_MACS.iter().map(|m| m.parse().unwrap()).collect(),
            class_map: DEFAULT_CLASS_MAP
                .iter()
                .map(|(p, c)| ClassMapping {
                    prefix: (*p).into(),
                    class: *c,
                })
                .collect(),
        }
    }
}

fn file_name(capture: &str) -> &str {
    capture.rsplit(['/', '\\']).next().unwrap_or(capture)
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_map.iter().any(|m| m.prefix.is_empty()) {
            return Err(Error::Config("class map contains an empty prefix".into()));
        }
        Ok(())
    }

    /// Longest matching prefix wins; returns (class, subclass).
    pub fn classify_capture(&self, capture: &str) -> Option<(TrafficClass, String)> {
        let name = file_name(capture).to_ascii_lowercase();
        self.class_map
            .iter()
            .filter(|m| name.starts_with(&m.prefix.to_ascii_lowercase()))
            .max_by_key(|m| m.prefix.len())
            .map(|m| (m.class, m.prefix.clone()))
    }

    pub fn is_attacker(&self, mac: MacAddr) -> bool {
        self.attacker_macs.contains(&mac)
    }
}

pub trait HasFlow {
    fn flow(&self) -> &FlowRecord;
    fn flow_mut(&mut self) -> &mut FlowRecord;
}

impl HasFlow for FlowRecord {
    fn flow(&self) -> &FlowRecord {
        self
    }
    fn flow_mut(&mut self) -> &mut FlowRecord {
        self
    }
}

impl HasFlow for FeaturizedFlow {
    fn flow(&self) -> &FlowRecord {
        &self.flow
    }
    fn flow_mut(&mut self) -> &mut FlowRecord {
        &mut self.flow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDecision {
    RetainedAttack,
    RetainedBenign,
    Dropped,
    Quarantined,
}

/// Every input flow lands in exactly one bucket.
#[derive(Debug, Clone, Default)]
pub struct LabelingOutcome<T> {
    /// Labeled attack and benign flows, in input order.
    pub retained: Vec<T>,
    pub dropped: Vec<T>,
    pub quarantined: Vec<T>,
    pub counts: LabelCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub retained_attack: usize,
    pub retained_benign: usize,
    pub dropped: usize,
    pub quarantined: usize,
}

pub fn decide(flow: &FlowRecord, cfg: &LabelingConfig) -> (LabelDecision, Option<(TrafficClass, String)>) {
    let Some(class) = flow.capture.as_deref().and_then(|c| cfg.classify_capture(c)) else {
        return (LabelDecision::Quarantined, None);
    };
    let (Some(src), Some(dst)) = (flow.src_mac, flow.dst_mac) else {
        return (LabelDecision::Quarantined, None);
    };
    let attacker = cfg.is_attacker(src) || cfg.is_attacker(dst);
    match (class.0.is_attack(), attacker) {
        (true, true) => (LabelDecision::RetainedAttack, Some(class)),
        (false, false) => (LabelDecision::RetainedBenign, Some(class)),
        _ => (LabelDecision::Dropped, None),
    }
}

/// Attack-capture flows are kept only when the source or destination MAC
/// is an attacker's; benign-capture flows only when neither is. Flows
/// without MACs or from unmapped captures are quarantined.
pub fn filter_and_label<T: HasFlow>(items: Vec<T>, cfg: &LabelingConfig) -> LabelingOutcome<T> {
    let mut out = LabelingOutcome {
        retained: Vec::new(),
        dropped: Vec::new(),
        quarantined: Vec::new(),
        counts: LabelCounts::default(),
    };
    let mut unmapped = BTreeSet::new();
    let mut missing_mac = 0usize;
    for mut item in items {
        let (decision, class) = decide(item.flow(), cfg);
        match decision {
            LabelDecision::RetainedAttack | LabelDecision::RetainedBenign => {
                let (class, sub) = class.expect("retained flows carry a class");
                let f = item.flow_mut();
                f.label = Some(class);
                f.subclass = Some(sub);
                if decision == LabelDecision::RetainedAttack {
                    out.counts.retained_attack += 1;
                } else {
                    out.counts.retained_benign += 1;
                }
                out.retained.push(item);
            }
            LabelDecision::Dropped => {
                out.counts.dropped += 1;
                out.dropped.push(item);
            }
            LabelDecision::Quarantined => {
                let f = item.flow();
                match &f.capture {
                    Some(c) if cfg.classify_capture(c).is_none() => {
                        unmapped.insert(c.clone());
                    }
                    None => {
                        unmapped.insert("<unknown capture>".to_string());
                    }
                    _ => missing_mac += 1,
                }
                out.counts.quarantined += 1;
                out.quarantined.push(item);
            }
        }
    }
    if !unmapped.is_empty() {
        log::warn!(
            "quarantined flows from captures without a class mapping: {}",
            unmapped.into_iter().collect::<Vec<_>>().join(", ")
        );
    }
    if missing_mac > 0 {
        log::warn!("quarantined {missing_mac} flows without MAC metadata");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::pkt;
    use crate::flow::FlowKey;

    fn flow(capture: &str, src: Option<&str>, dst: Option<&str>) -> FlowRecord {
        let p = pkt(0, 60);
        let mut f = FlowRecord::from_packets(FlowKey::from_packet(&p), vec![p]);
        f.capture = Some(capture.into());
        f.src_mac = src.map(|m| m.parse().unwrap());
        f.dst_mac = dst.map(|m| m.parse().unwrap());
        f
    }

    const ATTACKER: &str = "E4:5F:01:55:90:C4";
    const OTHER: &str = "02:00:00:00:00:01";

    #[test]
    fn capture_mapping() {
        let cfg = LabelingConfig::default();
        assert_eq!(cfg.attacker_macs.len(), 9);
        let c = |s: &str| cfg.classify_capture(s).map(|x| x.0);
        assert_eq!(c("DDoS-ICMP_Flood3.pcap"), Some(TrafficClass::DDoS));
        assert_eq!(c("data/DoS-SYN_Flood.pcap"), Some(TrafficClass::DoS));
        assert_eq!(c("SqlInjection.pcap"), Some(TrafficClass::WebBased));
        assert_eq!(c("benigntraffic1.pcap"), Some(TrafficClass::Benign));
        assert_eq!(c("mystery.pcap"), None);
    }

    #[test]
    fn partition_rules() {
        let cfg = LabelingConfig::default();
        let flows = vec![
            flow("DDoS-ICMP_Flood.pcap", Some(ATTACKER), Some(OTHER)),
            flow("DDoS-ICMP_Flood.pcap", Some(OTHER), Some(ATTACKER)),
            flow("DDoS-ICMP_Flood.pcap", Some(OTHER), Some(OTHER)),
            flow("BenignTraffic.pcap", Some(OTHER), Some(OTHER)),
            flow("BenignTraffic.pcap", Some(ATTACKER), Some(OTHER)),
            flow("BenignTraffic.pcap", None, Some(OTHER)),
            flow("unmapped.pcap", Some(ATTACKER), Some(OTHER)),
        ];
        let out = filter_and_label(flows, &cfg);
        assert_eq!(
            out.counts,
            LabelCounts {
                retained_attack: 2,
                retained_benign: 1,
                dropped: 2,
                quarantined: 2
            }
        );
        assert_eq!(out.retained[0].label, Some(TrafficClass::DDoS));
        assert_eq!(out.retained[0].subclass.as_deref(), Some("DDoS-ICMP_Flood"));
        assert_eq!(out.retained[2].label, Some(TrafficClass::Benign));
    }
}
