use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The eight traffic classes the classifier distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrafficClass {
    Benign,
    DDoS,
    DoS,
    Mirai,
    Recon,
    Spoofing,
    WebBased,
    Bruteforce,
}

impl TrafficClass {
    pub const COUNT: usize = 8;

    pub const ALL: [TrafficClass; 8] = [
        TrafficClass::Benign,
        TrafficClass::DDoS,
        TrafficClass::DoS,
        TrafficClass::Mirai,
        TrafficClass::Recon,
        TrafficClass::Spoofing,
        TrafficClass::WebBased,
        TrafficClass::Bruteforce,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Benign => "Benign",
            TrafficClass::DDoS => "DDoS",
            TrafficClass::DoS => "DoS",
            TrafficClass::Mirai => "Mirai",
            TrafficClass::Recon => "Recon",
            TrafficClass::Spoofing => "Spoofing",
            TrafficClass::WebBased => "WebBased",
            TrafficClass::Bruteforce => "Bruteforce",
        }
    }

    pub fn is_attack(self) -> bool {
        self != TrafficClass::Benign
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrafficClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown traffic class {s:?}"))
    }
}
