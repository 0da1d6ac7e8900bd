//! Synthetic pcap captures for four traffic archetypes: benign device
//! chatter, an ICMP flood, a SYN port scan and HTTP requests carrying SQL
//! injection strings.

use std::path::{Path, PathBuf};

use etherparse::PacketBuilder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labeling::DEFAULT_ATTACKER_MACS;
use crate::flow::pcap::CaptureWriter;
use crate::flow::{MacAddr, TcpFlags};
use crate::{Error, Result, TrafficClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    BenignChatter,
    IcmpFlood,
    SynScan,
    HttpInjection,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::BenignChatter,
        Archetype::IcmpFlood,
        Archetype::SynScan,
        Archetype::HttpInjection,
    ];

    /// File name chosen so the default class map labels it.
    pub fn capture_name(self) -> &'static str {
        match self {
            Archetype::BenignChatter => "BenignTraffic-synthetic.pcap",
            Archetype::IcmpFlood => "DDoS-ICMP_Flood-synthetic.pcap",
            Archetype::SynScan => "Recon-PortScan-synthetic.pcap",
            Archetype::HttpInjection => "SqlInjection-synthetic.pcap",
        }
    }

    pub fn class(self) -> TrafficClass {
        match self {
            Archetype::BenignChatter => TrafficClass::Benign,
            Archetype::IcmpFlood => TrafficClass::DDoS,
            Archetype::SynScan => TrafficClass::Recon,
            Archetype::HttpInjection => TrafficClass::WebBased,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Flows per capture that survive MAC filtering.
    pub flows_per_class: usize,
    /// Extra flows per capture that the MAC filter must drop.
    pub noise_flows: usize,
    /// Flow start times are spread over this many seconds.
    pub span_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            flows_per_class: 260,
            noise_flows: 10,
            span_s: 600.0,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCapture {
    pub path: PathBuf,
    pub archetype: Archetype,
    pub flows: usize,
    pub noise_flows: usize,
    pub packets: usize,
}

const BASE_TS_US: u64 = 1_700_000_000_000_000;

struct Host {
    mac: [u8; 6],
    ip: [u8; 4],
}

fn benign_host(i: u8) -> Host {
    Host {
        mac: [0x02, 0x00, 0x5e, 0x10, 0x00, i],
        ip: [192, 168, 1, 100 + i],
    }
}

fn server(i: u8) -> Host {
    Host {
        mac: [0x02, 0x00, 0x5e, 0x20, 0x00, i],
        ip: [192, 168, 1, 10 + i],
    }
}

fn attacker(rng: &mut ChaCha8Rng) -> Host {
    let mac: MacAddr = DEFAULT_ATTACKER_MACS[rng.gen_range(0..7)].parse().unwrap();
    Host {
        mac: mac.0,
        ip: [192, 168, 1, 150 + rng.gen_range(0..7)],
    }
}

struct Pkt {
    ts: u64,
    frame: Vec<u8>,
}

struct Tcp<'a> {
    a: &'a Host,
    b: &'a Host,
    sport: u16,
    dport: u16,
    seq_a: u32,
    seq_b: u32,
}

impl Tcp<'_> {
    fn frame(&mut self, from_a: bool, flags: u8, payload: &[u8]) -> Vec<u8> {
        let (s, d, sp, dp) = if from_a {
            (self.a, self.b, self.sport, self.dport)
        } else {
            (self.b, self.a, self.dport, self.sport)
        };
        let (seq, ack) = if from_a {
            (self.seq_a, self.seq_b)
        } else {
            (self.seq_b, self.seq_a)
        };
        let f = TcpFlags(flags);
        let mut b = PacketBuilder::ethernet2(s.mac, d.mac)
            .ipv4(s.ip, d.ip, if from_a { 64 } else { 128 })
            .tcp(sp, dp, seq, if f.syn() { 64240 } else { 502 });
        if f.syn() {
            b = b.syn();
        }
        if f.ack() {
            b = b.ack(ack);
        }
        if f.psh() {
            b = b.psh();
        }
        if f.fin() {
            b = b.fin();
        }
        if f.rst() {
            b = b.rst();
        }
        let mut out = Vec::with_capacity(b.size(payload.len()));
        b.write(&mut out, payload).expect("frame fits in memory");
        let adv = payload.len() as u32 + u32::from(f.syn() || f.fin());
        if from_a {
            self.seq_a = self.seq_a.wrapping_add(adv);
        } else {
            self.seq_b = self.seq_b.wrapping_add(adv);
        }
        out
    }
}

fn udp_frame(s: &Host, d: &Host, sp: u16, dp: u16, payload: &[u8]) -> Vec<u8> {
    let b = PacketBuilder::ethernet2(s.mac, d.mac).ipv4(s.ip, d.ip, 64).udp(sp, dp);
    let mut out = Vec::with_capacity(b.size(payload.len()));
    b.write(&mut out, payload).expect("frame fits in memory");
    out
}

fn icmp_frame(s_mac: [u8; 6], s_ip: [u8; 4], d: &Host, id: u16, seq: u16, payload: &[u8]) -> Vec<u8> {
    let b = PacketBuilder::ethernet2(s_mac, d.mac)
        .ipv4(s_ip, d.ip, 64)
        .icmpv4_echo_request(id, seq);
    let mut out = Vec::with_capacity(b.size(payload.len()));
    b.write(&mut out, payload).expect("frame fits in memory");
    out
}

const ACK: u8 = TcpFlags::ACK;
const PSH_ACK: u8 = TcpFlags::PSH | TcpFlags::ACK;
const FIN_ACK: u8 = TcpFlags::FIN | TcpFlags::ACK;

fn dns_query(rng: &mut ChaCha8Rng, name: &str, answer: bool) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend_from_slice(&rng.gen::<u16>().to_be_bytes());
    p.extend_from_slice(if answer { &[0x81, 0x80] } else { &[0x01, 0x00] });
    p.extend_from_slice(&[0, 1, 0, u8::from(answer), 0, 0, 0, 0]);
    for label in name.split('.') {
        p.push(label.len() as u8);
        p.extend_from_slice(label.as_bytes());
    }
    p.extend_from_slice(&[0, 0, 1, 0, 1]);
    if answer {
        p.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1, 0, 0, 0x0e, 0x10, 0, 4]);
        p.extend_from_slice(&[93, 184, rng.gen(), rng.gen()]);
    }
    p
}

const BENIGN_PATHS: [&str; 6] = [
    "/index.html",
    "/api/status",
    "/firmware/version.json",
    "/images/logo.png",
    "/camera/snapshot.jpg",
    "/config",
];

const DNS_NAMES: [&str; 5] = [
    "time.google.com",
    "api.smartthings.com",
    "device-metrics-us.amazon.com",
    "connectivitycheck.gstatic.com",
    "mqtt.home.lan",
];

const INJECTIONS: [&str; 8] = [
    "/login.php?user=admin'%20OR%20'1'='1&pass=x",
    "/products.php?id=1%20UNION%20SELECT%20username,password%20FROM%20users--",
    "/item?id=1%20AND%20SLEEP(5)",
    "/search?q=1';DROP%20TABLE%20users;--",
    "/profile?uid=1%20OR%201=1",
    "/news.php?id=-1%20UNION%20SELECT%201,@@version,3--",
    "/cart?item=2'%20AND%20extractvalue(1,concat(0x7e,database()))--",
    "/account?id=1;SELECT%20pg_sleep(3)--",
];

fn http_request(path: &str, host: &[u8; 4], agent: &str) -> Vec<u8> {
    format!(
        "GET {path} HTTP/1.1\r\nHost: {}.{}.{}.{}\r\nUser-Agent: {agent}\r\nAccept: */*\r\nConnection: close\r\n\r\n",
        host[0], host[1], host[2], host[3]
    )
    .into_bytes()
}

fn http_response(rng: &mut ChaCha8Rng, status: &str, body_len: usize) -> Vec<u8> {
    let body: String = (0..body_len)
        .map(|_| *b"abcdefghijklmnopqrstuvwxyz <>/=\"\n".choose(rng).unwrap() as char)
        .collect();
    format!(
        "HTTP/1.1 {status}\r\nServer: nginx\r\nContent-Type: text/html\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .into_bytes()
}

fn gap(rng: &mut ChaCha8Rng, lo_us: u64, hi_us: u64) -> u64 {
    rng.gen_range(lo_us..=hi_us)
}

/// Handshake, one request/response exchange and teardown.
fn http_exchange(
    rng: &mut ChaCha8Rng,
    client: &Host,
    srv: &Host,
    sport: u16,
    request: Vec<u8>,
    response: Vec<u8>,
    mut ts: u64,
    rtt: (u64, u64),
) -> Vec<Pkt> {
    let mut t = Tcp {
        a: client,
        b: srv,
        sport,
        dport: 80,
        seq_a: rng.gen(),
        seq_b: rng.gen(),
    };
    let mut out = Vec::new();
    let mut push = |ts: u64, frame| out.push(Pkt { ts, frame });
    push(ts, t.frame(true, TcpFlags::SYN, &[]));
    ts += gap(rng, rtt.0, rtt.1);
    push(ts, t.frame(false, TcpFlags::SYN | ACK, &[]));
    ts += gap(rng, rtt.0, rtt.1);
    push(ts, t.frame(true, ACK, &[]));
    ts += gap(rng, 50, 500);
    push(ts, t.frame(true, PSH_ACK, &request));
    ts += gap(rng, rtt.0, rtt.1 * 4);
    for chunk in response.chunks(1400) {
        push(ts, t.frame(false, PSH_ACK, chunk));
        ts += gap(rng, 20, 200);
    }
    push(ts, t.frame(true, ACK, &[]));
    ts += gap(rng, 100, 2000);
    push(ts, t.frame(true, FIN_ACK, &[]));
    ts += gap(rng, rtt.0, rtt.1);
    push(ts, t.frame(false, FIN_ACK, &[]));
    ts += gap(rng, rtt.0, rtt.1);
    push(ts, t.frame(true, ACK, &[]));
    out
}

fn benign_flow(rng: &mut ChaCha8Rng, client: &Host, sport: u16, ts: u64) -> Vec<Pkt> {
    let srv = server(rng.gen_range(0..4));
    match rng.gen_range(0..4) {
        0 => {
            let name = DNS_NAMES.choose(rng).unwrap();
            let q = dns_query(rng, name, false);
            let a = dns_query(rng, name, true);
            vec![
                Pkt {
                    ts,
                    frame: udp_frame(client, &srv, sport, 53, &q),
                },
                Pkt {
                    ts: ts + gap(rng, 2_000, 40_000),
                    frame: udp_frame(&srv, client, 53, sport, &a),
                },
            ]
        }
        1 => {
            let path = BENIGN_PATHS.choose(rng).unwrap();
            let body = rng.gen_range(200..2500);
            let req = http_request(path, &srv.ip, "Mozilla/5.0 (X11; Linux armv7l)");
            let resp = http_response(rng, "200 OK", body);
            http_exchange(rng, client, &srv, sport, req, resp, ts, (1_000, 20_000))
        }
        2 => {
            // MQTT publishes over an established session
            let mut t = Tcp {
                a: client,
                b: &srv,
                sport,
                dport: 1883,
                seq_a: rng.gen(),
                seq_b: rng.gen(),
            };
            let mut out = Vec::new();
            let mut ts = ts;
            for _ in 0..rng.gen_range(2..6) {
                let topic = format!("home/sensor{}/temp", rng.gen_range(0..20));
                let value = format!("{:.1}", rng.gen_range(15.0..30.0));
                let mut p = vec![0x30, (2 + topic.len() + value.len()) as u8, 0, topic.len() as u8];
                p.extend_from_slice(topic.as_bytes());
                p.extend_from_slice(value.as_bytes());
                out.push(Pkt {
                    ts,
                    frame: t.frame(true, PSH_ACK, &p),
                });
                ts += gap(rng, 5_000, 30_000);
                out.push(Pkt {
                    ts,
                    frame: t.frame(false, ACK, &[]),
                });
                ts += gap(rng, 500_000, 3_000_000);
            }
            out
        }
        _ => {
            let mut p = vec![0u8; 48];
            p[0] = 0x23;
            rng.fill(&mut p[40..48]);
            let mut r = p.clone();
            r[0] = 0x24;
            rng.fill(&mut r[16..48]);
            vec![
                Pkt {
                    ts,
                    frame: udp_frame(client, &srv, sport, 123, &p),
                },
                Pkt {
                    ts: ts + gap(rng, 5_000, 60_000),
                    frame: udp_frame(&srv, client, 123, sport, &r),
                },
            ]
        }
    }
}

fn icmp_flood_flow(rng: &mut ChaCha8Rng, k: usize, ts: u64) -> Vec<Pkt> {
    let a = attacker(rng);
    let victim = server(0);
    let spoofed = [10, (k >> 16) as u8 + 1, (k >> 8) as u8, k as u8];
    let id = rng.gen();
    let len = rng.gen_range(16..64);
    let fill: u8 = rng.gen();
    let payload: Vec<u8> = (0..len).map(|i| fill.wrapping_add(i as u8)).collect();
    let mut ts = ts;
    (0..20)
        .map(|seq| {
            let p = Pkt {
                ts,
                frame: icmp_frame(a.mac, spoofed, &victim, id, seq, &payload),
            };
            ts += gap(rng, 100, 1_500);
            p
        })
        .collect()
}

fn syn_scan_flow(rng: &mut ChaCha8Rng, a: &Host, sport: u16, ts: u64) -> Vec<Pkt> {
    let target = benign_host(rng.gen_range(0..30));
    let dport = rng.gen_range(1..10_000);
    let mut t = Tcp {
        a,
        b: &target,
        sport,
        dport,
        seq_a: rng.gen(),
        seq_b: 0,
    };
    let mut out = vec![Pkt {
        ts,
        frame: t.frame(true, TcpFlags::SYN, &[]),
    }];
    let reply = ts + gap(rng, 200, 3_000);
    match rng.gen_range(0..10) {
        0..=5 => out.push(Pkt {
            ts: reply,
            frame: t.frame(false, TcpFlags::RST | ACK, &[]),
        }),
        6 | 7 => {
            t.seq_b = rng.gen();
            out.push(Pkt {
                ts: reply,
                frame: t.frame(false, TcpFlags::SYN | ACK, &[]),
            });
            out.push(Pkt {
                ts: reply + gap(rng, 50, 500),
                frame: t.frame(true, TcpFlags::RST, &[]),
            });
        }
        _ => {}
    }
    out
}

fn injection_flow(rng: &mut ChaCha8Rng, a: &Host, sport: u16, ts: u64) -> Vec<Pkt> {
    let srv = server(rng.gen_range(0..2));
    let agent = ["sqlmap/1.7.2#stable (https://sqlmap.org)", "Mozilla/5.0", "python-requests/2.31"]
        .choose(rng)
        .unwrap();
    let req = http_request(INJECTIONS.choose(rng).unwrap(), &srv.ip, agent);
    let status = ["500 Internal Server Error", "200 OK", "403 Forbidden"].choose(rng).unwrap();
    let body = rng.gen_range(50..400);
    let resp = http_response(rng, status, body);
    http_exchange(rng, a, &srv, sport, req, resp, ts, (300, 5_000))
}

/// Flows of one archetype; noise flows carry the wrong MAC side so that
/// MAC filtering removes them.
fn generate(arch: Archetype, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(Vec<Pkt>, bool)> {
    let span_us = (cfg.span_s * 1e6) as u64;
    let total = cfg.flows_per_class + cfg.noise_flows;
    let mut starts: Vec<u64> = (0..total).map(|_| BASE_TS_US + rng.gen_range(0..span_us)).collect();
    starts.sort_unstable();
    let mut order: Vec<bool> = (0..total).map(|i| i < cfg.noise_flows).collect();
    order.shuffle(rng);
    let scanner = attacker(rng);
    let mut flows = Vec::with_capacity(total);
    for (k, (ts, noise)) in starts.into_iter().zip(order).enumerate() {
        let sport = 1024 + (k as u16 % 60_000);
        let pkts = match (arch, noise) {
            (Archetype::BenignChatter, false) => {
                let client = benign_host(rng.gen_range(0..30));
                benign_flow(rng, &client, sport, ts)
            }
            (Archetype::BenignChatter, true) => {
                let a = attacker(rng);
                benign_flow(rng, &a, sport, ts)
            }
            (_, true) => {
                let client = benign_host(rng.gen_range(0..30));
                benign_flow(rng, &client, sport, ts)
            }
            (Archetype::IcmpFlood, false) => icmp_flood_flow(rng, k, ts),
            (Archetype::SynScan, false) => syn_scan_flow(rng, &scanner, sport, ts),
            (Archetype::HttpInjection, false) => {
                let a = attacker(rng);
                injection_flow(rng, &a, sport, ts)
            }
        };
        flows.push((pkts, noise));
    }
    flows
}

/// Writes one capture per archetype into `dir`.
pub fn write_synthetic_captures(dir: &Path, cfg: &SynthConfig) -> Result<Vec<SynthCapture>> {
    if cfg.flows_per_class == 0 {
        return Err(Error::Config("flows_per_class must be positive".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (i, arch) in Archetype::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64 * 0x9e37));
        let flows = generate(arch, cfg, &mut rng);
        let noise = flows.iter().filter(|f| f.1).count();
        let mut pkts: Vec<Pkt> = flows.into_iter().flat_map(|f| f.0).collect();
        pkts.sort_by_key(|p| p.ts);
        let path = dir.join(arch.capture_name());
        let mut w = CaptureWriter::create(&path)?;
        for p in &pkts {
            w.write_frame(p.ts, &p.frame)?;
        }
        w.finish()?;
        out.push(SynthCapture {
            path,
            archetype: arch,
            flows: cfg.flows_per_class,
            noise_flows: noise,
            packets: pkts.len(),
        });
    }
    Ok(out)
}
