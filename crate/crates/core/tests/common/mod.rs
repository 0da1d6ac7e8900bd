//! Fixtures and slow reference implementations shared by the integration
//! tests. Nothing in here calls into the code under test except to build
//! plain input records.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{IpAddr, Ipv4Addr};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use hetnid::flow::{Direction, MacAddr, Protocol, TcpFlags};
use hetnid::model::GraphSample;
use hetnid::{FlowKey, FlowRecord, ModelConfig, PacketRecord, TemporalConfig};

pub fn ip(last: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, 0, last))
}

pub fn packet(
    ts: u64,
    src: (IpAddr, u16),
    dst: (IpAddr, u16),
    protocol: Protocol,
    flags: u8,
    payload: Vec<u8>,
) -> PacketRecord {
    let transport_header = match protocol {
        Protocol::Tcp => 20,
        Protocol::Udp | Protocol::Icmp => 8,
        Protocol::Other(_) => 0,
    };
    let payload_size = payload.len() as u32;
    PacketRecord {
        timestamp_us: ts,
        src_ip: src.0,
        dst_ip: dst.0,
        src_port: src.1,
        dst_port: dst.1,
        src_mac: Some(MacAddr([2, 0, 0, 0, 0, 1])),
        dst_mac: Some(MacAddr([2, 0, 0, 0, 0, 2])),
        protocol,
        tcp_flags: TcpFlags(flags),
        ip_layer_size: 20 + transport_header + payload_size,
        transport_layer_size: transport_header + payload_size,
        payload_size,
        ttl: 64,
        tcp_window: if protocol == Protocol::Tcp { 1024 } else { 0 },
        icmp_type: (protocol == Protocol::Icmp).then_some(8),
        direction: Direction::Forward,
        payload,
    }
}

// ---- flow assembly ----

pub fn tag_of(p: &PacketRecord) -> u32 {
    u32::from_le_bytes(p.payload[..4].try_into().expect("tagged payload"))
}

/// A time-ordered stream over a handful of conversations. Each packet
/// carries its stream index in the first four payload bytes.
pub fn fuzz_stream(rng: &mut ChaCha8Rng) -> Vec<PacketRecord> {
    let n_conv = rng.gen_range(1..=4);
    let convs: Vec<((IpAddr, u16), (IpAddr, u16), Protocol)> = (0..n_conv)
        .map(|_| {
            let proto = match rng.gen_range(0..3) {
                0 => Protocol::Tcp,
                1 => Protocol::Udp,
                _ => Protocol::Icmp,
            };
            let ports = proto != Protocol::Icmp;
            let a = (ip(rng.gen_range(1..4)), if ports { rng.gen_range(40000..40003) } else { 0 });
            let b = (ip(rng.gen_range(4..6)), if ports { [53, 80, 443][rng.gen_range(0..3)] } else { 0 });
            (a, b, proto)
        })
        .collect();
    let len = rng.gen_range(1..=80);
    let mut ts = rng.gen_range(0..1_000_000u64);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        ts += match rng.gen_range(0..10) {
            0 => 0,
            1 => 120_000_000,
            2 => 119_999_999,
            3 => rng.gen_range(100_000_000..300_000_000),
            _ => rng.gen_range(0..5_000_000),
        };
        let (a, b, proto) = convs[rng.gen_range(0..convs.len())];
        let (src, dst) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let mut payload = (i as u32).to_le_bytes().to_vec();
        payload.extend((0..rng.gen_range(0..40)).map(|_| rng.gen::<u8>()));
        out.push(packet(ts, src, dst, proto, rng.gen::<u8>() & 0x3f, payload));
    }
    out
}

fn conversation(p: &PacketRecord) -> ((IpAddr, u16), (IpAddr, u16), u8) {
    let icmp = p.protocol == Protocol::Icmp;
    let a = (p.src_ip, if icmp { 0 } else { p.src_port });
    let b = (p.dst_ip, if icmp { 0 } else { p.dst_port });
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (lo, hi, p.protocol.ip_number())
}

/// Straightforward flow metering: one open flow per conversation, closed
/// when the next packet arrives `idle_us` or more after the previous one,
/// or when it reaches `max_packets`. Returns packet tags per flow, sorted.
pub fn reference_flows(stream: &[PacketRecord], max_packets: usize, idle_us: u64) -> Vec<Vec<u32>> {
    let mut open: HashMap<_, (u64, Vec<u32>)> = HashMap::new();
    let mut done = Vec::new();
    for p in stream {
        let k = conversation(p);
        if let Some((last, _)) = open.get(&k) {
            if p.timestamp_us - *last >= idle_us {
                done.push(open.remove(&k).unwrap().1);
            }
        }
        let e = open.entry(k).or_insert((p.timestamp_us, Vec::new()));
        e.0 = p.timestamp_us;
        e.1.push(tag_of(p));
        if e.1.len() == max_packets {
            done.push(open.remove(&k).unwrap().1);
        }
    }
    done.extend(open.into_values().map(|v| v.1));
    done.sort();
    done
}

// ---- payload ----

pub fn reference_payload(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for i in 0..1500 {
        out.push(if i < bytes.len() { bytes[i] } else { 0 });
    }
    out
}

// ---- temporal ----

/// A generated flow plus the facts the generator knows about it.
pub struct ScheduledFlow {
    pub record: FlowRecord,
    pub dest: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    /// (forward?, flags) for every packet.
    pub packets: Vec<(bool, u8)>,
}

const PORT_POOL: [u16; 10] = [53, 80, 443, 8080, 23, 445, 3389, 1883, 5000, 8000];

pub fn schedule(rng: &mut ChaCha8Rng, n_flows: usize, span_us: u64) -> Vec<ScheduledFlow> {
    let mut flows = Vec::with_capacity(n_flows);
    for _ in 0..n_flows {
        let protocol = match rng.gen_range(0..5) {
            0 | 1 => Protocol::Tcp,
            2 | 3 => Protocol::Udp,
            _ => Protocol::Icmp,
        };
        let icmp = protocol == Protocol::Icmp;
        let client = ip(rng.gen_range(1..6));
        let dest = ip(rng.gen_range(100..103));
        let src_port = if icmp { 0 } else { rng.gen_range(50000..50006) };
        let dst_port = if icmp { 0 } else { PORT_POOL[rng.gen_range(0..PORT_POOL.len())] };
        let start = rng.gen_range(0..span_us);
        let n = rng.gen_range(1..=20);
        let mut ts = start;
        let mut pkts = Vec::with_capacity(n);
        let mut facts = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                ts += match rng.gen_range(0..4) {
                    0 => 0,
                    _ => rng.gen_range(0..3_000_000),
                };
            }
            let forward = i == 0 || rng.gen_bool(0.6);
            let flags = if protocol == Protocol::Tcp { rng.gen::<u8>() & 0x3f } else { 0 };
            let (s, d) = if forward {
                ((client, src_port), (dest, dst_port))
            } else {
                ((dest, dst_port), (client, src_port))
            };
            pkts.push(packet(ts, s, d, protocol, flags, vec![0; rng.gen_range(0..20)]));
            facts.push((forward, flags));
        }
        let record = FlowRecord::from_packets(FlowKey::from_packet(&pkts[0]), pkts);
        flows.push(ScheduledFlow {
            record,
            dest,
            src_port,
            dst_port,
            protocol,
            packets: facts,
        });
    }
    flows
}

/// Recount of the 16 rolling features for `dest` over flows whose end time
/// lies in `(at - W, at]`, straight from the generator's facts.
pub fn brute_force_temporal(flows: &[ScheduledFlow], dest: IpAddr, at: u64, cfg: &TemporalConfig) -> [f64; 16] {
    let in_window = |end: u64| end <= at && (end as i128) > at as i128 - cfg.window_us as i128;
    let (mut udp, mut tcp, mut ack, mut fin, mut rst, mut bfin, mut psh, mut syn, mut icmp) = (0, 0, 0, 0, 0, 0, 0, 0, 0);
    let (mut http, mut dns, mut vuln, mut fwd, mut all) = (0, 0, false, 0, 0);
    let mut durations = Vec::new();
    let mut ports = BTreeSet::new();
    for f in flows {
        if f.dest != dest || !in_window(f.record.end_time_us) {
            continue;
        }
        let first = f.record.packets.first().unwrap().timestamp_us;
        let last = f.record.packets.last().unwrap().timestamp_us;
        durations.push((last - first) as f64 / 1e6);
        ports.insert(f.src_port);
        let has_ports = f.protocol != Protocol::Icmp;
        if has_ports && cfg.http_ports.contains(&f.dst_port) {
            http += 1;
        }
        if has_ports && cfg.vulnerable_ports.contains(&f.dst_port) {
            vuln = true;
        }
        for (forward, flags) in &f.packets {
            all += 1;
            let is = |bit: u8| flags & bit != 0;
            if !forward {
                if f.protocol == Protocol::Tcp && is(TcpFlags::FIN) {
                    bfin += 1;
                }
                continue;
            }
            fwd += 1;
            match f.protocol {
                Protocol::Udp => udp += 1,
                Protocol::Icmp => icmp += 1,
                Protocol::Tcp => {
                    tcp += 1;
                    ack += is(TcpFlags::ACK) as u32;
                    fin += is(TcpFlags::FIN) as u32;
                    rst += is(TcpFlags::RST) as u32;
                    psh += is(TcpFlags::PSH) as u32;
                    syn += is(TcpFlags::SYN) as u32;
                }
                Protocol::Other(_) => {}
            }
            if has_ports && f.dst_port == cfg.dns_port {
                dns += 1;
            }
        }
    }
    let avg = if durations.is_empty() {
        0.0
    } else {
        durations.iter().sum::<f64>() / durations.len() as f64
    };
    [
        udp as f64,
        tcp as f64,
        ack as f64,
        fin as f64,
        rst as f64,
        bfin as f64,
        psh as f64,
        syn as f64,
        icmp as f64,
        http as f64,
        avg,
        dns as f64,
        if vuln { 1.0 } else { 0.0 },
        fwd as f64,
        all as f64,
        ports.len() as f64,
    ]
}

// ---- graphs ----

/// Kahn's algorithm over packet nodes; true when the edges form one simple
/// path visiting every node once.
pub fn is_simple_path(n: usize, edges: &[(usize, usize)]) -> bool {
    if edges.len() + 1 != n {
        return false;
    }
    let mut indeg = vec![0; n];
    let mut outdeg = vec![0; n];
    let mut next = vec![None; n];
    for (a, b) in edges {
        if *a >= n || *b >= n || a == b {
            return false;
        }
        indeg[*b] += 1;
        outdeg[*a] += 1;
        next[*a] = Some(*b);
    }
    if indeg.iter().chain(&outdeg).any(|d| *d > 1) {
        return false;
    }
    let starts: Vec<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
    if starts.len() != 1 {
        return false;
    }
    let mut seen = 1;
    let mut cur = starts[0];
    while let Some(nx) = next[cur] {
        seen += 1;
        cur = nx;
        if seen > n {
            return false;
        }
    }
    seen == n
}

// ---- metrics ----

/// Unweighted mean of per-class F1 over classes that occur in `labels`.
pub fn naive_macro_f1(pred: &[usize], labels: &[usize]) -> f64 {
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for c in &classes {
        let tp = pred.iter().zip(labels).filter(|(p, y)| *p == c && *y == c).count() as f64;
        let fp = pred.iter().zip(labels).filter(|(p, y)| *p == c && *y != c).count() as f64;
        let fn_ = pred.iter().zip(labels).filter(|(p, y)| *p != c && *y == c).count() as f64;
        total += if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    }
    total / classes.len() as f64
}

// ---- model fixtures ----

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        flow_dim: 3,
        payload_dim: 4,
        contain_dim: 2,
        link_dim: 1,
        hidden: 4,
        layer1_heads: 2,
        layer2_heads: 1,
        head_dims: vec![3],
        classes: 3,
        ..ModelConfig::default()
    }
}

pub fn random_sample(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, label: usize) -> GraphSample {
    let mut m = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
    let packets = m(n, cfg.payload_dim);
    let contain = m(n, cfg.contain_dim);
    let link = m(n - 1, cfg.link_dim);
    GraphSample {
        id: format!("g{}", rng.gen::<u32>()),
        flow: Array1::from_shape_fn(cfg.flow_dim, |_| rng.gen_range(-1.0..1.0)),
        packets,
        contain,
        link,
        label: Some(label),
    }
}

/// Init params nudged off their defaults, with non-trivial running stats.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> hetnid::ModelParams {
    use rand::SeedableRng;
    let mut p = hetnid::ModelParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in p.tensors.values_mut() {
        t.mapv_inplace(|v| v + rng.gen_range(-0.3..0.3));
    }
    for r in p.running.values_mut() {
        r.mean.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        r.var.mapv_inplace(|_| rng.gen_range(0.5..2.0));
    }
    p
}

/// ||a - b|| / max(||a||, ||b||), with a floor on the denominator.
pub fn rel_err<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        d += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    d.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}

// ---- counting ----

/// Occurrences of each key.
pub fn count_by<T, K: Ord>(items: &[T], key: impl Fn(&T) -> K) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(key(it)).or_default() += 1;
    }
    m
}
