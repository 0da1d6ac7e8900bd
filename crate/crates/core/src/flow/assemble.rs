use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{FlowKey, FlowRecord, LookupKey, PacketRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub max_packets: usize,
    pub idle_timeout_us: u64,
    /// Packets arriving up to this much earlier than the newest packet seen
    /// are re-sequenced before assignment.
    pub reorder_window_us: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            max_packets: 20,
            idle_timeout_us: 120_000_000,
            reorder_window_us: 0,
        }
    }
}

struct Active {
    key: FlowKey,
    last_ts: u64,
    packets: Vec<PacketRecord>,
}

/// Single-writer flow table. Feed packets with [`push`](Self::push), collect
/// closed flows with [`take_closed`](Self::take_closed) and flush the rest
/// with [`finish`](Self::finish).
pub struct FlowAssembler {
    cfg: FlowConfig,
    capture: String,
    active: BTreeMap<LookupKey, Active>,
    reorder: VecDeque<PacketRecord>,
    clock: u64,
    last_sweep: u64,
    next_seq: u64,
    closed: Vec<FlowRecord>,
    late_packets: u64,
}

const SWEEP_INTERVAL_US: u64 = 1_000_000;

impl FlowAssembler {
    pub fn new(cfg: FlowConfig, capture: impl Into<String>) -> Self {
        assert!(cfg.max_packets >= 1, "max_packets must be at least 1");
        Self {
            cfg,
            capture: capture.into(),
            active: BTreeMap::new(),
            reorder: VecDeque::new(),
            clock: 0,
            last_sweep: 0,
            next_seq: 0,
            closed: Vec::new(),
            late_packets: 0,
        }
    }

    pub fn push(&mut self, p: PacketRecord) {
        let newest = self
            .reorder
            .back()
            .map(|q| q.timestamp_us)
            .unwrap_or(0)
            .max(self.clock);
        if p.timestamp_us < newest.saturating_sub(self.cfg.reorder_window_us) {
            self.late_packets += 1;
        }
        let pos = self
            .reorder
            .partition_point(|q| q.timestamp_us <= p.timestamp_us);
        self.reorder.insert(pos, p);
        let newest = self.reorder.back().map(|q| q.timestamp_us).unwrap_or(0);
        let horizon = newest.saturating_sub(self.cfg.reorder_window_us);
        while self
            .reorder
            .front()
            .is_some_and(|q| q.timestamp_us <= horizon)
        {
            let q = self.reorder.pop_front().expect("checked non-empty");
            self.assign(q);
        }
    }

    /// Flows closed so far (in close order).
    pub fn take_closed(&mut self) -> Vec<FlowRecord> {
        std::mem::take(&mut self.closed)
    }

    /// Packets that arrived later than the reorder window allowed.
    pub fn late_packets(&self) -> u64 {
        self.late_packets
    }

    pub fn active_flows(&self) -> usize {
        self.active.len()
    }

    /// Close every remaining flow (stream end) and return all flows not yet
    /// taken.
    pub fn finish(mut self) -> Vec<FlowRecord> {
        while let Some(q) = self.reorder.pop_front() {
            self.assign(q);
        }
        let mut rest: Vec<Active> = std::mem::take(&mut self.active).into_values().collect();
        rest.sort_by_key(|a| (a.packets[0].timestamp_us, a.key));
        for a in rest {
            self.close(a);
        }
        self.closed
    }

    fn assign(&mut self, p: PacketRecord) {
        let ts = p.timestamp_us;
        self.clock = self.clock.max(ts);
        if self.clock.saturating_sub(self.last_sweep) >= SWEEP_INTERVAL_US {
            self.sweep();
            self.last_sweep = self.clock;
        }

        let key = FlowKey::from_packet(&p);
        let lk = key.lookup();
        if let Some(a) = self.active.get(&lk) {
            if ts.saturating_sub(a.last_ts) >= self.cfg.idle_timeout_us {
                let a = self.active.remove(&lk).expect("present");
                self.close(a);
            }
        }
        let a = self.active.entry(lk).or_insert_with(|| Active {
            key,
            last_ts: ts,
            packets: Vec::with_capacity(4),
        });
        a.last_ts = a.last_ts.max(ts);
        a.packets.push(p);
        if a.packets.len() >= self.cfg.max_packets {
            let a = self.active.remove(&lk).expect("present");
            self.close(a);
        }
    }

    fn sweep(&mut self) {
        let now = self.clock;
        let timeout = self.cfg.idle_timeout_us;
        let expired: Vec<LookupKey> = self
            .active
            .iter()
            .filter(|(_, a)| now.saturating_sub(a.last_ts) >= timeout)
            .map(|(k, _)| *k)
            .collect();
        for k in expired {
            let a = self.active.remove(&k).expect("present");
            self.close(a);
        }
    }

    fn close(&mut self, a: Active) {
        let mut rec = FlowRecord::from_packets(a.key, a.packets);
        rec.id = format!("{}#{}", self.capture, self.next_seq);
        rec.capture = Some(self.capture.clone());
        self.next_seq += 1;
        self.closed.push(rec);
    }
}

/// Assemble an ordered packet stream into flows with default capture name.
pub fn assemble_flows(
    packets: impl IntoIterator<Item = PacketRecord>,
    cfg: FlowConfig,
) -> Vec<FlowRecord> {
    let mut asm = FlowAssembler::new(cfg, "stream");
    let mut out = Vec::new();
    for p in packets {
        asm.push(p);
        out.append(&mut asm.take_closed());
    }
    out.extend(asm.finish());
    out
}
