//! Capture file ingestion (classic pcap and pcapng, either byte order) and
//! frame decoding into [`PacketRecord`]s. Also a small writer used by the
//! synthetic traffic generator.

use std::fs::File;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use etherparse::{LinkSlice, NetSlice, SlicedPacket, TransportSlice};
use pcap_parser::pcapng::Block;
use pcap_parser::{create_reader, Linktype, PcapBlockOwned, PcapError};
use serde::{Deserialize, Serialize};

use super::packet::{Direction, MacAddr, PacketRecord, Protocol, TcpFlags};
use crate::{Error, Result};

/// Counters accumulated while reading one capture.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcapStats {
    pub frames: u64,
    pub accepted: u64,
    pub skipped_non_ip: u64,
    pub malformed: u64,
}

/// Outcome of decoding a single link-layer frame.
#[derive(Debug)]
pub enum Frame {
    Packet(PacketRecord),
    NonIp,
    Malformed,
}

/// Read every IP packet of a capture in capture order.
pub fn parse_pcap(path: &Path) -> Result<(Vec<PacketRecord>, PcapStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = create_reader(1 << 20, file).map_err(|e| Error::Pcap {
        path: path.to_path_buf(),
        msg: format!("unrecognised capture header: {e:?}"),
    })?;

    let mut stats = PcapStats::default();
    let mut packets = Vec::new();
    // classic pcap state
    let mut legacy_linktype = Linktype::ETHERNET;
    let mut legacy_nanos = false;
    // pcapng state: (linktype, ts offset, units per second) per interface
    let mut interfaces: Vec<(Linktype, u64, u64)> = Vec::new();
    let mut last_ts = 0u64;

    loop {
        match reader.next() {
            Ok((offset, block)) => {
                let decoded = match block {
                    PcapBlockOwned::LegacyHeader(h) => {
                        legacy_linktype = h.network;
                        legacy_nanos = h.is_nanosecond_precision();
                        None
                    }
                    PcapBlockOwned::Legacy(b) => {
                        let frac = if legacy_nanos {
                            b.ts_usec as u64 / 1000
                        } else {
                            b.ts_usec as u64
                        };
                        let ts = b.ts_sec as u64 * 1_000_000 + frac;
                        Some(decode_frame(legacy_linktype, ts, b.data))
                    }
                    PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                        let resol = idb.ts_resolution().unwrap_or(1_000_000);
                        let offset = idb.ts_offset().max(0) as u64;
                        interfaces.push((idb.linktype, offset, resol));
                        None
                    }
                    PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                        let (lt, off, resol) = interfaces
                            .get(epb.if_id as usize)
                            .copied()
                            .unwrap_or((Linktype::ETHERNET, 0, 1_000_000));
                        let (secs, frac) = epb.decode_ts(off, resol);
                        let ts = secs as u64 * 1_000_000
                            + (frac as u128 * 1_000_000 / resol.max(1) as u128) as u64;
                        let caplen = (epb.caplen as usize).min(epb.data.len());
                        Some(decode_frame(lt, ts, &epb.data[..caplen]))
                    }
                    PcapBlockOwned::NG(Block::SimplePacket(spb)) => {
                        let lt = interfaces.first().map(|i| i.0).unwrap_or(Linktype::ETHERNET);
                        let len = (spb.origlen as usize).min(spb.data.len());
                        Some(decode_frame(lt, last_ts, &spb.data[..len]))
                    }
                    PcapBlockOwned::NG(_) => None,
                };
                if let Some(frame) = decoded {
                    stats.frames += 1;
                    match frame {
                        Frame::Packet(p) => {
                            stats.accepted += 1;
                            last_ts = p.timestamp_us;
                            packets.push(p);
                        }
                        Frame::NonIp => stats.skipped_non_ip += 1,
                        Frame::Malformed => stats.malformed += 1,
                    }
                }
                reader.consume(offset);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete(_)) => {
                reader.refill().map_err(|e| Error::Pcap {
                    path: path.to_path_buf(),
                    msg: format!("read failed: {e:?}"),
                })?;
            }
            Err(e) => {
                // A trailing partial record counts as one malformed frame.
                log::warn!("{}: stopping at unreadable block: {e:?}", path.display());
                stats.malformed += 1;
                break;
            }
        }
    }
    log::debug!("{}: {:?}", path.display(), stats);
    Ok((packets, stats))
}

/// All `.pcap` / `.pcapng` / `.cap` files under `dir`, sorted by path.
pub fn list_captures(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && matches!(ext, "pcap" | "pcapng" | "cap") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn decode_frame(linktype: Linktype, timestamp_us: u64, data: &[u8]) -> Frame {
    let sliced = if linktype == Linktype::ETHERNET {
        SlicedPacket::from_ethernet(data)
    } else if linktype == Linktype::RAW
        || linktype == Linktype::IPV4
        || linktype == Linktype::IPV6
    {
        SlicedPacket::from_ip(data)
    } else if linktype == Linktype::LINUX_SLL {
        SlicedPacket::from_linux_sll(data)
    } else if linktype == Linktype::NULL || linktype == Linktype::LOOP {
        if data.len() < 4 {
            return Frame::Malformed;
        }
        SlicedPacket::from_ip(&data[4..])
    } else {
        return Frame::NonIp;
    };
    let sliced = match sliced {
        Ok(s) => s,
        Err(_) => return Frame::Malformed,
    };

    let (src_mac, dst_mac) = match &sliced.link {
        Some(LinkSlice::Ethernet2(eth)) => {
            (Some(MacAddr(eth.source())), Some(MacAddr(eth.destination())))
        }
        _ => (None, None),
    };

    let (src_ip, dst_ip, ip_layer_size, ttl, ip_payload) = match &sliced.net {
        Some(NetSlice::Ipv4(v4)) => {
            let h = v4.header();
            (
                IpAddr::V4(h.source_addr()),
                IpAddr::V4(h.destination_addr()),
                h.total_len() as u32,
                h.ttl(),
                v4.payload(),
            )
        }
        Some(NetSlice::Ipv6(v6)) => {
            let h = v6.header();
            (
                IpAddr::V6(h.source_addr()),
                IpAddr::V6(h.destination_addr()),
                40 + h.payload_length() as u32,
                h.hop_limit(),
                v6.payload(),
            )
        }
        None => return Frame::NonIp,
    };

    let mut rec = PacketRecord {
        timestamp_us,
        src_ip,
        dst_ip,
        src_port: 0,
        dst_port: 0,
        src_mac,
        dst_mac,
        protocol: Protocol::from_ip_number(ip_payload.ip_number.0),
        tcp_flags: TcpFlags::default(),
        ip_layer_size,
        transport_layer_size: ip_payload.payload.len() as u32,
        payload_size: 0,
        ttl,
        tcp_window: 0,
        icmp_type: None,
        direction: Direction::Forward,
        payload: Vec::new(),
    };

    match &sliced.transport {
        Some(TransportSlice::Tcp(tcp)) => {
            let mut f = TcpFlags::default();
            for (set, bit) in [
                (tcp.fin(), TcpFlags::FIN),
                (tcp.syn(), TcpFlags::SYN),
                (tcp.rst(), TcpFlags::RST),
                (tcp.psh(), TcpFlags::PSH),
                (tcp.ack(), TcpFlags::ACK),
                (tcp.urg(), TcpFlags::URG),
            ] {
                if set {
                    f = f.with(bit);
                }
            }
            rec.protocol = Protocol::Tcp;
            rec.src_port = tcp.source_port();
            rec.dst_port = tcp.destination_port();
            rec.tcp_flags = f;
            rec.tcp_window = tcp.window_size();
            rec.transport_layer_size = tcp.slice().len() as u32;
            rec.payload = tcp.payload().to_vec();
        }
        Some(TransportSlice::Udp(udp)) => {
            rec.protocol = Protocol::Udp;
            rec.src_port = udp.source_port();
            rec.dst_port = udp.destination_port();
            rec.transport_layer_size = udp.slice().len() as u32;
            rec.payload = udp.payload().to_vec();
        }
        Some(TransportSlice::Icmpv4(icmp)) => {
            rec.protocol = Protocol::Icmp;
            rec.icmp_type = Some(icmp.type_u8());
            rec.transport_layer_size = icmp.slice().len() as u32;
            rec.payload = icmp.payload().to_vec();
        }
        Some(TransportSlice::Icmpv6(icmp)) => {
            rec.protocol = Protocol::Icmp;
            rec.icmp_type = Some(icmp.type_u8());
            rec.transport_layer_size = icmp.slice().len() as u32;
            rec.payload = icmp.payload().to_vec();
        }
        None => {
            rec.payload = ip_payload.payload.to_vec();
        }
    }
    rec.payload_size = rec.payload.len() as u32;
    Frame::Packet(rec)
}

/// Writes classic little-endian microsecond pcap files with Ethernet framing.
pub struct CaptureWriter {
    inner: pcap_file::pcap::PcapWriter<std::io::BufWriter<File>>,
    path: PathBuf,
}

impl CaptureWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let inner = pcap_file::pcap::PcapWriter::new(std::io::BufWriter::new(file)).map_err(|e| {
            Error::Pcap {
                path: path.to_path_buf(),
                msg: e.to_string(),
            }
        })?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write_frame(&mut self, timestamp_us: u64, frame: &[u8]) -> Result<()> {
        let pkt = pcap_file::pcap::PcapPacket::new(
            Duration::from_micros(timestamp_us),
            frame.len() as u32,
            frame,
        );
        self.inner.write_packet(&pkt).map_err(|e| Error::Pcap {
            path: self.path.clone(),
            msg: e.to_string(),
        })?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let mut w = self.inner.into_writer();
        w.flush().map_err(|e| Error::io(&self.path, e))
    }
}
