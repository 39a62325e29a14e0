//! Bidirectional flow assembly.
//!
//! Packets are grouped by canonical 5-tuple; the endpoint that sent the
//! first observed packet of a flow is its forward direction. A flow ends on
//! an RST, on a completed FIN handshake, when its idle or active timeout
//! expires, or at end of capture.

pub mod csv;
pub mod features;

use std::collections::HashMap;
use std::net::Ipv4Addr;

use crate::pcap::{PacketRecord, TcpFlags, TransportProtocol};

/// Canonical flow key: both directions of a conversation map to the same
/// value because the endpoint pairs are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowKey {
    pub ip_a: Ipv4Addr,
    pub port_a: u16,
    pub ip_b: Ipv4Addr,
    pub port_b: u16,
    pub protocol: TransportProtocol,
}

impl FlowKey {
    pub fn of(pkt: &PacketRecord) -> FlowKey {
        let src = (pkt.src_ip, pkt.src_port);
        let dst = (pkt.dst_ip, pkt.dst_port);
        let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
        FlowKey {
            ip_a: a.0,
            port_a: a.1,
            ip_b: b.0,
            port_b: b.1,
            protocol: pkt.protocol,
        }
    }
}

/// The per-packet data a flow keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowPacket {
    /// Effective timestamp: clamped so that it never precedes the previous
    /// packet of the flow (see `FlowDiagnostics::negative_gap_clamps`).
    pub timestamp: u64,
    pub total_len: u32,
    pub payload_len: u32,
    pub header_len: u32,
    pub tcp_flags: TcpFlags,
    pub tcp_window: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Termination {
    FinHandshake,
    Rst,
    ActiveTimeout,
    IdleTimeout,
    EndOfCapture,
}

/// One finalized bidirectional flow.
#[derive(Debug, Clone)]
pub struct Flow {
    pub key: FlowKey,
    /// Initiator endpoint (sender of the first packet).
    pub fwd_ip: Ipv4Addr,
    pub fwd_port: u16,
    pub bwd_ip: Ipv4Addr,
    pub bwd_port: u16,
    pub start_ts: u64,
    pub end_ts: u64,
    pub fwd_packets: Vec<FlowPacket>,
    pub bwd_packets: Vec<FlowPacket>,
    pub termination: Termination,
    /// Arrival-order directions (true = forward), used for the merged
    /// inter-arrival timeline.
    pub order: Vec<bool>,
}

impl Flow {
    pub fn packet_count(&self) -> usize {
        self.fwd_packets.len() + self.bwd_packets.len()
    }

    /// Merged per-flow timestamps in arrival order.
    pub fn merged_timestamps(&self) -> Vec<u64> {
        let mut fwd = self.fwd_packets.iter();
        let mut bwd = self.bwd_packets.iter();
        self.order
            .iter()
            .map(|&is_fwd| {
                if is_fwd {
                    fwd.next().expect("order is consistent").timestamp
                } else {
                    bwd.next().expect("order is consistent").timestamp
                }
            })
            .collect()
    }
}

/// Flow expiry thresholds, both in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub active_timeout: u64,
    pub idle_timeout: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        // 120 s each, matching the flow meter convention this CSV contract
        // follows. Overridable from the CLI.
        FlowConfig {
            active_timeout: 120_000_000,
            idle_timeout: 120_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct FlowDiagnostics {
    /// Packets whose timestamp preceded the previous packet of their flow;
    /// their effective timestamp was clamped to keep per-flow time monotone
    /// (equivalently: negative inter-arrival gaps clamped to zero).
    pub negative_gap_clamps: u64,
    /// Packets with a transport other than TCP/UDP, which do not form flows.
    pub non_flow_packets: u64,
}

/// Output of `assemble_flows`.
#[derive(Debug)]
pub struct FlowSet {
    /// Flows in creation order (order of their first packet).
    pub flows: Vec<Flow>,
    pub diagnostics: FlowDiagnostics,
}

impl FlowSet {
    pub fn termination_counts(&self) -> std::collections::BTreeMap<Termination, u64> {
        let mut counts = std::collections::BTreeMap::new();
        for flow in &self.flows {
            *counts.entry(flow.termination).or_insert(0) += 1;
        }
        counts
    }
}

struct OpenFlow {
    flow: Flow,
    fin_fwd: bool,
    fin_bwd: bool,
    last_ts: u64,
}

impl OpenFlow {
    fn new(pkt: &PacketRecord) -> OpenFlow {
        let mut flow = Flow {
            key: FlowKey::of(pkt),
            fwd_ip: pkt.src_ip,
            fwd_port: pkt.src_port,
            bwd_ip: pkt.dst_ip,
            bwd_port: pkt.dst_port,
            start_ts: pkt.timestamp,
            end_ts: pkt.timestamp,
            fwd_packets: Vec::new(),
            bwd_packets: Vec::new(),
            termination: Termination::EndOfCapture,
            order: Vec::new(),
        };
        push_packet(&mut flow, pkt, true, pkt.timestamp);
        OpenFlow {
            flow,
            fin_fwd: false,
            fin_bwd: false,
            last_ts: pkt.timestamp,
        }
    }

    fn is_forward(&self, pkt: &PacketRecord) -> bool {
        (pkt.src_ip, pkt.src_port) == (self.flow.fwd_ip, self.flow.fwd_port)
    }
}

fn push_packet(flow: &mut Flow, pkt: &PacketRecord, forward: bool, effective_ts: u64) {
    let fp = FlowPacket {
        timestamp: effective_ts,
        total_len: pkt.total_len,
        payload_len: pkt.payload_len,
        header_len: pkt.header_len,
        tcp_flags: pkt.tcp_flags,
        tcp_window: pkt.tcp_window,
    };
    if forward {
        flow.fwd_packets.push(fp);
    } else {
        flow.bwd_packets.push(fp);
    }
    flow.order.push(forward);
    flow.end_ts = effective_ts;
}

/// Group a capture-ordered packet stream into finalized flows.
///
/// Only TCP and UDP packets form flows; others are counted in the
/// diagnostics. Timestamps are data, not ordering keys: packets join flows
/// in stream order, and a timestamp that runs backwards within a flow is
/// clamped to the flow's previous timestamp.
pub fn assemble_flows(packets: &[PacketRecord], cfg: FlowConfig) -> FlowSet {
    let mut open: HashMap<FlowKey, OpenFlow> = HashMap::new();
    let mut closed: Vec<Flow> = Vec::new();
    let mut creation_order: Vec<FlowKey> = Vec::new();
    let mut diagnostics = FlowDiagnostics::default();
    // Flows are emitted in creation order; this tracks where each open
    // flow should land when it closes.
    let mut slots: HashMap<FlowKey, usize> = HashMap::new();
    let mut emitted: Vec<Option<Flow>> = Vec::new();

    let close = |emitted: &mut Vec<Option<Flow>>, slots: &mut HashMap<FlowKey, usize>, of: OpenFlow, cause: Termination| {
        let mut flow = of.flow;
        flow.termination = cause;
        let slot = slots.remove(&flow.key).expect("open flow has a slot");
        emitted[slot] = Some(flow);
    };

    for pkt in packets {
        if pkt.protocol == TransportProtocol::Other {
            diagnostics.non_flow_packets += 1;
            continue;
        }
        let key = FlowKey::of(pkt);

        if let Some(of) = open.get(&key) {
            let idle_expired = pkt.timestamp.saturating_sub(of.last_ts) > cfg.idle_timeout;
            let active_expired = pkt.timestamp.saturating_sub(of.flow.start_ts) > cfg.active_timeout;
            if idle_expired || active_expired {
                let cause = if idle_expired {
                    Termination::IdleTimeout
                } else {
                    Termination::ActiveTimeout
                };
                let of = open.remove(&key).unwrap();
                close(&mut emitted, &mut slots, of, cause);
            }
        }

        match open.get_mut(&key) {
            None => {
                let of = OpenFlow::new(pkt);
                slots.insert(key, emitted.len());
                emitted.push(None);
                creation_order.push(key);
                open.insert(key, of);
                // A first packet can itself carry RST (or complete nothing);
                // handle its termination flags below via re-borrow.
            }
            Some(of) => {
                let forward = of.is_forward(pkt);
                let effective_ts = if pkt.timestamp < of.last_ts {
                    diagnostics.negative_gap_clamps += 1;
                    of.last_ts
                } else {
                    pkt.timestamp
                };
                push_packet(&mut of.flow, pkt, forward, effective_ts);
                of.last_ts = effective_ts;
            }
        }

        // Termination checks for the packet just added.
        let of = open.get_mut(&key).expect("flow exists");
        if pkt.protocol == TransportProtocol::Tcp {
            if pkt.tcp_flags.has(TcpFlags::RST) {
                let of = open.remove(&key).unwrap();
                close(&mut emitted, &mut slots, of, Termination::Rst);
                continue;
            }
            // The final ACK of a FIN handshake: both directions have
            // already sent FIN before this packet.
            if of.fin_fwd && of.fin_bwd && pkt.tcp_flags.has(TcpFlags::ACK) {
                let of = open.remove(&key).unwrap();
                close(&mut emitted, &mut slots, of, Termination::FinHandshake);
                continue;
            }
            if pkt.tcp_flags.has(TcpFlags::FIN) {
                let forward = of.is_forward(pkt);
                if forward {
                    of.fin_fwd = true;
                } else {
                    of.fin_bwd = true;
                }
            }
        }
    }

    for key in &creation_order {
        if let Some(of) = open.remove(key) {
            let slot = slots.remove(key).expect("open flow has a slot");
            let mut flow = of.flow;
            flow.termination = Termination::EndOfCapture;
            emitted[slot] = Some(flow);
        }
    }
    closed.extend(emitted.into_iter().flatten());

    FlowSet {
        flows: closed,
        diagnostics,
    }
}
