//! Shared test support: an independent brute-force flow oracle, a seeded
//! random packet-sequence generator, and comparison helpers.
//!
//! The oracle re-implements the flow contract with naive scans and the
//! plain sum-of-squares deviation formula; it shares no code with the
//! library path it checks.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use hsp_core::flow::features::FeatureVector;
use hsp_core::flow::FlowConfig;
use hsp_core::pcap::{PacketRecord, TcpFlags, TransportProtocol};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One oracle flow: raw per-packet data split by direction plus the
/// effective (monotone) timestamps.
#[derive(Debug)]
pub struct OracleFlow {
    pub fwd: Vec<OraclePacket>,
    pub bwd: Vec<OraclePacket>,
    pub arrival_fwd: Vec<bool>,
    pub termination: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct OraclePacket {
    pub ts: u64,
    pub total_len: u32,
    pub payload_len: u32,
    pub header_len: u32,
    pub flags: u8,
    pub window: Option<u16>,
}

type CanonKey = (Ipv4Addr, u16, Ipv4Addr, u16, u8);
type Endpoint = (Ipv4Addr, u16);

fn canon_key(p: &PacketRecord) -> CanonKey {
    let a = (p.src_ip, p.src_port);
    let b = (p.dst_ip, p.dst_port);
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    (x.0, x.1, y.0, y.1, p.protocol.number())
}

struct Building {
    initiator: (Ipv4Addr, u16),
    start: u64,
    last_eff: u64,
    fin_fwd: bool,
    fin_bwd: bool,
    flow: OracleFlow,
    created_at: usize,
}

/// Naive replay of the flow rules: scan packets in order, track open
/// conversations per canonical key, close on RST / completed FIN
/// handshake / expiry / end of capture.
pub fn oracle_flows(packets: &[PacketRecord], cfg: FlowConfig) -> Vec<(usize, OracleFlow)> {
    let mut open: Vec<(Option<Building>, CanonKey)> = Vec::new();
    let mut done: Vec<(usize, OracleFlow)> = Vec::new();
    let mut created = 0usize;

    for p in packets {
        if p.protocol == TransportProtocol::Other {
            continue;
        }
        let key = canon_key(p);
        let slot = open.iter().position(|(_, k)| *k == key);

        // Expiry of the open conversation, judged before the packet joins.
        if let Some(s) = slot {
            if let Some(b) = &open[s].0 {
                let idle = p.timestamp.saturating_sub(b.last_eff);
                let active = p.timestamp.saturating_sub(b.start);
                if idle > cfg.idle_timeout || active > cfg.active_timeout {
                    let mut b = open.remove(s).0.unwrap();
                    b.flow.termination =
                        if idle > cfg.idle_timeout { "IdleTimeout" } else { "ActiveTimeout" };
                    done.push((b.created_at, b.flow));
                }
            }
        }

        let slot = open.iter().position(|(_, k)| *k == key);
        let fins_before;
        let is_fwd;
        match slot {
            None => {
                let b = Building {
                    initiator: (p.src_ip, p.src_port),
                    start: p.timestamp,
                    last_eff: p.timestamp,
                    fin_fwd: false,
                    fin_bwd: false,
                    flow: OracleFlow {
                        fwd: Vec::new(),
                        bwd: Vec::new(),
                        arrival_fwd: Vec::new(),
                        termination: "EndOfCapture",
                    },
                    created_at: created,
                };
                created += 1;
                open.push((Some(b), key));
                let b = open.last_mut().unwrap().0.as_mut().unwrap();
                fins_before = (false, false);
                is_fwd = true;
                push(b, p, true);
            }
            Some(s) => {
                let b = open[s].0.as_mut().unwrap();
                fins_before = (b.fin_fwd, b.fin_bwd);
                is_fwd = (p.src_ip, p.src_port) == b.initiator;
                push(b, p, is_fwd);
            }
        }

        let s = open.iter().position(|(_, k)| *k == key).unwrap();
        let b = open[s].0.as_mut().unwrap();
        if p.protocol == TransportProtocol::Tcp {
            if p.tcp_flags.has(TcpFlags::RST) {
                let mut b = open.remove(s).0.unwrap();
                b.flow.termination = "Rst";
                done.push((b.created_at, b.flow));
                continue;
            }
            if fins_before.0 && fins_before.1 && p.tcp_flags.has(TcpFlags::ACK) {
                let mut b = open.remove(s).0.unwrap();
                b.flow.termination = "FinHandshake";
                done.push((b.created_at, b.flow));
                continue;
            }
            if p.tcp_flags.has(TcpFlags::FIN) {
                if is_fwd {
                    b.fin_fwd = true;
                } else {
                    b.fin_bwd = true;
                }
            }
        }
    }
    for (b, _) in open {
        if let Some(b) = b {
            done.push((b.created_at, b.flow));
        }
    }
    done.sort_by_key(|(at, _)| *at);
    done
}

fn push(b: &mut Building, p: &PacketRecord, fwd: bool) {
    let eff = if p.timestamp < b.last_eff { b.last_eff } else { p.timestamp };
    b.last_eff = eff;
    let op = OraclePacket {
        ts: eff,
        total_len: p.total_len,
        payload_len: p.payload_len,
        header_len: p.header_len,
        flags: p.tcp_flags.0,
        window: p.tcp_window,
    };
    if fwd {
        b.flow.fwd.push(op);
    } else {
        b.flow.bwd.push(op);
    }
    b.flow.arrival_fwd.push(fwd);
}

/// Naive statistics: direct folds and the sum-of-squares deviation form.
pub fn naive_stats(values: &[f64]) -> (f64, f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mut min = values[0];
    let mut max = values[0];
    let mut sum = 0.0;
    for &v in values {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
        sum += v;
    }
    let n = values.len() as f64;
    let mean = sum / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        let sq_sum: f64 = values.iter().map(|v| v * v).sum();
        ((sq_sum - n * mean * mean).max(0.0) / (n - 1.0)).sqrt()
    };
    (min, max, mean, std)
}

#[derive(Debug, PartialEq)]
pub struct OracleFeatures {
    pub ints: Vec<(&'static str, i64)>,
    pub reals: Vec<(&'static str, f64)>,
}

/// Naive feature computation over one oracle flow.
pub fn oracle_features(f: &OracleFlow) -> OracleFeatures {
    let merged: Vec<u64> = {
        let mut fi = 0;
        let mut bi = 0;
        let mut out = Vec::new();
        for &fwd in &f.arrival_fwd {
            if fwd {
                out.push(f.fwd[fi].ts);
                fi += 1;
            } else {
                out.push(f.bwd[bi].ts);
                bi += 1;
            }
        }
        out
    };
    let start = merged.first().copied().unwrap_or(0);
    let end = merged.last().copied().unwrap_or(0);
    let duration = end - start;

    let lens = |pkts: &[OraclePacket]| -> Vec<f64> { pkts.iter().map(|p| f64::from(p.total_len)).collect() };
    let fwd_lens = lens(&f.fwd);
    let bwd_lens = lens(&f.bwd);
    let mut all_lens = fwd_lens.clone();
    all_lens.extend(bwd_lens.iter());

    let gaps = |ts: &[u64]| -> Vec<f64> { ts.windows(2).map(|w| (w[1] - w[0]) as f64).collect() };
    let fwd_ts: Vec<u64> = f.fwd.iter().map(|p| p.ts).collect();
    let bwd_ts: Vec<u64> = f.bwd.iter().map(|p| p.ts).collect();
    let flow_gaps = gaps(&merged);
    let fwd_gaps = gaps(&fwd_ts);
    let bwd_gaps = gaps(&bwd_ts);

    let count_both = |bit: u8| -> i64 {
        f.fwd.iter().chain(f.bwd.iter()).filter(|p| p.flags & bit != 0).count() as i64
    };
    let count_dir = |pkts: &[OraclePacket], bit: u8| -> i64 {
        pkts.iter().filter(|p| p.flags & bit != 0).count() as i64
    };

    let tot_fwd = f.fwd.len() as i64;
    let tot_bwd = f.bwd.len() as i64;
    let sum_len = |pkts: &[OraclePacket]| pkts.iter().map(|p| i64::from(p.total_len)).sum::<i64>();
    let sum_hdr = |pkts: &[OraclePacket]| pkts.iter().map(|p| i64::from(p.header_len)).sum::<i64>();
    let sum_pay = |pkts: &[OraclePacket]| pkts.iter().map(|p| i64::from(p.payload_len)).sum::<i64>();

    let dur_s = duration as f64 / 1e6;
    let rate = |count: i64| if duration > 0 { count as f64 / dur_s } else { 0.0 };
    let byte_rate = if duration > 0 {
        (sum_len(&f.fwd) + sum_len(&f.bwd)) as f64 / dur_s
    } else {
        0.0
    };

    let (fw_min, fw_max, fw_mean, fw_std) = naive_stats(&fwd_lens);
    let (bw_min, bw_max, bw_mean, bw_std) = naive_stats(&bwd_lens);
    let (al_min, al_max, al_mean, al_std) = naive_stats(&all_lens);
    let (fg_min, fg_max, fg_mean, fg_std) = naive_stats(&flow_gaps);
    let (ffg_min, ffg_max, ffg_mean, ffg_std) = naive_stats(&fwd_gaps);
    let (bfg_min, bfg_max, bfg_mean, bfg_std) = naive_stats(&bwd_gaps);

    let seg = |pkts: &[OraclePacket]| {
        if pkts.is_empty() {
            0.0
        } else {
            sum_pay(pkts) as f64 / pkts.len() as f64
        }
    };
    let init_win = |pkts: &[OraclePacket]| pkts.first().and_then(|p| p.window).map(i64::from).unwrap_or(-1);

    use TcpFlags as F;
    OracleFeatures {
        ints: vec![
            ("FlowDuration", duration as i64),
            ("TotFwdPkts", tot_fwd),
            ("TotBwdPkts", tot_bwd),
            ("TotLenFwdPkts", sum_len(&f.fwd)),
            ("TotLenBwdPkts", sum_len(&f.bwd)),
            ("FwdPktLenMin", fw_min as i64),
            ("FwdPktLenMax", fw_max as i64),
            ("BwdPktLenMin", bw_min as i64),
            ("BwdPktLenMax", bw_max as i64),
            ("PktLenMin", al_min as i64),
            ("PktLenMax", al_max as i64),
            ("FlowIATTotal", flow_gaps.iter().map(|&g| g as i64).sum()),
            ("FlowIATMin", fg_min as i64),
            ("FlowIATMax", fg_max as i64),
            ("FwdIATTotal", fwd_gaps.iter().map(|&g| g as i64).sum()),
            ("FwdIATMin", ffg_min as i64),
            ("FwdIATMax", ffg_max as i64),
            ("BwdIATTotal", bwd_gaps.iter().map(|&g| g as i64).sum()),
            ("BwdIATMin", bfg_min as i64),
            ("BwdIATMax", bfg_max as i64),
            ("FINFlagCnt", count_both(F::FIN)),
            ("SYNFlagCnt", count_both(F::SYN)),
            ("RSTFlagCnt", count_both(F::RST)),
            ("PSHFlagCnt", count_both(F::PSH)),
            ("ACKFlagCnt", count_both(F::ACK)),
            ("URGFlagCnt", count_both(F::URG)),
            ("ECEFlagCnt", count_both(F::ECE)),
            ("FwdPSHFlags", count_dir(&f.fwd, F::PSH)),
            ("BwdPSHFlags", count_dir(&f.bwd, F::PSH)),
            ("FwdURGFlags", count_dir(&f.fwd, F::URG)),
            ("BwdURGFlags", count_dir(&f.bwd, F::URG)),
            ("FwdHeaderLen", sum_hdr(&f.fwd)),
            ("BwdHeaderLen", sum_hdr(&f.bwd)),
            ("FwdInitWinByts", init_win(&f.fwd)),
            ("BwdInitWinByts", init_win(&f.bwd)),
        ],
        reals: vec![
            ("FwdPktLenMean", fw_mean),
            ("FwdPktLenStd", fw_std),
            ("BwdPktLenMean", bw_mean),
            ("BwdPktLenStd", bw_std),
            ("PktLenMean", al_mean),
            ("PktLenStd", al_std),
            ("FlowBytsPerS", byte_rate),
            ("FlowPktsPerS", rate(tot_fwd + tot_bwd)),
            ("FwdPktsPerS", rate(tot_fwd)),
            ("BwdPktsPerS", rate(tot_bwd)),
            ("FlowIATMean", fg_mean),
            ("FlowIATStd", fg_std),
            ("FwdIATMean", ffg_mean),
            ("FwdIATStd", ffg_std),
            ("BwdIATMean", bfg_mean),
            ("BwdIATStd", bfg_std),
            ("FwdSegSizeAvg", seg(&f.fwd)),
            ("BwdSegSizeAvg", seg(&f.bwd)),
        ],
    }
}

/// Pull the same named fields out of the library's feature vector.
pub fn library_fields(v: &FeatureVector) -> OracleFeatures {
    OracleFeatures {
        ints: vec![
            ("FlowDuration", v.flow_duration as i64),
            ("TotFwdPkts", v.tot_fwd_pkts as i64),
            ("TotBwdPkts", v.tot_bwd_pkts as i64),
            ("TotLenFwdPkts", v.tot_len_fwd_pkts as i64),
            ("TotLenBwdPkts", v.tot_len_bwd_pkts as i64),
            ("FwdPktLenMin", v.fwd_pkt_len.min as i64),
            ("FwdPktLenMax", v.fwd_pkt_len.max as i64),
            ("BwdPktLenMin", v.bwd_pkt_len.min as i64),
            ("BwdPktLenMax", v.bwd_pkt_len.max as i64),
            ("PktLenMin", v.pkt_len.min as i64),
            ("PktLenMax", v.pkt_len.max as i64),
            ("FlowIATTotal", v.flow_iat_total as i64),
            ("FlowIATMin", v.flow_iat.min as i64),
            ("FlowIATMax", v.flow_iat.max as i64),
            ("FwdIATTotal", v.fwd_iat_total as i64),
            ("FwdIATMin", v.fwd_iat.min as i64),
            ("FwdIATMax", v.fwd_iat.max as i64),
            ("BwdIATTotal", v.bwd_iat_total as i64),
            ("BwdIATMin", v.bwd_iat.min as i64),
            ("BwdIATMax", v.bwd_iat.max as i64),
            ("FINFlagCnt", v.fin_flag_cnt as i64),
            ("SYNFlagCnt", v.syn_flag_cnt as i64),
            ("RSTFlagCnt", v.rst_flag_cnt as i64),
            ("PSHFlagCnt", v.psh_flag_cnt as i64),
            ("ACKFlagCnt", v.ack_flag_cnt as i64),
            ("URGFlagCnt", v.urg_flag_cnt as i64),
            ("ECEFlagCnt", v.ece_flag_cnt as i64),
            ("FwdPSHFlags", v.fwd_psh_flags as i64),
            ("BwdPSHFlags", v.bwd_psh_flags as i64),
            ("FwdURGFlags", v.fwd_urg_flags as i64),
            ("BwdURGFlags", v.bwd_urg_flags as i64),
            ("FwdHeaderLen", v.fwd_header_len as i64),
            ("BwdHeaderLen", v.bwd_header_len as i64),
            ("FwdInitWinByts", v.fwd_init_win_byts),
            ("BwdInitWinByts", v.bwd_init_win_byts),
        ],
        reals: vec![
            ("FwdPktLenMean", v.fwd_pkt_len.mean),
            ("FwdPktLenStd", v.fwd_pkt_len.std),
            ("BwdPktLenMean", v.bwd_pkt_len.mean),
            ("BwdPktLenStd", v.bwd_pkt_len.std),
            ("PktLenMean", v.pkt_len.mean),
            ("PktLenStd", v.pkt_len.std),
            ("FlowBytsPerS", v.flow_byts_per_s),
            ("FlowPktsPerS", v.flow_pkts_per_s),
            ("FwdPktsPerS", v.fwd_pkts_per_s),
            ("BwdPktsPerS", v.bwd_pkts_per_s),
            ("FlowIATMean", v.flow_iat.mean),
            ("FlowIATStd", v.flow_iat.std),
            ("FwdIATMean", v.fwd_iat.mean),
            ("FwdIATStd", v.fwd_iat.std),
            ("BwdIATMean", v.bwd_iat.mean),
            ("BwdIATStd", v.bwd_iat.std),
            ("FwdSegSizeAvg", v.fwd_seg_size_avg),
            ("BwdSegSizeAvg", v.bwd_seg_size_avg),
        ],
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Endpoint pool for random sequences.
fn endpoint(n: u8, port: u16) -> (Ipv4Addr, u16) {
    (Ipv4Addr::new(192, 168, 1, n), port)
}

/// A random, possibly out-of-order, multi-conversation packet sequence:
/// at most `max_packets` packets over at most 3 canonical keys.
pub fn random_sequence(seed: u64, max_packets: usize) -> Vec<PacketRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_keys = rng.gen_range(1..=3usize);
    let keys: Vec<(Endpoint, Endpoint, TransportProtocol)> = (0..n_keys)
        .map(|k| {
            let proto = if rng.gen_bool(0.7) { TransportProtocol::Tcp } else { TransportProtocol::Udp };
            (
                endpoint(10 + k as u8, 40_000 + k as u16),
                endpoint(200, 22 + k as u16),
                proto,
            )
        })
        .collect();
    let n = rng.gen_range(1..=max_packets);
    let mut now: u64 = 1_000_000_000;
    let mut packets = Vec::with_capacity(n);
    for _ in 0..n {
        let (client, server, proto) = keys[rng.gen_range(0..keys.len())];
        let fwd = rng.gen_bool(0.6);
        let (src, dst) = if fwd { (client, server) } else { (server, client) };
        // Mostly small gaps; occasionally jump past the timeouts or run
        // backwards to exercise clamping.
        let roll: f64 = rng.r#gen();
        if roll < 0.08 {
            now += rng.gen_range(15_000_000..40_000_000);
        } else if roll < 0.16 {
            now = now.saturating_sub(rng.gen_range(1..2_000_000));
        } else {
            now += rng.gen_range(0..1_500_000);
        }
        let mut flags = 0u8;
        if proto == TransportProtocol::Tcp {
            flags |= TcpFlags::ACK;
            if rng.gen_bool(0.15) {
                flags |= TcpFlags::PSH;
            }
            if rng.gen_bool(0.05) {
                flags |= TcpFlags::SYN;
            }
            if rng.gen_bool(0.10) {
                flags |= TcpFlags::FIN;
            }
            if rng.gen_bool(0.05) {
                flags |= TcpFlags::RST;
            }
            if rng.gen_bool(0.03) {
                flags |= TcpFlags::URG;
            }
            if rng.gen_bool(0.02) {
                flags |= TcpFlags::ECE;
            }
        }
        let payload = rng.gen_range(0..1500u32);
        let header = if proto == TransportProtocol::Tcp { 54 } else { 42 };
        packets.push(PacketRecord {
            timestamp: now,
            src_ip: src.0,
            dst_ip: dst.0,
            src_port: src.1,
            dst_port: dst.1,
            protocol: proto,
            tcp_flags: TcpFlags(flags),
            payload_len: payload,
            header_len: header,
            total_len: header + payload,
            tcp_window: if proto == TransportProtocol::Tcp {
                Some(rng.gen_range(100..65_000))
            } else {
                None
            },
        });
    }
    packets
}

/// The timeout configuration used by the oracle comparisons; small enough
/// that the generator's long gaps actually split flows.
pub fn oracle_config() -> FlowConfig {
    FlowConfig { active_timeout: 25_000_000, idle_timeout: 10_000_000 }
}
