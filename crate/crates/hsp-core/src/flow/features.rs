//! Canonical per-flow feature vector.
//!
//! Column names and order define the flow CSV contract; `sanitize` in the
//! dataset module later drops the identifier columns before any model sees
//! the data.

use std::net::Ipv4Addr;

use super::Flow;

/// Min/max/mean/sample-std summary. Empty input yields all zeros; a single
/// value yields std 0. The std divisor is n−1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn stat_summary(values: &[f64]) -> StatSummary {
    if values.is_empty() {
        return StatSummary { min: 0.0, max: 0.0, mean: 0.0, std: 0.0 };
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    let n = values.len() as f64;
    let mean = sum / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        // Two-pass sample standard deviation.
        let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    StatSummary { min, max, mean, std }
}

/// Flow CSV column names in canonical order.
pub const COLUMNS: [&str; 59] = [
    "FlowDuration",
    "TotFwdPkts",
    "TotBwdPkts",
    "TotLenFwdPkts",
    "TotLenBwdPkts",
    "FwdPktLenMin",
    "FwdPktLenMax",
    "FwdPktLenMean",
    "FwdPktLenStd",
    "BwdPktLenMin",
    "BwdPktLenMax",
    "BwdPktLenMean",
    "BwdPktLenStd",
    "PktLenMin",
    "PktLenMax",
    "PktLenMean",
    "PktLenStd",
    "FlowBytsPerS",
    "FlowPktsPerS",
    "FwdPktsPerS",
    "BwdPktsPerS",
    "FlowIATTotal",
    "FlowIATMean",
    "FlowIATStd",
    "FlowIATMin",
    "FlowIATMax",
    "FwdIATTotal",
    "FwdIATMean",
    "FwdIATStd",
    "FwdIATMin",
    "FwdIATMax",
    "BwdIATTotal",
    "BwdIATMean",
    "BwdIATStd",
    "BwdIATMin",
    "BwdIATMax",
    "FINFlagCnt",
    "SYNFlagCnt",
    "RSTFlagCnt",
    "PSHFlagCnt",
    "ACKFlagCnt",
    "URGFlagCnt",
    "ECEFlagCnt",
    "FwdPSHFlags",
    "BwdPSHFlags",
    "FwdURGFlags",
    "BwdURGFlags",
    "FwdHeaderLen",
    "BwdHeaderLen",
    "FwdSegSizeAvg",
    "BwdSegSizeAvg",
    "FwdInitWinByts",
    "BwdInitWinByts",
    "SrcPort",
    "DstPort",
    "Protocol",
    "SrcIP",
    "DstIP",
    "Timestamp",
];

/// The six identifier columns dropped before training (the init-window
/// columns are dropped by `sanitize` as well).
pub const IDENTIFIER_COLUMNS: [&str; 6] =
    ["SrcPort", "DstPort", "Protocol", "SrcIP", "DstIP", "Timestamp"];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub flow_duration: u64,
    pub tot_fwd_pkts: u64,
    pub tot_bwd_pkts: u64,
    pub tot_len_fwd_pkts: u64,
    pub tot_len_bwd_pkts: u64,
    pub fwd_pkt_len: StatSummary,
    pub bwd_pkt_len: StatSummary,
    pub pkt_len: StatSummary,
    pub flow_byts_per_s: f64,
    pub flow_pkts_per_s: f64,
    pub fwd_pkts_per_s: f64,
    pub bwd_pkts_per_s: f64,
    pub flow_iat_total: u64,
    pub flow_iat: StatSummary,
    pub fwd_iat_total: u64,
    pub fwd_iat: StatSummary,
    pub bwd_iat_total: u64,
    pub bwd_iat: StatSummary,
    pub fin_flag_cnt: u64,
    pub syn_flag_cnt: u64,
    pub rst_flag_cnt: u64,
    pub psh_flag_cnt: u64,
    pub ack_flag_cnt: u64,
    pub urg_flag_cnt: u64,
    pub ece_flag_cnt: u64,
    pub fwd_psh_flags: u64,
    pub bwd_psh_flags: u64,
    pub fwd_urg_flags: u64,
    pub bwd_urg_flags: u64,
    pub fwd_header_len: u64,
    pub bwd_header_len: u64,
    pub fwd_seg_size_avg: f64,
    pub bwd_seg_size_avg: f64,
    pub fwd_init_win_byts: i64,
    pub bwd_init_win_byts: i64,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub timestamp: u64,
}

impl FeatureVector {
    /// All 59 columns as numbers, in `COLUMNS` order. IPs are encoded as
    /// their 32-bit integer value.
    pub fn to_numeric_row(&self) -> Vec<f64> {
        vec![
            self.flow_duration as f64,
            self.tot_fwd_pkts as f64,
            self.tot_bwd_pkts as f64,
            self.tot_len_fwd_pkts as f64,
            self.tot_len_bwd_pkts as f64,
            self.fwd_pkt_len.min,
            self.fwd_pkt_len.max,
            self.fwd_pkt_len.mean,
            self.fwd_pkt_len.std,
            self.bwd_pkt_len.min,
            self.bwd_pkt_len.max,
            self.bwd_pkt_len.mean,
            self.bwd_pkt_len.std,
            self.pkt_len.min,
            self.pkt_len.max,
            self.pkt_len.mean,
            self.pkt_len.std,
            self.flow_byts_per_s,
            self.flow_pkts_per_s,
            self.fwd_pkts_per_s,
            self.bwd_pkts_per_s,
            self.flow_iat_total as f64,
            self.flow_iat.mean,
            self.flow_iat.std,
            self.flow_iat.min,
            self.flow_iat.max,
            self.fwd_iat_total as f64,
            self.fwd_iat.mean,
            self.fwd_iat.std,
            self.fwd_iat.min,
            self.fwd_iat.max,
            self.bwd_iat_total as f64,
            self.bwd_iat.mean,
            self.bwd_iat.std,
            self.bwd_iat.min,
            self.bwd_iat.max,
            self.fin_flag_cnt as f64,
            self.syn_flag_cnt as f64,
            self.rst_flag_cnt as f64,
            self.psh_flag_cnt as f64,
            self.ack_flag_cnt as f64,
            self.urg_flag_cnt as f64,
            self.ece_flag_cnt as f64,
            self.fwd_psh_flags as f64,
            self.bwd_psh_flags as f64,
            self.fwd_urg_flags as f64,
            self.bwd_urg_flags as f64,
            self.fwd_header_len as f64,
            self.bwd_header_len as f64,
            self.fwd_seg_size_avg,
            self.bwd_seg_size_avg,
            self.fwd_init_win_byts as f64,
            self.bwd_init_win_byts as f64,
            f64::from(self.src_port),
            f64::from(self.dst_port),
            f64::from(self.protocol),
            f64::from(u32::from(self.src_ip)),
            f64::from(u32::from(self.dst_ip)),
            self.timestamp as f64,
        ]
    }

    /// The 53 non-identifier features, in column order.
    pub fn numeric_feature_row(&self) -> Vec<f64> {
        let mut row = self.to_numeric_row();
        row.truncate(COLUMNS.len() - IDENTIFIER_COLUMNS.len());
        row
    }
}

/// The non-identifier feature column names, in order.
pub fn numeric_feature_columns() -> &'static [&'static str] {
    &COLUMNS[..COLUMNS.len() - IDENTIFIER_COLUMNS.len()]
}

/// Rebuild the derived real-valued fields (rates, packet-length means,
/// IAT means) from the exact integer primitives, using the same formulas
/// as `compute_features`. The CSV serializes reals with six significant
/// digits, so a loaded vector needs this to satisfy the domain
/// constraints at full precision again.
pub fn reconstruct_derived(v: &mut FeatureVector) {
    let per = |total: u64, count: u64| if count > 0 { total as f64 / count as f64 } else { 0.0 };
    let iat = |total: u64, count: u64| if count >= 2 { total as f64 / (count - 1) as f64 } else { 0.0 };
    let pkts = v.tot_fwd_pkts + v.tot_bwd_pkts;
    let bytes = v.tot_len_fwd_pkts + v.tot_len_bwd_pkts;
    if v.flow_duration > 0 {
        let dur_s = v.flow_duration as f64 / 1e6;
        v.flow_byts_per_s = bytes as f64 / dur_s;
        v.flow_pkts_per_s = pkts as f64 / dur_s;
        v.fwd_pkts_per_s = v.tot_fwd_pkts as f64 / dur_s;
        v.bwd_pkts_per_s = v.tot_bwd_pkts as f64 / dur_s;
    } else {
        v.flow_byts_per_s = 0.0;
        v.flow_pkts_per_s = 0.0;
        v.fwd_pkts_per_s = 0.0;
        v.bwd_pkts_per_s = 0.0;
    }
    v.fwd_pkt_len.mean = per(v.tot_len_fwd_pkts, v.tot_fwd_pkts);
    v.bwd_pkt_len.mean = per(v.tot_len_bwd_pkts, v.tot_bwd_pkts);
    v.pkt_len.mean = per(bytes, pkts);
    v.flow_iat.mean = iat(v.flow_iat_total, pkts);
    v.fwd_iat.mean = iat(v.fwd_iat_total, v.tot_fwd_pkts);
    v.bwd_iat.mean = iat(v.bwd_iat_total, v.tot_bwd_pkts);
}

fn gaps(timestamps: &[u64]) -> Vec<f64> {
    timestamps
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64)
        .collect()
}

/// Compute the canonical features of a finalized flow.
///
/// Rates use the duration in seconds and are zero for zero-duration flows.
/// Packet-length statistics are over `total_len`. IAT statistics are over
/// consecutive gaps per direction, and over the merged arrival timeline for
/// the flow-level fields; a direction with fewer than two packets has all
/// IAT fields zero.
pub fn compute_features(flow: &Flow) -> FeatureVector {
    let fwd_lens: Vec<f64> = flow.fwd_packets.iter().map(|p| f64::from(p.total_len)).collect();
    let bwd_lens: Vec<f64> = flow.bwd_packets.iter().map(|p| f64::from(p.total_len)).collect();
    let all_lens: Vec<f64> = fwd_lens.iter().chain(bwd_lens.iter()).copied().collect();

    let tot_fwd_pkts = flow.fwd_packets.len() as u64;
    let tot_bwd_pkts = flow.bwd_packets.len() as u64;
    let tot_len_fwd_pkts: u64 = flow.fwd_packets.iter().map(|p| u64::from(p.total_len)).sum();
    let tot_len_bwd_pkts: u64 = flow.bwd_packets.iter().map(|p| u64::from(p.total_len)).sum();

    let flow_duration = flow.end_ts - flow.start_ts;
    let dur_s = flow_duration as f64 / 1e6;
    let rate = |count: f64| if flow_duration > 0 { count / dur_s } else { 0.0 };

    let merged_ts = flow.merged_timestamps();
    let flow_gaps = gaps(&merged_ts);
    let fwd_ts: Vec<u64> = flow.fwd_packets.iter().map(|p| p.timestamp).collect();
    let bwd_ts: Vec<u64> = flow.bwd_packets.iter().map(|p| p.timestamp).collect();
    let fwd_gaps = gaps(&fwd_ts);
    let bwd_gaps = gaps(&bwd_ts);

    let sum_u64 = |gs: &[f64]| gs.iter().map(|&g| g as u64).sum::<u64>();

    let count_flag = |bit: u8| -> u64 {
        flow.fwd_packets
            .iter()
            .chain(flow.bwd_packets.iter())
            .filter(|p| p.tcp_flags.has(bit))
            .count() as u64
    };
    let count_dir_flag = |pkts: &[super::FlowPacket], bit: u8| -> u64 {
        pkts.iter().filter(|p| p.tcp_flags.has(bit)).count() as u64
    };

    let fwd_payload: u64 = flow.fwd_packets.iter().map(|p| u64::from(p.payload_len)).sum();
    let bwd_payload: u64 = flow.bwd_packets.iter().map(|p| u64::from(p.payload_len)).sum();
    let seg_avg = |payload: u64, count: u64| if count > 0 { payload as f64 / count as f64 } else { 0.0 };

    let init_win = |pkts: &[super::FlowPacket]| -> i64 {
        pkts.first()
            .and_then(|p| p.tcp_window)
            .map(i64::from)
            .unwrap_or(-1)
    };

    use crate::pcap::TcpFlags as F;
    FeatureVector {
        flow_duration,
        tot_fwd_pkts,
        tot_bwd_pkts,
        tot_len_fwd_pkts,
        tot_len_bwd_pkts,
        fwd_pkt_len: stat_summary(&fwd_lens),
        bwd_pkt_len: stat_summary(&bwd_lens),
        pkt_len: stat_summary(&all_lens),
        flow_byts_per_s: rate((tot_len_fwd_pkts + tot_len_bwd_pkts) as f64),
        flow_pkts_per_s: rate((tot_fwd_pkts + tot_bwd_pkts) as f64),
        fwd_pkts_per_s: rate(tot_fwd_pkts as f64),
        bwd_pkts_per_s: rate(tot_bwd_pkts as f64),
        flow_iat_total: sum_u64(&flow_gaps),
        flow_iat: stat_summary(&flow_gaps),
        fwd_iat_total: sum_u64(&fwd_gaps),
        fwd_iat: stat_summary(&fwd_gaps),
        bwd_iat_total: sum_u64(&bwd_gaps),
        bwd_iat: stat_summary(&bwd_gaps),
        fin_flag_cnt: count_flag(F::FIN),
        syn_flag_cnt: count_flag(F::SYN),
        rst_flag_cnt: count_flag(F::RST),
        psh_flag_cnt: count_flag(F::PSH),
        ack_flag_cnt: count_flag(F::ACK),
        urg_flag_cnt: count_flag(F::URG),
        ece_flag_cnt: count_flag(F::ECE),
        fwd_psh_flags: count_dir_flag(&flow.fwd_packets, F::PSH),
        bwd_psh_flags: count_dir_flag(&flow.bwd_packets, F::PSH),
        fwd_urg_flags: count_dir_flag(&flow.fwd_packets, F::URG),
        bwd_urg_flags: count_dir_flag(&flow.bwd_packets, F::URG),
        fwd_header_len: flow.fwd_packets.iter().map(|p| u64::from(p.header_len)).sum(),
        bwd_header_len: flow.bwd_packets.iter().map(|p| u64::from(p.header_len)).sum(),
        fwd_seg_size_avg: seg_avg(fwd_payload, tot_fwd_pkts),
        bwd_seg_size_avg: seg_avg(bwd_payload, tot_bwd_pkts),
        fwd_init_win_byts: init_win(&flow.fwd_packets),
        bwd_init_win_byts: init_win(&flow.bwd_packets),
        src_port: flow.fwd_port,
        dst_port: flow.bwd_port,
        protocol: flow.key.protocol.number(),
        src_ip: flow.fwd_ip,
        dst_ip: flow.bwd_ip,
        timestamp: flow.start_ts,
    }
}
