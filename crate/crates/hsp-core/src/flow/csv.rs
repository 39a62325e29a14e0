//! Deterministic flow CSV serialization.
//!
//! One header line with the canonical columns, one row per flow. Integer
//! columns print as integers; real-valued columns print with six
//! significant digits. Writing the same flows twice produces byte-identical
//! files. Reading rebuilds the derived reals (rates and means) from the
//! integer primitives, so loaded vectors satisfy the domain constraints at
//! full precision.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use super::features::{reconstruct_derived, FeatureVector, StatSummary, COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("header mismatch: expected canonical flow columns, got {0:?}")]
    Header(String),
}

/// Format with six significant digits, plain decimal notation, no trailing
/// zeros. Zero prints as "0".
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = 5 - exp;
    if decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, x);
        trim_fraction_zeros(s)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    }
}

fn trim_fraction_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn stat_fields(s: &StatSummary, out: &mut Vec<String>) {
    // Min and max of length/IAT lists are integral by construction.
    out.push(format!("{}", s.min as i64));
    out.push(format!("{}", s.max as i64));
    out.push(fmt_sig6(s.mean));
    out.push(fmt_sig6(s.std));
}

fn iat_fields(total: u64, s: &StatSummary, out: &mut Vec<String>) {
    out.push(format!("{total}"));
    out.push(fmt_sig6(s.mean));
    out.push(fmt_sig6(s.std));
    out.push(format!("{}", s.min as i64));
    out.push(format!("{}", s.max as i64));
}

/// Serialize one flow as its CSV fields, in `COLUMNS` order.
pub fn csv_fields(v: &FeatureVector) -> Vec<String> {
    let mut f = Vec::with_capacity(COLUMNS.len());
    f.push(format!("{}", v.flow_duration));
    f.push(format!("{}", v.tot_fwd_pkts));
    f.push(format!("{}", v.tot_bwd_pkts));
    f.push(format!("{}", v.tot_len_fwd_pkts));
    f.push(format!("{}", v.tot_len_bwd_pkts));
    stat_fields(&v.fwd_pkt_len, &mut f);
    stat_fields(&v.bwd_pkt_len, &mut f);
    stat_fields(&v.pkt_len, &mut f);
    f.push(fmt_sig6(v.flow_byts_per_s));
    f.push(fmt_sig6(v.flow_pkts_per_s));
    f.push(fmt_sig6(v.fwd_pkts_per_s));
    f.push(fmt_sig6(v.bwd_pkts_per_s));
    iat_fields(v.flow_iat_total, &v.flow_iat, &mut f);
    iat_fields(v.fwd_iat_total, &v.fwd_iat, &mut f);
    iat_fields(v.bwd_iat_total, &v.bwd_iat, &mut f);
    for cnt in [
        v.fin_flag_cnt,
        v.syn_flag_cnt,
        v.rst_flag_cnt,
        v.psh_flag_cnt,
        v.ack_flag_cnt,
        v.urg_flag_cnt,
        v.ece_flag_cnt,
        v.fwd_psh_flags,
        v.bwd_psh_flags,
        v.fwd_urg_flags,
        v.bwd_urg_flags,
        v.fwd_header_len,
        v.bwd_header_len,
    ] {
        f.push(format!("{cnt}"));
    }
    f.push(fmt_sig6(v.fwd_seg_size_avg));
    f.push(fmt_sig6(v.bwd_seg_size_avg));
    f.push(format!("{}", v.fwd_init_win_byts));
    f.push(format!("{}", v.bwd_init_win_byts));
    f.push(format!("{}", v.src_port));
    f.push(format!("{}", v.dst_port));
    f.push(format!("{}", v.protocol));
    f.push(v.src_ip.to_string());
    f.push(v.dst_ip.to_string());
    f.push(format!("{}", v.timestamp));
    f
}

pub fn write_flows<W: Write>(mut out: W, flows: &[FeatureVector]) -> io::Result<usize> {
    writeln!(out, "{}", COLUMNS.join(","))?;
    for v in flows {
        writeln!(out, "{}", csv_fields(v).join(","))?;
    }
    Ok(flows.len())
}

/// Write the canonical flow CSV; returns the number of rows written.
pub fn write_flow_csv(flows: &[FeatureVector], path: &Path) -> Result<usize, CsvError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let n = write_flows(&mut w, flows)?;
    w.flush()?;
    Ok(n)
}

struct FieldParser<'a> {
    fields: &'a [&'a str],
    idx: usize,
    line: usize,
}

impl<'a> FieldParser<'a> {
    fn take(&mut self) -> Result<&'a str, CsvError> {
        let s = self.fields.get(self.idx).copied().ok_or(CsvError::Parse {
            line: self.line,
            msg: "too few fields".to_string(),
        })?;
        self.idx += 1;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CsvError> {
        let s = self.take()?;
        s.parse().map_err(|_| self.bad(s, "integer"))
    }

    fn i64(&mut self) -> Result<i64, CsvError> {
        let s = self.take()?;
        s.parse().map_err(|_| self.bad(s, "integer"))
    }

    fn f64(&mut self) -> Result<f64, CsvError> {
        let s = self.take()?;
        s.parse().map_err(|_| self.bad(s, "number"))
    }

    fn ip(&mut self) -> Result<Ipv4Addr, CsvError> {
        let s = self.take()?;
        s.parse().map_err(|_| self.bad(s, "IPv4 address"))
    }

    fn stat(&mut self) -> Result<StatSummary, CsvError> {
        Ok(StatSummary {
            min: self.i64()? as f64,
            max: self.i64()? as f64,
            mean: self.f64()?,
            std: self.f64()?,
        })
    }

    fn iat(&mut self) -> Result<(u64, StatSummary), CsvError> {
        let total = self.u64()?;
        let mean = self.f64()?;
        let std = self.f64()?;
        let min = self.i64()? as f64;
        let max = self.i64()? as f64;
        Ok((total, StatSummary { min, max, mean, std }))
    }

    fn bad(&self, value: &str, expected: &str) -> CsvError {
        CsvError::Parse {
            line: self.line,
            msg: format!("field {}: expected {expected}, got {value:?}", self.idx),
        }
    }
}

fn parse_row(fields: &[&str], line: usize) -> Result<FeatureVector, CsvError> {
    if fields.len() != COLUMNS.len() {
        return Err(CsvError::Parse {
            line,
            msg: format!("expected {} fields, got {}", COLUMNS.len(), fields.len()),
        });
    }
    let mut p = FieldParser { fields, idx: 0, line };
    let flow_duration = p.u64()?;
    let tot_fwd_pkts = p.u64()?;
    let tot_bwd_pkts = p.u64()?;
    let tot_len_fwd_pkts = p.u64()?;
    let tot_len_bwd_pkts = p.u64()?;
    let fwd_pkt_len = p.stat()?;
    let bwd_pkt_len = p.stat()?;
    let pkt_len = p.stat()?;
    let flow_byts_per_s = p.f64()?;
    let flow_pkts_per_s = p.f64()?;
    let fwd_pkts_per_s = p.f64()?;
    let bwd_pkts_per_s = p.f64()?;
    let (flow_iat_total, flow_iat) = p.iat()?;
    let (fwd_iat_total, fwd_iat) = p.iat()?;
    let (bwd_iat_total, bwd_iat) = p.iat()?;
    let fin_flag_cnt = p.u64()?;
    let syn_flag_cnt = p.u64()?;
    let rst_flag_cnt = p.u64()?;
    let psh_flag_cnt = p.u64()?;
    let ack_flag_cnt = p.u64()?;
    let urg_flag_cnt = p.u64()?;
    let ece_flag_cnt = p.u64()?;
    let fwd_psh_flags = p.u64()?;
    let bwd_psh_flags = p.u64()?;
    let fwd_urg_flags = p.u64()?;
    let bwd_urg_flags = p.u64()?;
    let fwd_header_len = p.u64()?;
    let bwd_header_len = p.u64()?;
    let fwd_seg_size_avg = p.f64()?;
    let bwd_seg_size_avg = p.f64()?;
    let fwd_init_win_byts = p.i64()?;
    let bwd_init_win_byts = p.i64()?;
    let src_port = p.u64()? as u16;
    let dst_port = p.u64()? as u16;
    let protocol = p.u64()? as u8;
    let src_ip = p.ip()?;
    let dst_ip = p.ip()?;
    let timestamp = p.u64()?;
    Ok(FeatureVector {
        flow_duration,
        tot_fwd_pkts,
        tot_bwd_pkts,
        tot_len_fwd_pkts,
        tot_len_bwd_pkts,
        fwd_pkt_len,
        bwd_pkt_len,
        pkt_len,
        flow_byts_per_s,
        flow_pkts_per_s,
        fwd_pkts_per_s,
        bwd_pkts_per_s,
        flow_iat_total,
        flow_iat,
        fwd_iat_total,
        fwd_iat,
        bwd_iat_total,
        bwd_iat,
        fin_flag_cnt,
        syn_flag_cnt,
        rst_flag_cnt,
        psh_flag_cnt,
        ack_flag_cnt,
        urg_flag_cnt,
        ece_flag_cnt,
        fwd_psh_flags,
        bwd_psh_flags,
        fwd_urg_flags,
        bwd_urg_flags,
        fwd_header_len,
        bwd_header_len,
        fwd_seg_size_avg,
        bwd_seg_size_avg,
        fwd_init_win_byts,
        bwd_init_win_byts,
        src_port,
        dst_port,
        protocol,
        src_ip,
        dst_ip,
        timestamp,
    })
}

/// Read a canonical flow CSV back into feature vectors.
pub fn read_flow_csv(path: &Path) -> Result<Vec<FeatureVector>, CsvError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(CsvError::Header(String::new())),
    };
    if header != COLUMNS.join(",") {
        return Err(CsvError::Header(header));
    }
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let mut row = parse_row(&fields, i + 1)?;
        // Six-significant-digit serialization truncates the derived reals;
        // rebuild them from the exact integer primitives.
        reconstruct_derived(&mut row);
        rows.push(row);
    }
    Ok(rows)
}
