//! Flow labeling, feature sanitization and train/test splitting.
//!
//! Labels come from an ordered, line-oriented rule file (first match wins,
//! a catch-all default is mandatory). Sanitization drops identifier and
//! init-window columns, encodes ports as IANA range categories, drops rows
//! with missing values and removes duplicate rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::flow::csv::csv_fields;
use crate::flow::features::{FeatureVector, COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Benign,
    Malicious,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Benign => write!(f, "benign"),
            Label::Malicious => write!(f, "malicious"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("rule file has no catch-all default rule")]
    NoDefaultRule,
    #[error("rule file line {line}: {msg}")]
    RuleParse { line: usize, msg: String },
    #[error("missing expected column {0:?}")]
    UnknownColumn(String),
    #[error("split fraction {0} outside (0,1)")]
    InvalidFraction(f64),
    #[error("port value {0} is not an integer in 0..=65535")]
    PortOutOfRange(f64),
    #[error("rows, labels and tags must have equal lengths")]
    LengthMismatch,
    #[error("labeled CSV line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("labeled CSV header mismatch")]
    Header,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeling rule. All present matchers must hold; `window` bounds are
/// inclusive and compared against the flow start timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRule {
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Option<u8>,
    pub window: Option<(u64, u64)>,
    pub label: Label,
    pub variant_tag: String,
}

impl LabelRule {
    pub fn is_default(&self) -> bool {
        self.src_ip.is_none()
            && self.dst_ip.is_none()
            && self.src_port.is_none()
            && self.dst_port.is_none()
            && self.protocol.is_none()
            && self.window.is_none()
    }

    pub fn matches(&self, v: &FeatureVector) -> bool {
        self.src_ip.is_none_or(|ip| v.src_ip == ip)
            && self.dst_ip.is_none_or(|ip| v.dst_ip == ip)
            && self.src_port.is_none_or(|p| v.src_port == p)
            && self.dst_port.is_none_or(|p| v.dst_port == p)
            && self.protocol.is_none_or(|p| v.protocol == p)
            && self.window.is_none_or(|(t0, t1)| v.timestamp >= t0 && v.timestamp <= t1)
    }
}

/// Ordered rule list with a guaranteed default.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<LabelRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<LabelRule>) -> Result<Self, DatasetError> {
        if !rules.iter().any(LabelRule::is_default) {
            return Err(DatasetError::NoDefaultRule);
        }
        Ok(RuleSet { rules })
    }

    /// First matching rule; the mandatory default guarantees a hit.
    pub fn apply(&self, v: &FeatureVector) -> &LabelRule {
        self.rules
            .iter()
            .find(|r| r.matches(v))
            .expect("rule set contains a default")
    }

    /// Parse the line-oriented rule format. Grammar per line:
    /// `[key=value ...] => <benign|malicious> <tag>` with keys src_ip,
    /// dst_ip, src_port, dst_port, protocol (tcp/udp/other) and
    /// window=T0..T1 (microseconds). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, rhs) = line.split_once("=>").ok_or_else(|| DatasetError::RuleParse {
                line: line_no,
                msg: "missing '=>'".to_string(),
            })?;
            let mut rule = LabelRule {
                src_ip: None,
                dst_ip: None,
                src_port: None,
                dst_port: None,
                protocol: None,
                window: None,
                label: Label::Benign,
                variant_tag: String::new(),
            };
            for token in lhs.split_whitespace() {
                let (key, value) = token.split_once('=').ok_or_else(|| DatasetError::RuleParse {
                    line: line_no,
                    msg: format!("matcher {token:?} is not key=value"),
                })?;
                let err = |msg: String| DatasetError::RuleParse { line: line_no, msg };
                match key {
                    "src_ip" => {
                        rule.src_ip =
                            Some(value.parse().map_err(|_| err(format!("bad IPv4 {value:?}")))?)
                    }
                    "dst_ip" => {
                        rule.dst_ip =
                            Some(value.parse().map_err(|_| err(format!("bad IPv4 {value:?}")))?)
                    }
                    "src_port" => {
                        rule.src_port =
                            Some(value.parse().map_err(|_| err(format!("bad port {value:?}")))?)
                    }
                    "dst_port" => {
                        rule.dst_port =
                            Some(value.parse().map_err(|_| err(format!("bad port {value:?}")))?)
                    }
                    "protocol" => {
                        rule.protocol = Some(match value {
                            "tcp" => 6,
                            "udp" => 17,
                            "other" => 0,
                            _ => return Err(err(format!("bad protocol {value:?}"))),
                        })
                    }
                    "window" => {
                        let (t0, t1) = value
                            .split_once("..")
                            .ok_or_else(|| err(format!("window {value:?} is not T0..T1")))?;
                        let t0 = t0.parse().map_err(|_| err(format!("bad window start {t0:?}")))?;
                        let t1 = t1.parse().map_err(|_| err(format!("bad window end {t1:?}")))?;
                        rule.window = Some((t0, t1));
                    }
                    _ => return Err(err(format!("unknown matcher key {key:?}"))),
                }
            }
            let mut parts = rhs.split_whitespace();
            rule.label = match parts.next() {
                Some("benign") => Label::Benign,
                Some("malicious") => Label::Malicious,
                other => {
                    return Err(DatasetError::RuleParse {
                        line: line_no,
                        msg: format!("expected benign|malicious, got {other:?}"),
                    })
                }
            };
            let tag = parts.next().ok_or_else(|| DatasetError::RuleParse {
                line: line_no,
                msg: "missing variant tag".to_string(),
            })?;
            if parts.next().is_some() {
                return Err(DatasetError::RuleParse {
                    line: line_no,
                    msg: "trailing tokens after variant tag".to_string(),
                });
            }
            if !tag.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                return Err(DatasetError::RuleParse {
                    line: line_no,
                    msg: format!("variant tag {tag:?} has characters outside [A-Za-z0-9_-.]"),
                });
            }
            rule.variant_tag = tag.to_string();
            rules.push(rule);
        }
        RuleSet::new(rules)
    }

    pub fn parse_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// A rectangular numeric dataset with a binary label and a variant tag per
/// row. Pre-sanitization it carries all canonical flow columns (IPs encoded
/// as 32-bit integers); after `sanitize` the identifier columns are gone.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub tags: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<Label>,
        tags: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if rows.len() != labels.len() || rows.len() != tags.len() {
            return Err(DatasetError::LengthMismatch);
        }
        Ok(LabeledDataset { columns, rows, labels, tags })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            tags: indices.iter().map(|&i| self.tags[i].clone()).collect(),
        }
    }

    /// Indices of benign rows.
    pub fn benign_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == Label::Benign).collect()
    }

    /// Indices of malicious rows carrying `tag`.
    pub fn variant_indices(&self, tag: &str) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == Label::Malicious && self.tags[i] == tag)
            .collect()
    }

    /// Concatenate datasets with identical columns.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset, DatasetError> {
        let first = parts.first().ok_or(DatasetError::LengthMismatch)?;
        let mut out = LabeledDataset {
            columns: first.columns.clone(),
            rows: Vec::new(),
            labels: Vec::new(),
            tags: Vec::new(),
        };
        for part in parts {
            if part.columns != out.columns {
                return Err(DatasetError::Header);
            }
            out.rows.extend(part.rows.iter().cloned());
            out.labels.extend(part.labels.iter().copied());
            out.tags.extend(part.tags.iter().cloned());
        }
        Ok(out)
    }

    pub fn count_by_group(&self) -> BTreeMap<(Label, String), usize> {
        let mut counts = BTreeMap::new();
        for i in 0..self.len() {
            *counts.entry((self.labels[i], self.tags[i].clone())).or_insert(0) += 1;
        }
        counts
    }
}

/// Label flows with the first matching rule each; returns the dataset in
/// canonical (pre-sanitization) columns plus per-(label, tag) counts.
pub fn label_flows(
    flows: &[FeatureVector],
    rules: &RuleSet,
) -> (LabeledDataset, BTreeMap<(Label, String), usize>) {
    let mut labels = Vec::with_capacity(flows.len());
    let mut tags = Vec::with_capacity(flows.len());
    let mut rows = Vec::with_capacity(flows.len());
    for flow in flows {
        let rule = rules.apply(flow);
        labels.push(rule.label);
        tags.push(rule.variant_tag.clone());
        rows.push(flow.to_numeric_row());
    }
    let ds = LabeledDataset {
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows,
        labels,
        tags,
    };
    let summary = ds.count_by_group();
    (ds, summary)
}

/// IANA port range category: 0 well-known, 1 registered, 2 dynamic.
pub fn port_category(port: u16) -> u8 {
    match port {
        0..=1023 => 0,
        1024..=49151 => 1,
        _ => 2,
    }
}

fn port_category_value(value: f64) -> Result<f64, DatasetError> {
    if !value.is_finite() || value.fract() != 0.0 || !(0.0..=65535.0).contains(&value) {
        return Err(DatasetError::PortOutOfRange(value));
    }
    Ok(f64::from(port_category(value as u16)))
}

/// Columns removed by `sanitize`. "id"/"FlowID" aliases are accepted for
/// externally produced CSVs; our own canonical set has no id column.
const FORBIDDEN_COLUMNS: [&str; 10] = [
    "id",
    "FlowID",
    "Flow ID",
    "SrcIP",
    "Src IP",
    "DstIP",
    "Dst IP",
    "Timestamp",
    "FwdInitWinByts",
    "BwdInitWinByts",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct SanitizeReport {
    pub dropped_columns: Vec<String>,
    pub missing_value_rows: usize,
    pub duplicate_rows: usize,
}

/// Drop identifier/init-window columns, encode ports as categories, drop
/// rows with missing values, and deduplicate. Idempotent.
pub fn sanitize(ds: &LabeledDataset) -> Result<(LabeledDataset, SanitizeReport), DatasetError> {
    let mut report = SanitizeReport::default();

    let already = ds.column_index("SrcPortCategory").is_some();
    if !already && (ds.column_index("SrcPort").is_none() || ds.column_index("DstPort").is_none()) {
        let missing = if ds.column_index("SrcPort").is_none() { "SrcPort" } else { "DstPort" };
        return Err(DatasetError::UnknownColumn(missing.to_string()));
    }

    let mut keep: Vec<usize> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    for (i, name) in ds.columns.iter().enumerate() {
        if FORBIDDEN_COLUMNS.contains(&name.as_str()) {
            report.dropped_columns.push(name.clone());
            continue;
        }
        keep.push(i);
        if name == "SrcPort" {
            columns.push("SrcPortCategory".to_string());
        } else if name == "DstPort" {
            columns.push("DstPortCategory".to_string());
        } else {
            columns.push(name.clone());
        }
    }
    let src_port_col = ds.column_index("SrcPort");
    let dst_port_col = ds.column_index("DstPort");

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ds.len());
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for (r, row) in ds.rows.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            report.missing_value_rows += 1;
            continue;
        }
        let mut new_row = Vec::with_capacity(keep.len());
        for &c in &keep {
            let v = row[c];
            if Some(c) == src_port_col || Some(c) == dst_port_col {
                new_row.push(port_category_value(v)?);
            } else {
                new_row.push(v);
            }
        }
        rows.push(new_row);
        labels.push(ds.labels[r]);
        tags.push(ds.tags[r].clone());
    }

    // Exact duplicates on the feature row; the first occurrence keeps its
    // label and tag.
    let mut seen: std::collections::HashSet<Vec<u64>> = std::collections::HashSet::new();
    let mut out_rows = Vec::new();
    let mut out_labels = Vec::new();
    let mut out_tags = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let bits: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(bits) {
            out_rows.push(row.clone());
            out_labels.push(labels[i]);
            out_tags.push(tags[i].clone());
        } else {
            report.duplicate_rows += 1;
        }
    }

    Ok((
        LabeledDataset { columns, rows: out_rows, labels: out_labels, tags: out_tags },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplitMode {
    /// Split each (label, variant_tag) group independently.
    Stratified,
    /// One shuffle over all rows.
    Plain,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SplitReport {
    /// (label, tag, total, train, test) per group.
    pub groups: Vec<(String, String, usize, usize, usize)>,
    /// Groups with fewer than 2 rows, which went entirely to train.
    pub tiny_groups: Vec<(String, String)>,
}

/// Deterministic split: returns (train indices, test indices, report).
/// Indices are ascending within each side. `|train| = round(fraction × n)`
/// per group.
pub fn split_indices(
    ds: &LabeledDataset,
    fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Vec<usize>, Vec<usize>, SplitReport), DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let mut groups: BTreeMap<(Label, String), Vec<usize>> = BTreeMap::new();
    match mode {
        SplitMode::Stratified => {
            for i in 0..ds.len() {
                groups
                    .entry((ds.labels[i], ds.tags[i].clone()))
                    .or_default()
                    .push(i);
            }
        }
        SplitMode::Plain => {
            groups.insert((Label::Benign, "all".to_string()), (0..ds.len()).collect());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut report = SplitReport::default();
    for ((label, tag), mut indices) in groups {
        let n = indices.len();
        if n < 2 {
            report.tiny_groups.push((label.to_string(), tag.clone()));
            report.groups.push((label.to_string(), tag, n, n, 0));
            train.extend(indices);
            continue;
        }
        indices.shuffle(&mut rng);
        let n_train = ((fraction * n as f64).round() as usize).min(n);
        report
            .groups
            .push((label.to_string(), tag, n, n_train, n - n_train));
        train.extend(indices.drain(..n_train));
        test.extend(indices);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test, report))
}

/// Split into materialized train/test datasets.
pub fn split(
    ds: &LabeledDataset,
    fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(LabeledDataset, LabeledDataset, SplitReport), DatasetError> {
    let (train, test, report) = split_indices(ds, fraction, seed, mode)?;
    Ok((ds.subset(&train), ds.subset(&test), report))
}

const LABEL_COLUMNS: [&str; 2] = ["Label", "VariantTag"];

/// Persist flows as the canonical flow CSV plus parallel Label/VariantTag
/// columns.
pub fn write_labeled_csv(
    flows: &[FeatureVector],
    labels: &[Label],
    tags: &[String],
    path: &Path,
) -> Result<usize, DatasetError> {
    if flows.len() != labels.len() || flows.len() != tags.len() {
        return Err(DatasetError::LengthMismatch);
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{},{}", COLUMNS.join(","), LABEL_COLUMNS.join(","))?;
    for ((flow, label), tag) in flows.iter().zip(labels).zip(tags) {
        writeln!(w, "{},{label},{tag}", csv_fields(flow).join(","))?;
    }
    w.flush()?;
    Ok(flows.len())
}

fn parse_numeric(field: &str, col: &str, line: usize) -> Result<f64, DatasetError> {
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    if col == "SrcIP" || col == "DstIP" {
        let ip: Ipv4Addr = field.parse().map_err(|_| DatasetError::Parse {
            line,
            msg: format!("bad IPv4 in {col}: {field:?}"),
        })?;
        return Ok(f64::from(u32::from(ip)));
    }
    field.parse().map_err(|_| DatasetError::Parse {
        line,
        msg: format!("bad number in {col}: {field:?}"),
    })
}

/// Read a labeled CSV (canonical flow columns + Label + VariantTag) into a
/// numeric dataset. Empty fields and NaN/inf tokens survive as non-finite
/// values for `sanitize` to drop.
pub fn read_labeled_csv(path: &Path) -> Result<LabeledDataset, DatasetError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(DatasetError::Header),
    };
    let expected = format!("{},{}", COLUMNS.join(","), LABEL_COLUMNS.join(","));
    if header != expected {
        return Err(DatasetError::Header);
    }
    let n_cols = COLUMNS.len();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols + 2 {
            return Err(DatasetError::Parse {
                line: line_no,
                msg: format!("expected {} fields, got {}", n_cols + 2, fields.len()),
            });
        }
        let mut row = Vec::with_capacity(n_cols);
        for (c, field) in fields[..n_cols].iter().enumerate() {
            row.push(parse_numeric(field, COLUMNS[c], line_no)?);
        }
        labels.push(match fields[n_cols] {
            "benign" => Label::Benign,
            "malicious" => Label::Malicious,
            other => {
                return Err(DatasetError::Parse {
                    line: line_no,
                    msg: format!("bad label {other:?}"),
                })
            }
        });
        tags.push(fields[n_cols + 1].to_string());
        rows.push(row);
    }
    LabeledDataset::new(
        COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows,
        labels,
        tags,
    )
}
