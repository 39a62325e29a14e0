//! Feature-space effects of a perturbation: per-feature mean ratios
//! between two flow sets, a domain-constraint checker, a packet-scaling
//! approximation of "the same attack with N× the packets", and a
//! nearest-neighbor distribution-shift score.

use serde::Serialize;

use crate::flow::features::{numeric_feature_columns, FeatureVector};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("variant flow set is empty")]
    EmptyVariant,
    #[error("reference flow set is empty")]
    EmptyReference,
    #[error("scale factor {0} must be positive and finite")]
    InvalidFactor(f64),
    #[error("input vector violates domain constraints: {0:?}")]
    InconsistentInput(ConsistencyReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RatioEntry {
    Defined(f64),
    /// The denominator aggregate is zero; flagged instead of emitting NaN.
    UndefinedZeroDenominator,
}

/// Per-feature ratio of mean(variant A) to mean(variant B).
#[derive(Debug, Clone, Serialize)]
pub struct RatioTable {
    /// Aggregation statistic applied per variant before the ratio.
    pub aggregation: &'static str,
    pub entries: Vec<(String, RatioEntry)>,
}

impl RatioTable {
    pub fn get(&self, feature: &str) -> Option<RatioEntry> {
        self.entries.iter().find(|(name, _)| name == feature).map(|(_, e)| *e)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("Feature,Ratio,Defined\n");
        for (name, entry) in &self.entries {
            match entry {
                RatioEntry::Defined(v) => {
                    out.push_str(&format!("{name},{},true\n", crate::flow::csv::fmt_sig6(*v)))
                }
                RatioEntry::UndefinedZeroDenominator => out.push_str(&format!("{name},,false\n")),
            }
        }
        out
    }
}

fn feature_means(flows: &[FeatureVector]) -> Vec<f64> {
    let d = numeric_feature_columns().len();
    let mut sums = vec![0.0; d];
    for flow in flows {
        for (s, v) in sums.iter_mut().zip(flow.numeric_feature_row()) {
            *s += v;
        }
    }
    let n = flows.len() as f64;
    sums.iter().map(|s| s / n).collect()
}

/// Mean-aggregate each numeric feature per variant and take A/B per
/// feature. Zero denominators are flagged.
pub fn feature_ratio(
    variant_a: &[FeatureVector],
    variant_b: &[FeatureVector],
) -> Result<RatioTable, AnalysisError> {
    if variant_a.is_empty() || variant_b.is_empty() {
        return Err(AnalysisError::EmptyVariant);
    }
    let means_a = feature_means(variant_a);
    let means_b = feature_means(variant_b);
    let entries = numeric_feature_columns()
        .iter()
        .zip(means_a.iter().zip(&means_b))
        .map(|(name, (a, b))| {
            let entry = if *b == 0.0 {
                RatioEntry::UndefinedZeroDenominator
            } else {
                RatioEntry::Defined(a / b)
            };
            (name.to_string(), entry)
        })
        .collect();
    Ok(RatioTable { aggregation: "mean", entries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
}

impl ConsistencyReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

const REL_TOL: f64 = 1e-9;

fn close(lhs: f64, rhs: f64) -> bool {
    (lhs - rhs).abs() <= REL_TOL * lhs.abs().max(rhs.abs()).max(1.0)
}

/// Evaluate the domain constraints a real flow satisfies by construction:
/// rate × duration equals the byte/packet totals (zero-duration flows have
/// zero rates), every packet-length mean × count equals its total and lies
/// within its min/max, the merged IAT total equals the duration for
/// multi-packet flows, length bounds are non-negative integers, deviations
/// are non-negative, and a flow has at least one forward packet. All
/// comparisons use 1e-9 relative tolerance.
pub fn check_consistency(v: &FeatureVector) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    fn check(violations: &mut Vec<Violation>, constraint: &str, lhs: f64, rhs: f64) {
        if !close(lhs, rhs) {
            violations.push(Violation { constraint: constraint.to_string(), lhs, rhs });
        }
    }
    let out = &mut report.violations;

    let dur_s = v.flow_duration as f64 / 1e6;
    let byte_total = (v.tot_len_fwd_pkts + v.tot_len_bwd_pkts) as f64;
    let pkt_total = (v.tot_fwd_pkts + v.tot_bwd_pkts) as f64;
    if v.flow_duration > 0 {
        check(out, "FlowBytsPerS x duration = byte total", v.flow_byts_per_s * dur_s, byte_total);
        check(out, "FlowPktsPerS x duration = packet total", v.flow_pkts_per_s * dur_s, pkt_total);
        check(out, "FwdPktsPerS x duration = fwd packets", v.fwd_pkts_per_s * dur_s, v.tot_fwd_pkts as f64);
        check(out, "BwdPktsPerS x duration = bwd packets", v.bwd_pkts_per_s * dur_s, v.tot_bwd_pkts as f64);
    } else {
        check(out, "zero-duration flow has zero FlowBytsPerS", v.flow_byts_per_s, 0.0);
        check(out, "zero-duration flow has zero FlowPktsPerS", v.flow_pkts_per_s, 0.0);
        check(out, "zero-duration flow has zero FwdPktsPerS", v.fwd_pkts_per_s, 0.0);
        check(out, "zero-duration flow has zero BwdPktsPerS", v.bwd_pkts_per_s, 0.0);
    }

    for (family, stat, total, count) in [
        ("FwdPktLen", &v.fwd_pkt_len, v.tot_len_fwd_pkts as f64, v.tot_fwd_pkts as f64),
        ("BwdPktLen", &v.bwd_pkt_len, v.tot_len_bwd_pkts as f64, v.tot_bwd_pkts as f64),
        ("PktLen", &v.pkt_len, byte_total, pkt_total),
    ] {
        let lo_ok = stat.mean >= stat.min - REL_TOL * stat.min.abs().max(1.0);
        let hi_ok = stat.mean <= stat.max + REL_TOL * stat.max.abs().max(1.0);
        if !(lo_ok && hi_ok) {
            out.push(Violation {
                constraint: format!("{family}Mean within [{family}Min, {family}Max]"),
                lhs: stat.mean,
                rhs: if lo_ok { stat.max } else { stat.min },
            });
        }
        check(out, &format!("{family}Mean x count = total"), stat.mean * count, total);
    }

    if v.tot_fwd_pkts + v.tot_bwd_pkts >= 2 {
        check(
            out,
            "FlowIATTotal = FlowDuration for multi-packet flow",
            v.flow_iat_total as f64,
            v.flow_duration as f64,
        );
    }

    for (name, value) in [
        ("FwdPktLenMin", v.fwd_pkt_len.min),
        ("FwdPktLenMax", v.fwd_pkt_len.max),
        ("BwdPktLenMin", v.bwd_pkt_len.min),
        ("BwdPktLenMax", v.bwd_pkt_len.max),
        ("PktLenMin", v.pkt_len.min),
        ("PktLenMax", v.pkt_len.max),
    ] {
        if value < 0.0 || value.fract() != 0.0 {
            report.violations.push(Violation {
                constraint: format!("{name} is a non-negative integer"),
                lhs: value,
                rhs: value.round().max(0.0),
            });
        }
    }

    for (name, std) in [
        ("FwdPktLenStd", v.fwd_pkt_len.std),
        ("BwdPktLenStd", v.bwd_pkt_len.std),
        ("PktLenStd", v.pkt_len.std),
        ("FlowIATStd", v.flow_iat.std),
        ("FwdIATStd", v.fwd_iat.std),
        ("BwdIATStd", v.bwd_iat.std),
    ] {
        if std < 0.0 {
            report.violations.push(Violation {
                constraint: format!("{name} >= 0"),
                lhs: std,
                rhs: 0.0,
            });
        }
    }

    if v.tot_fwd_pkts < 1 {
        report.violations.push(Violation {
            constraint: "TotFwdPkts >= 1".to_string(),
            lhs: v.tot_fwd_pkts as f64,
            rhs: 1.0,
        });
    }

    report
}

fn scale_count(count: u64, factor: f64, keep_nonempty: bool) -> u64 {
    if count == 0 {
        return 0;
    }
    let scaled = (count as f64 * factor).round() as u64;
    if keep_nonempty {
        scaled.max(1)
    } else {
        scaled
    }
}

/// Total implied by an original per-item mean on the realized item count.
fn retotal(mean: f64, new_count: u64) -> u64 {
    (mean * new_count as f64).round() as u64
}

fn per_item(total: u64, count: u64) -> f64 {
    if count > 0 {
        total as f64 / count as f64
    } else {
        0.0
    }
}

fn iat_mean(total: u64, count: u64) -> f64 {
    if count >= 2 {
        total as f64 / (count - 1) as f64
    } else {
        0.0
    }
}

/// Simulate "the same flow with `factor`× the packets" purely in feature
/// space, the naive approximation of rerunning an attack that sends more
/// (or fewer) packets.
///
/// Packet counts and flag counts scale by `factor`, rounded to the nearest
/// integer, with nonempty directions keeping at least one packet. Byte,
/// header and payload totals follow the *realized* counts through the
/// original per-packet means, which keeps every mean × count = total
/// identity intact under rounding. Rates and means are recomputed;
/// duration, the length min/max/std and the IAT totals, min, max and std
/// stay fixed; IAT means rescale as total/(count−1). The output satisfies
/// `check_consistency` by construction.
pub fn scale_perturb(v: &FeatureVector, factor: f64) -> Result<FeatureVector, AnalysisError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(AnalysisError::InvalidFactor(factor));
    }
    let input_report = check_consistency(v);
    if !input_report.pass() {
        return Err(AnalysisError::InconsistentInput(input_report));
    }

    let mut out = v.clone();
    out.tot_fwd_pkts = scale_count(v.tot_fwd_pkts, factor, true);
    out.tot_bwd_pkts = scale_count(v.tot_bwd_pkts, factor, true);
    for (count, orig) in [
        (&mut out.fin_flag_cnt, v.fin_flag_cnt),
        (&mut out.syn_flag_cnt, v.syn_flag_cnt),
        (&mut out.rst_flag_cnt, v.rst_flag_cnt),
        (&mut out.psh_flag_cnt, v.psh_flag_cnt),
        (&mut out.ack_flag_cnt, v.ack_flag_cnt),
        (&mut out.urg_flag_cnt, v.urg_flag_cnt),
        (&mut out.ece_flag_cnt, v.ece_flag_cnt),
        (&mut out.fwd_psh_flags, v.fwd_psh_flags),
        (&mut out.bwd_psh_flags, v.bwd_psh_flags),
        (&mut out.fwd_urg_flags, v.fwd_urg_flags),
        (&mut out.bwd_urg_flags, v.bwd_urg_flags),
    ] {
        *count = scale_count(orig, factor, false);
    }

    out.tot_len_fwd_pkts = retotal(per_item(v.tot_len_fwd_pkts, v.tot_fwd_pkts), out.tot_fwd_pkts);
    out.tot_len_bwd_pkts = retotal(per_item(v.tot_len_bwd_pkts, v.tot_bwd_pkts), out.tot_bwd_pkts);
    out.fwd_header_len = retotal(per_item(v.fwd_header_len, v.tot_fwd_pkts), out.tot_fwd_pkts);
    out.bwd_header_len = retotal(per_item(v.bwd_header_len, v.tot_bwd_pkts), out.tot_bwd_pkts);

    out.fwd_pkt_len.mean = per_item(out.tot_len_fwd_pkts, out.tot_fwd_pkts);
    out.bwd_pkt_len.mean = per_item(out.tot_len_bwd_pkts, out.tot_bwd_pkts);
    out.pkt_len.mean = per_item(
        out.tot_len_fwd_pkts + out.tot_len_bwd_pkts,
        out.tot_fwd_pkts + out.tot_bwd_pkts,
    );
    out.fwd_seg_size_avg =
        per_item(retotal(v.fwd_seg_size_avg, out.tot_fwd_pkts), out.tot_fwd_pkts);
    out.bwd_seg_size_avg =
        per_item(retotal(v.bwd_seg_size_avg, out.tot_bwd_pkts), out.tot_bwd_pkts);

    if v.flow_duration > 0 {
        let dur_s = v.flow_duration as f64 / 1e6;
        out.flow_byts_per_s = (out.tot_len_fwd_pkts + out.tot_len_bwd_pkts) as f64 / dur_s;
        out.flow_pkts_per_s = (out.tot_fwd_pkts + out.tot_bwd_pkts) as f64 / dur_s;
        out.fwd_pkts_per_s = out.tot_fwd_pkts as f64 / dur_s;
        out.bwd_pkts_per_s = out.tot_bwd_pkts as f64 / dur_s;
    }

    out.flow_iat.mean = iat_mean(v.flow_iat_total, out.tot_fwd_pkts + out.tot_bwd_pkts);
    out.fwd_iat.mean = iat_mean(v.fwd_iat_total, out.tot_fwd_pkts);
    out.bwd_iat.mean = iat_mean(v.bwd_iat_total, out.tot_bwd_pkts);

    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct OodReport {
    /// Nearest-neighbor distance in reference-standardized space, one per
    /// query row.
    pub scores: Vec<f64>,
    pub mean_score: f64,
}

impl OodReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("Row,Score\n");
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", crate::flow::csv::fmt_sig6(*s)));
        }
        out
    }
}

/// Score each query flow by its standardized Euclidean distance to the
/// nearest reference flow. Standardization uses the reference feature
/// means and deviations; constant reference features fall back to unit
/// scale.
pub fn ood_score(
    reference: &[FeatureVector],
    query: &[FeatureVector],
) -> Result<OodReport, AnalysisError> {
    if reference.is_empty() {
        return Err(AnalysisError::EmptyReference);
    }
    let ref_rows: Vec<Vec<f64>> = reference.iter().map(|f| f.numeric_feature_row()).collect();
    let means = feature_means(reference);
    let d = means.len();
    let mut vars = vec![0.0; d];
    for row in &ref_rows {
        for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
            let dv = v - m;
            *s += dv * dv;
        }
    }
    let stds: Vec<f64> = vars
        .iter()
        .map(|&s| {
            let std = (s / ref_rows.len() as f64).sqrt();
            if std > 0.0 {
                std
            } else {
                1.0
            }
        })
        .collect();
    let standardize = |row: &[f64]| -> Vec<f64> {
        row.iter().zip(&means).zip(&stds).map(|((v, m), s)| (v - m) / s).collect()
    };
    let ref_std: Vec<Vec<f64>> = ref_rows.iter().map(|r| standardize(r)).collect();
    let mut scores = Vec::with_capacity(query.len());
    for q in query {
        let qs = standardize(&q.numeric_feature_row());
        let best = ref_std
            .iter()
            .map(|r| r.iter().zip(&qs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        scores.push(best);
    }
    let mean_score = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok(OodReport { scores, mean_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::features::compute_features;
    use crate::flow::tests::tcp_pkt;
    use crate::flow::{assemble_flows, FlowConfig};
    use crate::pcap::TcpFlags as F;
    use std::net::Ipv4Addr;

    fn flow_from_lens(start: u64, gap: u64, payloads: &[u32]) -> FeatureVector {
        let a = (Ipv4Addr::new(10, 0, 0, 1), 40000);
        let b = (Ipv4Addr::new(10, 0, 0, 2), 80);
        let pkts: Vec<_> = payloads
            .iter()
            .enumerate()
            .map(|(i, &p)| tcp_pkt(start + gap * i as u64, a, b, F::ACK, p))
            .collect();
        let set = assemble_flows(&pkts, FlowConfig::default());
        compute_features(&set.flows[0])
    }

    #[test]
    fn ratio_of_identical_sets_is_one() {
        let flows = vec![flow_from_lens(0, 1000, &[6, 100]), flow_from_lens(5000, 2000, &[50])];
        let table = feature_ratio(&flows, &flows).unwrap();
        for (name, entry) in &table.entries {
            if let RatioEntry::Defined(v) = entry {
                assert_eq!(*v, 1.0, "feature {name}");
            }
        }
    }

    #[test]
    fn doubled_duration_halves_the_ratio() {
        let a = vec![flow_from_lens(0, 1000, &[6, 6])];
        let b = vec![flow_from_lens(0, 2000, &[6, 6])];
        let table = feature_ratio(&a, &b).unwrap();
        assert_eq!(table.get("FlowDuration"), Some(RatioEntry::Defined(0.5)));
    }

    #[test]
    fn zero_denominator_is_flagged() {
        let a = vec![flow_from_lens(0, 1000, &[6, 6])];
        let b = vec![flow_from_lens(0, 1000, &[0, 0])]; // no payload, RST cnt 0 etc.
        let table = feature_ratio(&a, &b).unwrap();
        assert_eq!(table.get("RSTFlagCnt"), Some(RatioEntry::UndefinedZeroDenominator));
    }

    #[test]
    fn empty_variant_is_an_error() {
        let a = vec![flow_from_lens(0, 1000, &[6])];
        assert!(matches!(feature_ratio(&a, &[]), Err(AnalysisError::EmptyVariant)));
        assert!(matches!(feature_ratio(&[], &a), Err(AnalysisError::EmptyVariant)));
    }

    #[test]
    fn compute_features_output_is_consistent() {
        for payloads in [&[6u32, 6][..], &[0], &[100, 200, 300, 400]] {
            let v = flow_from_lens(0, 250_000, payloads);
            let report = check_consistency(&v);
            assert!(report.pass(), "{report:?}");
        }
    }

    #[test]
    fn doubled_rate_is_a_named_violation() {
        let mut v = flow_from_lens(0, 1_000_000, &[6, 6]);
        v.flow_byts_per_s *= 2.0;
        let report = check_consistency(&v);
        assert!(!report.pass());
        assert!(report.violations.iter().any(|x| x.constraint.contains("FlowBytsPerS")));
    }

    #[test]
    fn mean_above_max_is_a_violation() {
        let mut v = flow_from_lens(0, 1_000_000, &[6, 6]);
        v.pkt_len.mean = v.pkt_len.max + 10.0;
        let report = check_consistency(&v);
        assert!(report
            .violations
            .iter()
            .any(|x| x.constraint.contains("PktLenMean within")));
    }

    #[test]
    fn factor_one_is_identity() {
        let v = flow_from_lens(0, 125_000, &[6, 100, 42, 0]);
        let out = scale_perturb(&v, 1.0).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn factor_six_example_hand_computed() {
        // Two forward packets of 60 bytes total each, one second apart.
        let v = flow_from_lens(0, 1_000_000, &[6, 6]);
        assert_eq!(v.tot_fwd_pkts, 2);
        assert_eq!(v.tot_len_fwd_pkts, 120);
        let out = scale_perturb(&v, 6.0).unwrap();
        assert_eq!(out.tot_fwd_pkts, 12);
        assert_eq!(out.tot_len_fwd_pkts, 720);
        assert_eq!(out.flow_byts_per_s, 720.0);
        assert_eq!(out.flow_pkts_per_s, 12.0);
        assert_eq!(out.flow_iat.mean, 1e6 / 11.0);
        assert_eq!(out.flow_duration, v.flow_duration);
        assert!(check_consistency(&out).pass());
    }

    #[test]
    fn factor_six_then_sixth_round_trips_primitives() {
        let v = flow_from_lens(0, 500_000, &[6, 6, 60, 120]);
        let up = scale_perturb(&v, 6.0).unwrap();
        let back = scale_perturb(&up, 1.0 / 6.0).unwrap();
        assert_eq!(back.tot_fwd_pkts, v.tot_fwd_pkts);
        assert_eq!(back.tot_len_fwd_pkts, v.tot_len_fwd_pkts);
        assert_eq!(back.fwd_header_len, v.fwd_header_len);
        assert_eq!(back.syn_flag_cnt, v.syn_flag_cnt);
        assert!(check_consistency(&back).pass());
    }

    #[test]
    fn collapsing_counts_stays_consistent() {
        // 1/6 of a 2-packet flow clamps to one packet; byte totals follow
        // the realized count so the means stay in range.
        let v = flow_from_lens(0, 1_000_000, &[6, 6]);
        let out = scale_perturb(&v, 1.0 / 6.0).unwrap();
        assert_eq!(out.tot_fwd_pkts, 1);
        assert_eq!(out.tot_len_fwd_pkts, 60);
        assert_eq!(out.fwd_pkt_len.mean, 60.0);
        assert!(check_consistency(&out).pass(), "{:?}", check_consistency(&out));
    }

    #[test]
    fn inconsistent_input_is_rejected() {
        let mut v = flow_from_lens(0, 1_000_000, &[6, 6]);
        v.flow_pkts_per_s = 999.0;
        assert!(matches!(
            scale_perturb(&v, 2.0),
            Err(AnalysisError::InconsistentInput(_))
        ));
    }

    #[test]
    fn invalid_factor_is_rejected() {
        let v = flow_from_lens(0, 1_000_000, &[6, 6]);
        assert!(matches!(scale_perturb(&v, 0.0), Err(AnalysisError::InvalidFactor(_))));
        assert!(matches!(scale_perturb(&v, -2.0), Err(AnalysisError::InvalidFactor(_))));
    }

    #[test]
    fn ood_identity_scores_zero() {
        let flows = vec![
            flow_from_lens(0, 1000, &[6, 100]),
            flow_from_lens(0, 2000, &[50, 50, 50]),
        ];
        let report = ood_score(&flows, &flows).unwrap();
        assert_eq!(report.mean_score, 0.0);
    }

    #[test]
    fn shifted_query_scores_at_least_the_shift() {
        // The reference varies only in packet lengths; its duration is
        // constant, so that coordinate standardizes at unit scale. Shifting
        // every query by +10 in it puts each query at least 10 away from
        // every reference row.
        let reference: Vec<FeatureVector> = (0..20)
            .map(|i| flow_from_lens(0, 100_000, &[6 + 10 * i, 6]))
            .collect();
        let query: Vec<FeatureVector> = reference
            .iter()
            .map(|f| {
                let mut q = f.clone();
                q.flow_duration += 10;
                q
            })
            .collect();
        let report = ood_score(&reference, &query).unwrap();
        for score in &report.scores {
            assert!(*score >= 10.0 - 1e-6, "score {score}");
        }
        // Each query's nearest neighbor is its own source row, exactly 10
        // away along the shifted coordinate.
        assert!((report.scores[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn in_distribution_queries_score_below_shifted_ones() {
        let reference: Vec<FeatureVector> = (0..30)
            .map(|i| flow_from_lens(0, 90_000 + 2_000 * (i % 7), &[6, 6, 6]))
            .collect();
        let near: Vec<FeatureVector> = (0..10)
            .map(|i| flow_from_lens(0, 91_000 + 2_000 * (i % 7), &[6, 6, 6]))
            .collect();
        let far: Vec<FeatureVector> = (0..10)
            .map(|i| flow_from_lens(0, 2_000_000 + 2_000 * i, &[6, 6, 6]))
            .collect();
        let near_report = ood_score(&reference, &near).unwrap();
        let far_report = ood_score(&reference, &far).unwrap();
        assert!(near_report.mean_score < far_report.mean_score);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let flows = vec![flow_from_lens(0, 1000, &[6])];
        assert!(matches!(ood_score(&[], &flows), Err(AnalysisError::EmptyReference)));
    }
}
