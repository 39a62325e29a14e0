//! `hsp`: packet captures → flow features → labeled datasets → detector
//! robustness tables under host-space perturbations.
//!
//! Subcommands: `extract` (pcap → flow CSV), `label` (rules → labeled
//! CSV), `experiment` (baseline / unseen-variant / retraining tables),
//! `analyze` (feature ratios + distribution-shift scores), `perturb`
//! (feature-space packet scaling). Every command is deterministic given
//! its inputs and flags, and writes a manifest next to its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hsp_core::analysis::{check_consistency, feature_ratio, ood_score, scale_perturb};
use hsp_core::dataset::{label_flows, write_labeled_csv, RuleSet};
use hsp_core::experiment::config::load_experiment;
use hsp_core::experiment::{adversarial_retrain, run_hsp, ExperimentRun};
use hsp_core::flow::csv::{read_flow_csv, write_flow_csv};
use hsp_core::flow::features::compute_features;
use hsp_core::flow::{assemble_flows, FlowConfig, FlowSet};
use hsp_core::manifest::{sha256_hex, RunManifest};
use hsp_core::pcap::read_capture;

#[derive(Parser)]
#[command(
    name = "hsp",
    version,
    about = "Evaluate flow-based intrusion detectors against attack-variant (host-space) perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a pcap file into the canonical flow CSV plus a JSON sidecar.
    Extract {
        /// Input capture (classic libpcap format).
        #[arg(long)]
        pcap: PathBuf,
        /// Output flow CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Flow active timeout in seconds.
        #[arg(long, default_value_t = 120.0)]
        active_timeout: f64,
        /// Flow idle timeout in seconds.
        #[arg(long, default_value_t = 120.0)]
        idle_timeout: f64,
    },
    /// Label a flow CSV with an ordered rule file.
    Label {
        /// Input flow CSV (from `extract`).
        #[arg(long)]
        flows: PathBuf,
        /// Rule file: one `matchers => label tag` rule per line.
        #[arg(long)]
        rules: PathBuf,
        /// Output labeled CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment: baseline + unseen-variant table,
    /// and optionally the adversarial retraining table.
    Experiment {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Directory for result tables and the manifest.
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-feature mean ratios of A over B, and distribution-shift scores
    /// of B's flows against A's distribution.
    Analyze {
        /// Reference variant flow CSV.
        #[arg(long)]
        a: PathBuf,
        /// Comparison variant flow CSV.
        #[arg(long)]
        b: PathBuf,
        /// Directory for the reports.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Scale packet counts by a factor in feature space, keeping the
    /// vectors domain-consistent.
    Perturb {
        /// Input flow CSV.
        #[arg(long)]
        flows: PathBuf,
        /// Positive scale factor (e.g. 6 or 0.1667).
        #[arg(long)]
        factor: f64,
        /// Output flow CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract { pcap, out, active_timeout, idle_timeout } => {
            cmd_extract(&pcap, &out, active_timeout, idle_timeout)
        }
        Command::Label { flows, rules, out } => cmd_label(&flows, &rules, &out),
        Command::Experiment { config, out_dir, seed } => cmd_experiment(&config, &out_dir, seed),
        Command::Analyze { a, b, out_dir } => cmd_analyze(&a, &b, &out_dir),
        Command::Perturb { flows, factor, out } => cmd_perturb(&flows, factor, &out),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn seconds_to_us(seconds: f64) -> Result<u64> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        bail!("timeout must be a positive number of seconds, got {seconds}");
    }
    Ok((seconds * 1e6).round() as u64)
}

#[derive(serde::Serialize)]
struct ExtractSidecar {
    capture: hsp_core::pcap::CaptureMeta,
    flow_terminations: BTreeMap<String, u64>,
    diagnostics: hsp_core::flow::FlowDiagnostics,
    manifest: String,
}

fn termination_names(set: &FlowSet) -> BTreeMap<String, u64> {
    set.termination_counts()
        .into_iter()
        .map(|(t, n)| (format!("{t:?}"), n))
        .collect()
}

fn cmd_extract(pcap: &Path, out: &Path, active_timeout: f64, idle_timeout: f64) -> Result<()> {
    let cfg = FlowConfig {
        active_timeout: seconds_to_us(active_timeout)?,
        idle_timeout: seconds_to_us(idle_timeout)?,
    };
    let capture = read_capture(pcap).with_context(|| format!("reading {}", pcap.display()))?;
    let set = assemble_flows(&capture.records, cfg);
    let features: Vec<_> = set.flows.iter().map(compute_features).collect();
    let rows = write_flow_csv(&features, out).with_context(|| format!("writing {}", out.display()))?;

    let manifest_path = sibling(out, "manifest.json");
    let sidecar_path = sibling(out, "meta.json");
    let sidecar = ExtractSidecar {
        capture: capture.meta.clone(),
        flow_terminations: termination_names(&set),
        diagnostics: set.diagnostics.clone(),
        // By file name: the sidecar's bytes stay identical across reruns
        // into different directories.
        manifest: manifest_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;

    let mut manifest = RunManifest::new("extract", sha256_hex(&serde_json::to_vec(&cfg)?));
    manifest.add_input(pcap)?;
    manifest.add_output(out)?;
    manifest.add_output(&sidecar_path)?;
    manifest.add_count("packets", capture.meta.packet_count);
    manifest.add_count("skipped_frames", capture.meta.skipped_total());
    manifest.add_count("flows", rows as u64);
    manifest.seal();
    manifest.write(&manifest_path)?;

    println!("packets: {}", capture.meta.packet_count);
    println!("skipped frames: {}", capture.meta.skipped_total());
    println!("flows: {rows}");
    for (cause, n) in termination_names(&set) {
        println!("  {cause}: {n}");
    }
    if set.diagnostics.negative_gap_clamps > 0 {
        println!("clamped backward timestamps: {}", set.diagnostics.negative_gap_clamps);
    }
    if let Some(err) = capture.truncation {
        bail!("capture ended mid-record; complete flows were written: {err}");
    }
    Ok(())
}

fn cmd_label(flows_path: &Path, rules_path: &Path, out: &Path) -> Result<()> {
    let flows = read_flow_csv(flows_path).with_context(|| format!("reading {}", flows_path.display()))?;
    let rules = RuleSet::parse_file(rules_path).with_context(|| format!("reading {}", rules_path.display()))?;
    let (ds, summary) = label_flows(&flows, &rules);
    write_labeled_csv(&flows, &ds.labels, &ds.tags, out)
        .with_context(|| format!("writing {}", out.display()))?;

    let manifest_path = sibling(out, "manifest.json");
    let mut manifest = RunManifest::new("label", sha256_hex(&std::fs::read(rules_path)?));
    manifest.add_input(flows_path)?;
    manifest.add_input(rules_path)?;
    manifest.add_output(out)?;
    for ((label, tag), n) in &summary {
        manifest.add_count(&format!("{label}:{tag}"), *n as u64);
    }
    manifest.seal();
    manifest.write(&manifest_path)?;

    println!("labeled {} flows:", ds.len());
    for ((label, tag), n) in &summary {
        println!("  {label} {tag}: {n}");
    }
    Ok(())
}

fn cmd_experiment(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let loaded = load_experiment(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    let mut cfg = loaded.config;
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    let base_dir = config_path.parent().unwrap_or_else(|| Path::new("."));
    let data = loaded_data(&loaded.dataset_paths, base_dir)?;
    std::fs::create_dir_all(out_dir)?;

    let run = run_hsp(&cfg, &data).context("experiment failed")?;
    let results_csv = out_dir.join("results.csv");
    let results_json = out_dir.join("results.json");
    std::fs::write(&results_csv, run.table.to_csv_string())?;
    std::fs::write(&results_json, run.table.to_json_string())?;
    print_run("baseline + unseen-variant evaluation", &run);

    let mut retrain_outputs = Vec::new();
    if loaded.retrain_enabled {
        let retrain = adversarial_retrain(&cfg, &data).context("retraining failed")?;
        let retrain_csv = out_dir.join("retrain.csv");
        let retrain_json = out_dir.join("retrain.json");
        std::fs::write(&retrain_csv, retrain.table.to_csv_string())?;
        std::fs::write(&retrain_json, retrain.table.to_json_string())?;
        print_run("adversarial retraining", &retrain);
        retrain_outputs.push(retrain_csv);
        retrain_outputs.push(retrain_json);
    }

    let mut manifest = RunManifest::new("experiment", sha256_hex(&std::fs::read(config_path)?));
    manifest.add_input(config_path)?;
    for path in &loaded.dataset_paths {
        let resolved = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
        manifest.add_input(&resolved)?;
    }
    manifest.add_output(&results_csv)?;
    manifest.add_output(&results_json)?;
    for path in &retrain_outputs {
        manifest.add_output(path)?;
    }
    for (group, n) in &run.summary.group_counts {
        manifest.add_count(group, *n as u64);
    }
    manifest.add_count("trials", cfg.trials as u64);
    manifest.add_count("leakage_checks_passed", run.summary.leakage_checks_passed as u64);
    // The CLI seed override participates in the deterministic digest.
    manifest.add_count("base_seed", cfg.base_seed);
    manifest.seal();
    manifest.write(&out_dir.join("manifest.json"))?;
    println!("results written to {}", out_dir.display());
    Ok(())
}

fn loaded_data(
    paths: &[PathBuf],
    base_dir: &Path,
) -> Result<hsp_core::dataset::LabeledDataset> {
    let mut parts = Vec::new();
    for path in paths {
        let resolved = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
        parts.push(
            hsp_core::dataset::read_labeled_csv(&resolved)
                .with_context(|| format!("reading {}", resolved.display()))?,
        );
    }
    let refs: Vec<&hsp_core::dataset::LabeledDataset> = parts.iter().collect();
    Ok(hsp_core::dataset::LabeledDataset::concat(&refs)?)
}

fn print_run(title: &str, run: &ExperimentRun) {
    println!("== {title} ==");
    print!("{}", run.table.to_csv_string());
    println!(
        "no-leakage: ok ({} trials); sanitize dropped {} rows with missing values, {} duplicates",
        run.summary.leakage_checks_passed,
        run.summary.sanitize.missing_value_rows,
        run.summary.sanitize.duplicate_rows
    );
}

fn cmd_analyze(a_path: &Path, b_path: &Path, out_dir: &Path) -> Result<()> {
    let a = read_flow_csv(a_path).with_context(|| format!("reading {}", a_path.display()))?;
    let b = read_flow_csv(b_path).with_context(|| format!("reading {}", b_path.display()))?;
    std::fs::create_dir_all(out_dir)?;

    let ratios = feature_ratio(&a, &b).context("feature ratio failed")?;
    std::fs::write(out_dir.join("ratio.csv"), ratios.to_csv_string())?;
    std::fs::write(out_dir.join("ratio.json"), serde_json::to_string_pretty(&ratios)?)?;

    let ood = ood_score(&a, &b).context("distribution-shift scoring failed")?;
    std::fs::write(out_dir.join("ood.csv"), ood.to_csv_string())?;
    std::fs::write(out_dir.join("ood.json"), serde_json::to_string_pretty(&ood)?)?;

    let mut manifest = RunManifest::new("analyze", String::new());
    manifest.add_input(a_path)?;
    manifest.add_input(b_path)?;
    for name in ["ratio.csv", "ratio.json", "ood.csv", "ood.json"] {
        manifest.add_output(&out_dir.join(name))?;
    }
    manifest.add_count("a_flows", a.len() as u64);
    manifest.add_count("b_flows", b.len() as u64);
    manifest.seal();
    manifest.write(&out_dir.join("manifest.json"))?;

    println!("compared {} vs {} flows; mean shift score {:.4}", a.len(), b.len(), ood.mean_score);
    println!("reports written to {}", out_dir.display());
    Ok(())
}

fn cmd_perturb(flows_path: &Path, factor: f64, out: &Path) -> Result<()> {
    let flows = read_flow_csv(flows_path).with_context(|| format!("reading {}", flows_path.display()))?;
    let mut scaled = Vec::with_capacity(flows.len());
    for (i, flow) in flows.iter().enumerate() {
        let out_vec = scale_perturb(flow, factor)
            .with_context(|| format!("row {}: input rejected", i + 1))?;
        let report = check_consistency(&out_vec);
        if !report.pass() {
            bail!(
                "row {}: scaled vector violates domain constraints: {:?}",
                i + 1,
                report.violations
            );
        }
        scaled.push(out_vec);
    }
    let rows = write_flow_csv(&scaled, out).with_context(|| format!("writing {}", out.display()))?;

    let manifest_path = sibling(out, "manifest.json");
    let mut manifest = RunManifest::new("perturb", sha256_hex(format!("factor={factor}").as_bytes()));
    manifest.add_input(flows_path)?;
    manifest.add_output(out)?;
    manifest.add_count("flows", rows as u64);
    manifest.seal();
    manifest.write(&manifest_path)?;

    println!("scaled {rows} flows by {factor}; all pass the consistency checks");
    Ok(())
}

/// `name` appended to the output's file name: `flows.csv` →
/// `flows.csv.manifest.json`.
fn sibling(out: &Path, name: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(name);
    PathBuf::from(s)
}
