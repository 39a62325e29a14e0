//! CLI-side acceptance: golden extraction through the real binary
//! (criterion 2) and end-to-end experiment determinism (criterion 9),
//! plus the documented error exits.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hsp_core::dataset::{label_flows, write_labeled_csv, RuleSet};
use hsp_core::synth::{self, SynthConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsp"))
}

fn core_data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../hsp-core/tests/data").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Criterion 2, binary side: `hsp extract` on the checked-in capture
/// reproduces the golden CSV byte for byte.
#[test]
fn criterion_02_cli_golden_extraction() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("flows.csv");
    run_ok(bin()
        .arg("extract")
        .arg("--pcap")
        .arg(core_data("golden.pcap"))
        .arg("--out")
        .arg(&out_csv));
    let produced = std::fs::read(&out_csv).unwrap();
    let golden = std::fs::read(core_data("golden_flows.csv")).unwrap();
    assert_eq!(produced, golden);
    // Sidecar and manifest exist alongside.
    assert!(dir.path().join("flows.csv.meta.json").exists());
    assert!(dir.path().join("flows.csv.manifest.json").exists());
    println!("[criterion 2] PASS - cmd_extract reproduces the golden CSV byte-identically");
}

#[test]
fn extract_reruns_reproduce_the_manifest_digest() {
    let digest_of = |dir: &Path| {
        let out_csv = dir.join("flows.csv");
        run_ok(bin()
            .arg("extract")
            .arg("--pcap")
            .arg(core_data("golden.pcap"))
            .arg("--out")
            .arg(&out_csv));
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("flows.csv.manifest.json")).unwrap())
                .unwrap();
        manifest["result_digest"].as_str().unwrap().to_string()
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    assert_eq!(digest_of(d1.path()), digest_of(d2.path()));
}

#[test]
fn extract_rejects_unrecognized_magic() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("not_a_capture.pcap");
    std::fs::write(&bogus, vec![0u8; 64]).unwrap();
    let out = bin()
        .arg("extract")
        .arg("--pcap")
        .arg(&bogus)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("magic"), "stderr: {stderr}");
}

#[test]
fn extract_truncated_capture_salvages_complete_flows_then_fails() {
    // Cut the golden capture mid-record: every complete record must still
    // be extracted, and the truncation reported through the exit code.
    let golden = std::fs::read(core_data("golden.pcap")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cut = dir.path().join("cut.pcap");
    std::fs::write(&cut, &golden[..golden.len() - 25]).unwrap();
    let out_csv = dir.path().join("flows.csv");
    let out = bin()
        .arg("extract")
        .arg("--pcap")
        .arg(&cut)
        .arg("--out")
        .arg(&out_csv)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mid-record"));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert!(text.lines().count() > 1, "complete flows were written");
}

#[test]
fn label_tags_matching_flows() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules.txt");
    std::fs::write(&rules, "dst_port=80 => malicious web_probe\n=> benign background\n").unwrap();
    let labeled = dir.path().join("labeled.csv");
    let out = run_ok(bin()
        .arg("label")
        .arg("--flows")
        .arg(core_data("golden_flows.csv"))
        .arg("--rules")
        .arg(&rules)
        .arg("--out")
        .arg(&labeled));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("malicious web_probe: 1"), "stdout: {stdout}");
    assert!(stdout.contains("benign background: 4"));
    let text = std::fs::read_to_string(&labeled).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",malicious,web_probe")).count(), 1);
    assert_eq!(text.lines().filter(|l| l.ends_with(",benign,background")).count(), 4);
}

#[test]
fn extract_empty_capture_writes_header_only() {
    // 24-byte header, zero records.
    let mut header = Vec::new();
    header.extend_from_slice(&0xa1b2c3d4u32.to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&4u16.to_le_bytes());
    header.extend_from_slice(&0i32.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&65535u32.to_le_bytes());
    header.extend_from_slice(&1u32.to_le_bytes());
    let dir = tempfile::tempdir().unwrap();
    let pcap = dir.path().join("empty.pcap");
    std::fs::write(&pcap, header).unwrap();
    let out_csv = dir.path().join("flows.csv");
    run_ok(bin().arg("extract").arg("--pcap").arg(&pcap).arg("--out").arg(&out_csv));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(text.lines().count(), 1, "header only");
}

fn write_fixture(dir: &Path) -> PathBuf {
    let flows = synth::generate_flows(&SynthConfig::default());
    let rules = RuleSet::parse(&synth::label_rules()).unwrap();
    let (ds, _) = label_flows(&flows, &rules);
    let path = dir.join("fixture.labeled.csv");
    write_labeled_csv(&flows, &ds.labels, &ds.tags, &path).unwrap();
    path
}

const EXPERIMENT_TOML: &str = r#"
datasets = ["fixture.labeled.csv"]
split_fraction = 0.8
trials = 5
base_seed = 7

[scenario]
goal = "bruteforce ssh credentials on the lab target without detection"
knowledge = "detector trained on the persistent six-attempt variant"
capabilities = "shell on one compromised host, no extra privileges"
hosts = "one attacker-controlled workstation"
baseline_ops = "patator_p1"
perturbed_ops = "patator_p0"

[[models]]
kind = "decision_tree"

[[models]]
kind = "random_forest"

[[models]]
kind = "linear_margin"

[[models]]
kind = "feedforward_net"

[retrain]
enabled = true
augment_fraction = 0.8
"#;

/// Criterion 9: the experiment command run twice with the same seed emits
/// byte-identical result CSVs and equal manifest result digests.
#[test]
fn criterion_09_experiment_determinism() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let config = dir.path().join("experiment.toml");
    std::fs::write(&config, EXPERIMENT_TOML).unwrap();

    let run = |out_dir: &Path| {
        run_ok(bin()
            .arg("experiment")
            .arg("--config")
            .arg(&config)
            .arg("--out-dir")
            .arg(out_dir)
            .arg("--seed")
            .arg("7"));
        let results = std::fs::read(out_dir.join("results.csv")).unwrap();
        let results_json = std::fs::read(out_dir.join("results.json")).unwrap();
        let retrain = std::fs::read(out_dir.join("retrain.csv")).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
        let digest = manifest["result_digest"].as_str().unwrap().to_string();
        (results, results_json, retrain, digest)
    };

    let first = run(&dir.path().join("run1"));
    let second = run(&dir.path().join("run2"));
    assert_eq!(first.0, second.0, "results.csv differs between runs");
    assert_eq!(first.1, second.1, "results.json differs between runs");
    assert_eq!(first.2, second.2, "retrain.csv differs between runs");
    assert_eq!(first.3, second.3, "manifest result digests differ");
    println!("[criterion 9] PASS - cmd_experiment reruns are byte-identical (digest {})", first.3);
}

#[test]
fn experiment_missing_variant_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let config = dir.path().join("experiment.toml");
    std::fs::write(&config, EXPERIMENT_TOML.replace("patator_p0", "hydra_default")).unwrap();
    let out = bin()
        .arg("experiment")
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hydra_default"), "stderr: {stderr}");
}

#[test]
fn label_requires_default_rule() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules.txt");
    std::fs::write(&rules, "dst_port=22 => malicious ssh\n").unwrap();
    let out = bin()
        .arg("label")
        .arg("--flows")
        .arg(core_data("golden_flows.csv"))
        .arg("--rules")
        .arg(&rules)
        .arg("--out")
        .arg(dir.path().join("labeled.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("default"));
}

#[test]
fn analyze_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("reports");
    run_ok(bin()
        .arg("analyze")
        .arg("--a")
        .arg(core_data("golden_flows.csv"))
        .arg("--b")
        .arg(core_data("golden_flows.csv"))
        .arg("--out-dir")
        .arg(&out_dir));
    for name in ["ratio.csv", "ratio.json", "ood.csv", "ood.json", "manifest.json"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let ratio = std::fs::read_to_string(out_dir.join("ratio.csv")).unwrap();
    assert!(ratio.lines().skip(1).all(|l| l.is_empty() || l.ends_with(",1,true") || l.ends_with(",,false")));
}

#[test]
fn perturb_rejects_nonpositive_factor() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("perturb")
        .arg("--flows")
        .arg(core_data("golden_flows.csv"))
        .arg("--factor")
        .arg("0")
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn perturb_factor_one_reproduces_input_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("same.csv");
    run_ok(bin()
        .arg("perturb")
        .arg("--flows")
        .arg(core_data("golden_flows.csv"))
        .arg("--factor")
        .arg("1")
        .arg("--out")
        .arg(&out_csv));
    // Byte equality holds because reading reconstructs the derived fields
    // and factor 1 is the identity on the primitives.
    assert_eq!(
        std::fs::read(&out_csv).unwrap(),
        std::fs::read(core_data("golden_flows.csv")).unwrap()
    );
}
