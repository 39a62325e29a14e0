//! Desk-scale evaluation pipeline for ML-based network intrusion detectors
//! under host-space perturbations (HsP): attack variants produced by running
//! *different commands* on attacker-controlled hosts rather than by editing
//! captured data.
//!
//! The pipeline follows the usual NIDS data path: packet captures are parsed
//! ([`pcap`]), aggregated into bidirectional flows with canonical features
//! ([`flow`]), labeled and sanitized into datasets ([`dataset`]), classified
//! by a registry of deterministic models ([`models`]), and evaluated by
//! seeded experiment runners ([`experiment`]). The [`analysis`] module
//! quantifies what a perturbation does to the feature space, and [`synth`]
//! generates the packet-level fixtures used throughout the test suite.

#![forbid(unsafe_code)]

pub mod analysis;
pub mod dataset;
pub mod experiment;
pub mod flow;
pub mod manifest;
pub mod models;
pub mod pcap;
pub mod synth;
