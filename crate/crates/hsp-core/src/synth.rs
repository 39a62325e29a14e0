//! Seeded synthetic packet traffic.
//!
//! Generates desk-scale captures with several benign conversation shapes
//! (web, bulk download, DNS, chat keepalives, interactive SSH, telemetry
//! bursts) plus two SSH brute-force behaviors that differ only in how the
//! attacking tool drives connections: one login attempt per TCP connection
//! versus six attempts over a single persistent connection before the
//! server closes it. The benign mix deliberately brackets the attack
//! clusters in packet sizes, counts and tempo so that detecting the
//! attacks requires combining features rather than reading one column.

use std::net::Ipv4Addr;
use std::ops::RangeInclusive;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{label_flows, LabeledDataset, RuleSet};
use crate::flow::features::{compute_features, FeatureVector};
use crate::flow::{assemble_flows, FlowConfig};
use crate::pcap::{PacketRecord, TcpFlags, TransportProtocol};

pub const SSH_TARGET: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 9);
pub const ATTACKER_SINGLE: Ipv4Addr = Ipv4Addr::new(10, 9, 0, 2);
pub const ATTACKER_PERSISTENT: Ipv4Addr = Ipv4Addr::new(10, 9, 0, 3);

/// Variant tag for the one-attempt-per-connection behavior.
pub const TAG_SINGLE: &str = "patator_p0";
/// Variant tag for the persistent six-attempts-per-connection behavior.
pub const TAG_PERSISTENT: &str = "patator_p1";
pub const TAG_BACKGROUND: &str = "background";

/// Conversation counts per class, plus the generator seed.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub web: usize,
    pub bulk: usize,
    pub dns: usize,
    pub chat: usize,
    pub interactive_ssh: usize,
    pub telemetry: usize,
    pub attack_single: usize,
    pub attack_persistent: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            web: 220,
            bulk: 120,
            dns: 150,
            chat: 120,
            interactive_ssh: 90,
            telemetry: 140,
            attack_single: 260,
            attack_persistent: 260,
        }
    }
}

impl SynthConfig {
    /// A reduced mix for fast unit tests.
    pub fn small(seed: u64) -> Self {
        SynthConfig {
            seed,
            web: 30,
            bulk: 16,
            dns: 20,
            chat: 16,
            interactive_ssh: 12,
            telemetry: 20,
            attack_single: 30,
            attack_persistent: 30,
        }
    }
}

/// Labeling rules matching the generated attacker hosts.
pub fn label_rules() -> String {
    format!(
        "\
# synthetic capture labeling: attacker hosts carry the attack tags
src_ip={ATTACKER_SINGLE} dst_ip={SSH_TARGET} dst_port=22 protocol=tcp => malicious {TAG_SINGLE}
src_ip={ATTACKER_PERSISTENT} dst_ip={SSH_TARGET} dst_port=22 protocol=tcp => malicious {TAG_PERSISTENT}
=> benign {TAG_BACKGROUND}
"
    )
}

const EPOCH: u64 = 1_700_000_000_000_000;
const WINDOW: u64 = 600_000_000; // conversations start within 10 minutes

struct Conversation {
    packets: Vec<PacketRecord>,
    now: u64,
    client: (Ipv4Addr, u16),
    server: (Ipv4Addr, u16),
}

impl Conversation {
    fn new(start: u64, client: (Ipv4Addr, u16), server: (Ipv4Addr, u16)) -> Self {
        Conversation { packets: Vec::new(), now: start, client, server }
    }

    fn push(&mut self, fwd: bool, gap: u64, proto: TransportProtocol, flags: u8, payload: u32) {
        self.now += gap;
        let (src, dst) = if fwd { (self.client, self.server) } else { (self.server, self.client) };
        let header_len = match proto {
            TransportProtocol::Tcp => 54,
            TransportProtocol::Udp => 42,
            TransportProtocol::Other => 34,
        };
        let window = match proto {
            TransportProtocol::Tcp => Some(if fwd { 64240 } else { 29200 }),
            _ => None,
        };
        self.packets.push(PacketRecord {
            timestamp: self.now,
            src_ip: src.0,
            dst_ip: dst.0,
            src_port: src.1,
            dst_port: dst.1,
            protocol: proto,
            tcp_flags: if proto == TransportProtocol::Tcp { TcpFlags(flags) } else { TcpFlags::empty() },
            payload_len: payload,
            header_len,
            total_len: header_len + payload,
            tcp_window: window,
        });
    }

    fn tcp(&mut self, fwd: bool, gap: u64, flags: u8, payload: u32) {
        self.push(fwd, gap, TransportProtocol::Tcp, flags, payload);
    }

    fn udp(&mut self, fwd: bool, gap: u64, payload: u32) {
        self.push(fwd, gap, TransportProtocol::Udp, 0, payload);
    }

    fn handshake(&mut self, rng: &mut ChaCha8Rng) {
        use TcpFlags as F;
        self.tcp(true, 0, F::SYN, 0);
        self.tcp(false, jit(rng, 800..=4_000), F::SYN | F::ACK, 0);
        self.tcp(true, jit(rng, 300..=1_200), F::ACK, 0);
    }

    fn fin_close(&mut self, rng: &mut ChaCha8Rng, client_first: bool) {
        use TcpFlags as F;
        self.tcp(client_first, jit(rng, 1_000..=6_000), F::FIN | F::ACK, 0);
        self.tcp(!client_first, jit(rng, 800..=4_000), F::FIN | F::ACK, 0);
        self.tcp(client_first, jit(rng, 300..=1_500), F::ACK, 0);
    }
}

fn jit(rng: &mut ChaCha8Rng, range: RangeInclusive<u64>) -> u64 {
    rng.gen_range(range)
}

fn pay(rng: &mut ChaCha8Rng, range: RangeInclusive<u32>) -> u32 {
    rng.gen_range(range)
}

fn ephemeral(rng: &mut ChaCha8Rng) -> u16 {
    rng.gen_range(20_000..=64_000)
}

fn client_ip(class_octet: u8, idx: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, class_octet, (1 + idx % 240) as u8)
}

use TcpFlags as F;
const DATA: u8 = F::PSH | F::ACK;

fn web_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (client_ip(2, idx), ephemeral(rng));
    let server = (Ipv4Addr::new(93, 184, 216, 34), 443);
    let mut c = Conversation::new(start, client, server);
    c.handshake(rng);
    c.tcp(true, jit(rng, 500..=3_000), DATA, pay(rng, 180..=600));
    let responses = rng.gen_range(6..=18);
    for r in 0..responses {
        c.tcp(false, jit(rng, 2_000..=30_000), DATA, pay(rng, 600..=1_400));
        if r % 2 == 1 {
            c.tcp(true, jit(rng, 200..=900), F::ACK, 0);
        }
    }
    c.fin_close(rng, true);
    c.packets
}

fn bulk_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (client_ip(3, idx), ephemeral(rng));
    let server = (Ipv4Addr::new(104, 16, 1, 1), 443);
    let mut c = Conversation::new(start, client, server);
    c.handshake(rng);
    c.tcp(true, jit(rng, 500..=2_000), DATA, pay(rng, 200..=420));
    let segments = rng.gen_range(35..=70);
    for s in 0..segments {
        c.tcp(false, jit(rng, 1_500..=6_000), DATA, pay(rng, 1_200..=1_448));
        if s % 3 == 2 {
            c.tcp(true, jit(rng, 150..=700), F::ACK, 0);
        }
    }
    c.fin_close(rng, true);
    c.packets
}

fn dns_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (client_ip(4, idx), ephemeral(rng));
    let server = (Ipv4Addr::new(10, 0, 0, 53), 53);
    let mut c = Conversation::new(start, client, server);
    c.udp(true, 0, pay(rng, 33..=60));
    c.udp(false, jit(rng, 8_000..=40_000), pay(rng, 90..=220));
    c.packets
}

fn chat_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (client_ip(5, idx), ephemeral(rng));
    let server = (Ipv4Addr::new(10, 0, 5, (250 - idx % 4) as u8), 5004);
    let mut c = Conversation::new(start, client, server);
    let messages = rng.gen_range(4..=8);
    for m in 0..messages {
        let fwd = m % 2 == 0;
        let gap = if m == 0 { 0 } else { jit(rng, 900_000..=3_800_000) };
        c.udp(fwd, gap, pay(rng, 20..=90));
    }
    c.packets
}

/// Metrics exporter pushing small records fast: matches the attacks in
/// packet sizes but runs at burst tempo with a large packet count.
fn telemetry_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (client_ip(7, idx), ephemeral(rng));
    let server = (Ipv4Addr::new(10, 0, 0, 60), 9100);
    let mut c = Conversation::new(start, client, server);
    c.handshake(rng);
    let pushes = rng.gen_range(20..=32);
    for p in 0..pushes {
        c.tcp(true, jit(rng, 4_000..=14_000), DATA, pay(rng, 30..=90));
        if p % 2 == 1 {
            c.tcp(false, jit(rng, 200..=900), F::ACK, 0);
        }
    }
    c.fin_close(rng, true);
    c.packets
}

/// A human typing over SSH: attack-sized packets at keystroke tempo.
fn interactive_ssh_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (client_ip(6, idx), ephemeral(rng));
    let server = (SSH_TARGET, 22);
    let mut c = Conversation::new(start, client, server);
    c.handshake(rng);
    c.tcp(false, jit(rng, 8_000..=25_000), DATA, pay(rng, 24..=40)); // banner
    c.tcp(true, jit(rng, 1_000..=4_000), DATA, pay(rng, 24..=40));
    c.tcp(true, jit(rng, 2_000..=6_000), DATA, pay(rng, 120..=200)); // kex
    c.tcp(false, jit(rng, 3_000..=9_000), DATA, pay(rng, 260..=400));
    let keystrokes = rng.gen_range(12..=18);
    for k in 0..keystrokes {
        c.tcp(true, jit(rng, 1_200_000..=3_500_000), DATA, pay(rng, 8..=40));
        c.tcp(false, jit(rng, 20_000..=80_000), DATA, pay(rng, 16..=120));
        if k % 3 == 0 {
            c.tcp(true, jit(rng, 300..=1_400), F::ACK, 0);
        }
    }
    c.fin_close(rng, true);
    c.packets
}

/// One SSH login attempt: request, failure response, ack.
fn auth_attempt(c: &mut Conversation, rng: &mut ChaCha8Rng, first_gap: u64) {
    c.tcp(true, first_gap, DATA, pay(rng, 56..=96));
    c.tcp(false, jit(rng, 30_000..=90_000), DATA, pay(rng, 24..=56));
    c.tcp(true, jit(rng, 300..=1_500), F::ACK, 0);
}

fn ssh_preamble(c: &mut Conversation, rng: &mut ChaCha8Rng) {
    c.handshake(rng);
    c.tcp(false, jit(rng, 8_000..=25_000), DATA, pay(rng, 24..=40)); // banner
    c.tcp(true, jit(rng, 1_000..=4_000), DATA, pay(rng, 24..=40));
    c.tcp(true, jit(rng, 2_000..=6_000), DATA, pay(rng, 120..=200)); // kex
    c.tcp(false, jit(rng, 3_000..=9_000), DATA, pay(rng, 260..=400));
}

/// One login attempt, then the client tears the connection down and the
/// tool reconnects for the next guess (a separate conversation).
fn attack_single_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (ATTACKER_SINGLE, 40_000u16.wrapping_add(idx as u16));
    let mut c = Conversation::new(start, client, (SSH_TARGET, 22));
    ssh_preamble(&mut c, rng);
    let first_gap = jit(rng, 15_000..=45_000);
    auth_attempt(&mut c, rng, first_gap);
    for _ in 0..rng.gen_range(0..=2) {
        c.tcp(true, jit(rng, 400..=1_600), F::ACK, 0);
    }
    c.fin_close(rng, true);
    c.packets
}

/// Six attempts over one connection; the server enforces a delay between
/// failures and closes the connection after the sixth.
fn attack_persistent_conversation(rng: &mut ChaCha8Rng, start: u64, idx: usize) -> Vec<PacketRecord> {
    let client = (ATTACKER_PERSISTENT, 40_000u16.wrapping_add(idx as u16));
    let mut c = Conversation::new(start, client, (SSH_TARGET, 22));
    ssh_preamble(&mut c, rng);
    for attempt in 0..6 {
        let first_gap = if attempt == 0 {
            jit(rng, 15_000..=45_000)
        } else {
            jit(rng, 380_000..=700_000)
        };
        auth_attempt(&mut c, rng, first_gap);
    }
    for _ in 0..rng.gen_range(0..=4) {
        c.tcp(true, jit(rng, 400..=1_600), F::ACK, 0);
    }
    c.fin_close(rng, false); // server closes after six failures
    c.packets
}

/// Generate the configured conversation mix as one capture-ordered packet
/// stream (sorted by timestamp, ties in generation order).
pub fn generate_packets(cfg: &SynthConfig) -> Vec<PacketRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut packets: Vec<PacketRecord> = Vec::new();
    type Gen = fn(&mut ChaCha8Rng, u64, usize) -> Vec<PacketRecord>;
    let classes: [(usize, Gen); 8] = [
        (cfg.web, web_conversation),
        (cfg.bulk, bulk_conversation),
        (cfg.dns, dns_conversation),
        (cfg.chat, chat_conversation),
        (cfg.interactive_ssh, interactive_ssh_conversation),
        (cfg.telemetry, telemetry_conversation),
        (cfg.attack_single, attack_single_conversation),
        (cfg.attack_persistent, attack_persistent_conversation),
    ];
    for (count, gen) in classes {
        for i in 0..count {
            let start = EPOCH + rng.gen_range(0..WINDOW);
            packets.extend(gen(&mut rng, start, i));
        }
    }
    packets.sort_by_key(|p| p.timestamp);
    packets
}

/// Packets → flows → features with default timeouts.
pub fn generate_flows(cfg: &SynthConfig) -> Vec<FeatureVector> {
    let packets = generate_packets(cfg);
    let set = assemble_flows(&packets, FlowConfig::default());
    set.flows.iter().map(compute_features).collect()
}

/// The full fixture: generated flows labeled with the standard rule set,
/// in canonical pre-sanitization columns.
pub fn generate_labeled(cfg: &SynthConfig) -> LabeledDataset {
    let rules = RuleSet::parse(&label_rules()).expect("fixture rules parse");
    let flows = generate_flows(cfg);
    let (ds, _) = label_flows(&flows, &rules);
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;

    #[test]
    fn one_flow_per_conversation() {
        let cfg = SynthConfig::small(7);
        let ds = generate_labeled(&cfg);
        let counts = ds.count_by_group();
        assert_eq!(counts[&(Label::Malicious, TAG_SINGLE.to_string())], cfg.attack_single);
        assert_eq!(counts[&(Label::Malicious, TAG_PERSISTENT.to_string())], cfg.attack_persistent);
        let benign: usize = counts
            .iter()
            .filter(|((l, _), _)| *l == Label::Benign)
            .map(|(_, n)| n)
            .sum();
        assert_eq!(
            benign,
            cfg.web + cfg.bulk + cfg.dns + cfg.chat + cfg.interactive_ssh + cfg.telemetry
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::small(3);
        let a = generate_packets(&cfg);
        let b = generate_packets(&cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn persistent_attack_has_more_interactions_than_single() {
        let cfg = SynthConfig::small(5);
        let flows = generate_flows(&cfg);
        let rules = RuleSet::parse(&label_rules()).unwrap();
        let mut single_pkts = Vec::new();
        let mut persistent_pkts = Vec::new();
        for f in &flows {
            let rule = rules.apply(f);
            let total = f.tot_fwd_pkts + f.tot_bwd_pkts;
            match rule.variant_tag.as_str() {
                TAG_SINGLE => single_pkts.push(total),
                TAG_PERSISTENT => persistent_pkts.push(total),
                _ => {}
            }
        }
        let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len() as f64;
        assert!(mean(&persistent_pkts) > 1.8 * mean(&single_pkts));
        // Each persistent connection stays a single flow.
        assert!(persistent_pkts.iter().all(|&n| n >= 25));
        assert!(single_pkts.iter().all(|&n| (12..=16).contains(&n)));
    }

    #[test]
    fn timestamps_are_sorted() {
        let packets = generate_packets(&SynthConfig::small(11));
        assert!(packets.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }
}
