//! Link/network/transport header decoding for captured frames.

use std::fmt;
use std::net::Ipv4Addr;

/// TCP flag bits as laid out in byte 13 of the TCP header.
#[derive(Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
    pub const ECE: u8 = 0x40;
    pub const CWR: u8 = 0x80;

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(u8, &str); 8] = [
            (TcpFlags::FIN, "FIN"),
            (TcpFlags::SYN, "SYN"),
            (TcpFlags::RST, "RST"),
            (TcpFlags::PSH, "PSH"),
            (TcpFlags::ACK, "ACK"),
            (TcpFlags::URG, "URG"),
            (TcpFlags::ECE, "ECE"),
            (TcpFlags::CWR, "CWR"),
        ];
        let mut first = true;
        for (bit, name) in NAMES {
            if self.has(bit) {
                if !first {
                    write!(f, "|")?;
                }
                write!(f, "{name}")?;
                first = false;
            }
        }
        if first {
            write!(f, "-")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransportProtocol {
    Tcp,
    Udp,
    Other,
}

impl TransportProtocol {
    /// IANA protocol number as used in the flow CSV (`Other` maps to 0).
    pub fn number(self) -> u8 {
        match self {
            TransportProtocol::Tcp => 6,
            TransportProtocol::Udp => 17,
            TransportProtocol::Other => 0,
        }
    }
}

/// One decoded IPv4 packet.
///
/// `header_len` counts every header byte from the link layer down to the
/// transport header; `total_len = header_len + payload_len`. Lengths are
/// derived from the declared header fields, so link-layer padding (e.g.
/// Ethernet frames padded to 60 bytes) is excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    /// Microseconds since the capture epoch.
    pub timestamp: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    /// Zero for `TransportProtocol::Other`.
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: TransportProtocol,
    /// Empty unless `protocol == Tcp`.
    pub tcp_flags: TcpFlags,
    pub payload_len: u32,
    pub header_len: u32,
    pub total_len: u32,
    /// Receive window of a TCP packet; `None` for non-TCP.
    pub tcp_window: Option<u16>,
}

/// Why a captured frame was not turned into a `PacketRecord`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SkipReason {
    /// Not an IPv4 packet (ARP, IPv6, unknown ethertype, ...).
    NonIp,
    Ipv6,
    /// Second or later fragment of a fragmented datagram.
    Fragment,
    /// More than one VLAN tag (802.1ad / QinQ).
    QinQ,
    /// Header declared lengths that exceed the captured bytes.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Record(PacketRecord),
    Skip(SkipReason),
}

/// Link-layer framing of the capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LinkType {
    /// DLT 1: frames start with a 14-byte Ethernet header.
    Ethernet,
    /// DLT 101: frames start directly with the IP header.
    RawIp,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
}

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

/// Decode one captured frame into a packet record.
///
/// Non-IPv4 frames, later fragments and QinQ-tagged frames come back as
/// `Parsed::Skip`; only frames whose headers declare more bytes than were
/// captured are errors.
pub fn parse_packet(raw: &[u8], link_type: LinkType, timestamp: u64) -> Result<Parsed, FrameError> {
    let (ip, link_header_len) = match link_type {
        LinkType::Ethernet => match strip_ethernet(raw)? {
            Ok(pair) => pair,
            Err(reason) => return Ok(Parsed::Skip(reason)),
        },
        LinkType::RawIp => (raw, 0u32),
    };
    parse_ipv4(ip, link_header_len, timestamp)
}

/// Strip the Ethernet header, unwrapping a single 802.1Q tag.
fn strip_ethernet(raw: &[u8]) -> Result<Result<(&[u8], u32), SkipReason>, FrameError> {
    if raw.len() < 14 {
        return Err(FrameError::MalformedHeader("frame shorter than Ethernet header"));
    }
    let mut ethertype = u16::from_be_bytes([raw[12], raw[13]]);
    let mut offset = 14usize;
    if ethertype == ETHERTYPE_QINQ {
        return Ok(Err(SkipReason::QinQ));
    }
    if ethertype == ETHERTYPE_VLAN {
        if raw.len() < offset + 4 {
            return Err(FrameError::MalformedHeader("truncated VLAN tag"));
        }
        ethertype = u16::from_be_bytes([raw[offset + 2], raw[offset + 3]]);
        offset += 4;
        if ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
            return Ok(Err(SkipReason::QinQ));
        }
    }
    match ethertype {
        ETHERTYPE_IPV4 => Ok(Ok((&raw[offset..], offset as u32))),
        ETHERTYPE_IPV6 => Ok(Err(SkipReason::Ipv6)),
        _ => Ok(Err(SkipReason::NonIp)),
    }
}

fn parse_ipv4(ip: &[u8], link_header_len: u32, timestamp: u64) -> Result<Parsed, FrameError> {
    if ip.is_empty() {
        return Err(FrameError::MalformedHeader("empty IP buffer"));
    }
    let version = ip[0] >> 4;
    if version == 6 {
        return Ok(Parsed::Skip(SkipReason::Ipv6));
    }
    if version != 4 {
        return Ok(Parsed::Skip(SkipReason::NonIp));
    }
    if ip.len() < 20 {
        return Err(FrameError::MalformedHeader("IPv4 header truncated"));
    }
    let ihl = u32::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl as usize {
        return Err(FrameError::MalformedHeader("IPv4 IHL exceeds buffer"));
    }
    let ip_total_len = u32::from(u16::from_be_bytes([ip[2], ip[3]]));
    if ip_total_len < ihl {
        return Err(FrameError::MalformedHeader("IPv4 total length below header length"));
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x1fff != 0 {
        return Ok(Parsed::Skip(SkipReason::Fragment));
    }
    let proto_byte = ip[9];
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let l4 = &ip[ihl as usize..];

    let (protocol, l4_header_len, src_port, dst_port, tcp_flags, tcp_window) = match proto_byte {
        6 => {
            if l4.len() < 20 {
                return Err(FrameError::MalformedHeader("TCP header truncated"));
            }
            let data_offset = u32::from(l4[12] >> 4) * 4;
            if data_offset < 20 || l4.len() < data_offset as usize {
                return Err(FrameError::MalformedHeader("TCP data offset exceeds buffer"));
            }
            let src = u16::from_be_bytes([l4[0], l4[1]]);
            let dst = u16::from_be_bytes([l4[2], l4[3]]);
            let flags = TcpFlags(l4[13]);
            let window = u16::from_be_bytes([l4[14], l4[15]]);
            (TransportProtocol::Tcp, data_offset, src, dst, flags, Some(window))
        }
        17 => {
            if l4.len() < 8 {
                return Err(FrameError::MalformedHeader("UDP header truncated"));
            }
            let src = u16::from_be_bytes([l4[0], l4[1]]);
            let dst = u16::from_be_bytes([l4[2], l4[3]]);
            (TransportProtocol::Udp, 8, src, dst, TcpFlags::empty(), None)
        }
        _ => (TransportProtocol::Other, 0, 0, 0, TcpFlags::empty(), None),
    };

    if ip_total_len < ihl + l4_header_len {
        return Err(FrameError::MalformedHeader("IPv4 total length below transport header"));
    }
    let payload_len = ip_total_len - ihl - l4_header_len;
    let header_len = link_header_len + ihl + l4_header_len;

    Ok(Parsed::Record(PacketRecord {
        timestamp,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        tcp_flags,
        payload_len,
        header_len,
        total_len: header_len + payload_len,
        tcp_window,
    }))
}
