//! Classic libpcap capture file reader.
//!
//! Accepts the magic numbers 0xa1b2c3d4 (microsecond timestamps) and
//! 0xa1b23c4d (nanosecond timestamps) in either byte order. pcapng is
//! rejected with a dedicated error. Nanosecond timestamps are truncated
//! to microseconds.

mod packet;

pub use packet::{
    parse_packet, FrameError, LinkType, PacketRecord, Parsed, SkipReason, TcpFlags,
    TransportProtocol,
};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

const MAGIC_MICRO: u32 = 0xa1b2_c3d4;
const MAGIC_NANO: u32 = 0xa1b2_3c4d;
const PCAPNG_MAGIC: u32 = 0x0a0d_0d0a;

#[derive(Debug, thiserror::Error)]
pub enum PcapError {
    #[error("unrecognized capture magic 0x{0:08x}: not a libpcap file")]
    UnrecognizedMagic(u32),
    #[error("pcapng input is not supported; convert to classic pcap first")]
    PcapngUnsupported,
    #[error("unsupported link type {0}; only Ethernet (1) and raw IP (101) are handled")]
    UnsupportedLinkType(u32),
    #[error("capture ends mid-record after {complete} complete records")]
    TruncatedRecord { complete: u64 },
    #[error("capture header truncated ({0} of 24 bytes)")]
    TruncatedHeader(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TsResolution {
    Micro,
    Nano,
}

/// Per-reason counts of frames that did not become packet records.
pub type SkipCounters = BTreeMap<String, u64>;

/// Summary of one capture read.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CaptureMeta {
    pub link_type: LinkType,
    pub ts_resolution: TsResolution,
    /// Number of `PacketRecord`s emitted.
    pub packet_count: u64,
    /// Frames skipped, keyed by reason. Together with `packet_count` this
    /// accounts for every record in the file.
    pub skipped: SkipCounters,
}

impl CaptureMeta {
    pub fn skipped_total(&self) -> u64 {
        self.skipped.values().sum()
    }
}

/// Streaming reader over one capture file.
///
/// Iterating yields packet records in file order; a truncated final record
/// surfaces as a trailing `Err(PcapError::TruncatedRecord)` after every
/// complete record has been emitted.
pub struct CaptureReader<R: Read> {
    input: R,
    swapped: bool,
    resolution: TsResolution,
    link_type: LinkType,
    packet_count: u64,
    skipped: SkipCounters,
    done: bool,
}

impl CaptureReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, PcapError> {
        let file = File::open(path)?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> CaptureReader<R> {
    pub fn new(mut input: R) -> Result<Self, PcapError> {
        let mut header = [0u8; 24];
        read_exact_or_len(&mut input, &mut header).map_err(PcapError::TruncatedHeader)?;
        let magic_le = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
        let magic_be = u32::from_be_bytes([header[0], header[1], header[2], header[3]]);
        if magic_le == PCAPNG_MAGIC || magic_be == PCAPNG_MAGIC {
            return Err(PcapError::PcapngUnsupported);
        }
        // `swapped` means the file's byte order differs from the magic as
        // written, i.e. fields must be read big-endian here.
        let (swapped, resolution) = match (magic_le, magic_be) {
            (MAGIC_MICRO, _) => (false, TsResolution::Micro),
            (MAGIC_NANO, _) => (false, TsResolution::Nano),
            (_, MAGIC_MICRO) => (true, TsResolution::Micro),
            (_, MAGIC_NANO) => (true, TsResolution::Nano),
            _ => return Err(PcapError::UnrecognizedMagic(magic_le)),
        };
        let read_u32 = |b: &[u8]| -> u32 {
            let arr = [b[0], b[1], b[2], b[3]];
            if swapped {
                u32::from_be_bytes(arr)
            } else {
                u32::from_le_bytes(arr)
            }
        };
        let network = read_u32(&header[20..24]);
        let link_type = match network {
            1 => LinkType::Ethernet,
            101 => LinkType::RawIp,
            other => return Err(PcapError::UnsupportedLinkType(other)),
        };
        Ok(CaptureReader {
            input,
            swapped,
            resolution,
            link_type,
            packet_count: 0,
            skipped: SkipCounters::new(),
            done: false,
        })
    }

    pub fn link_type(&self) -> LinkType {
        self.link_type
    }

    pub fn ts_resolution(&self) -> TsResolution {
        self.resolution
    }

    /// Counts reflect what has been consumed from the iterator so far.
    pub fn meta(&self) -> CaptureMeta {
        CaptureMeta {
            link_type: self.link_type,
            ts_resolution: self.resolution,
            packet_count: self.packet_count,
            skipped: self.skipped.clone(),
        }
    }

    fn read_u32(&self, b: &[u8]) -> u32 {
        let arr = [b[0], b[1], b[2], b[3]];
        if self.swapped {
            u32::from_be_bytes(arr)
        } else {
            u32::from_le_bytes(arr)
        }
    }

    fn skip(&mut self, reason: SkipReason) {
        *self.skipped.entry(format!("{reason:?}")).or_insert(0) += 1;
    }

    /// Read the next record, handling skip accounting internally.
    fn next_record(&mut self) -> Option<Result<PacketRecord, PcapError>> {
        loop {
            let mut rec_header = [0u8; 16];
            match read_exact_or_len(&mut self.input, &mut rec_header) {
                Ok(()) => {}
                Err(0) => return None, // clean end of file
                Err(_) => {
                    return Some(Err(PcapError::TruncatedRecord {
                        complete: self.packet_count + self.skipped_total(),
                    }))
                }
            }
            let ts_sec = u64::from(self.read_u32(&rec_header[0..4]));
            let ts_frac = u64::from(self.read_u32(&rec_header[4..8]));
            let incl_len = self.read_u32(&rec_header[8..12]) as usize;
            let mut data = vec![0u8; incl_len];
            if read_exact_or_len(&mut self.input, &mut data).is_err() {
                return Some(Err(PcapError::TruncatedRecord {
                    complete: self.packet_count + self.skipped_total(),
                }));
            }
            let timestamp = match self.resolution {
                TsResolution::Micro => ts_sec * 1_000_000 + ts_frac,
                TsResolution::Nano => ts_sec * 1_000_000 + ts_frac / 1_000,
            };
            match parse_packet(&data, self.link_type, timestamp) {
                Ok(Parsed::Record(rec)) => {
                    self.packet_count += 1;
                    return Some(Ok(rec));
                }
                Ok(Parsed::Skip(reason)) => {
                    self.skip(reason);
                    continue;
                }
                Err(FrameError::MalformedHeader(_)) => {
                    // Record framing is intact, so keep reading; the frame
                    // is accounted as skipped to preserve conservation.
                    self.skip(SkipReason::Malformed);
                    continue;
                }
            }
        }
    }

    fn skipped_total(&self) -> u64 {
        self.skipped.values().sum()
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<PacketRecord, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.next_record();
        if matches!(item, Some(Err(_)) | None) {
            self.done = true;
        }
        item
    }
}

/// A fully read capture.
#[derive(Debug)]
pub struct Capture {
    pub records: Vec<PacketRecord>,
    pub meta: CaptureMeta,
    /// Present when the file ended mid-record; all complete records were
    /// still collected.
    pub truncation: Option<PcapError>,
}

/// Read a capture file into memory.
///
/// Header-level problems (bad magic, pcapng, unsupported link type) fail
/// outright; a truncated final record is reported through
/// `Capture::truncation` alongside the complete records.
pub fn read_capture(path: &Path) -> Result<Capture, PcapError> {
    let mut reader = CaptureReader::open(path)?;
    let mut records = Vec::new();
    let mut truncation = None;
    for item in reader.by_ref() {
        match item {
            Ok(rec) => records.push(rec),
            Err(e) => truncation = Some(e),
        }
    }
    Ok(Capture {
        records,
        meta: reader.meta(),
        truncation,
    })
}

/// Like `Read::read_exact` but distinguishes "no bytes at all" from a short
/// read, returning the number of bytes actually read on failure.
fn read_exact_or_len<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<(), usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => return Err(filled),
            Ok(n) => filled += n,
            Err(ref e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(_) => return Err(filled),
        }
    }
    Ok(())
}
