//! Binary frame layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ARNK"
//!      4     1  version
//!      5     1  kind (0 fragment, 1 CONVERGE, 2 DIVERGE, 3 STOP)
//!      6     4  sender
//!     10     8  local_iter
//!     18     4  range_start
//!     22     4  range_len
//!     26  8·len payload, IEEE-754 f64
//!      …     4  CRC32 of every preceding byte
//! ```
//!
//! Control frames carry zero `local_iter`, `range_start` and `range_len`.

use std::sync::Arc;

use thiserror::Error;

use super::Message;
use crate::engine::Fragment;
use crate::termination::{ControlKind, ControlMessage};

pub const MAGIC: [u8; 4] = *b"ARNK";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;
pub const CHECKSUM_LEN: usize = 4;
/// Upper bound accepted when reading a length from an untrusted header.
pub const MAX_FRAME_VALUES: usize = 1 << 28;

const KIND_FRAGMENT: u8 = 0;
const KIND_CONVERGE: u8 = 1;
const KIND_DIVERGE: u8 = 2;
const KIND_STOP: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("{0} does not fit the frame's 32-bit field")]
    TooLarge(&'static str),
    #[error("frame truncated: have {have} bytes, need {need}")]
    Truncated { have: usize, need: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown kind byte {0}")]
    BadKind(u8),
    #[error("declared payload of {0} values exceeds the frame limit")]
    Oversized(usize),
    #[error("checksum mismatch: frame says {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("control frame with non-zero fragment fields")]
    Malformed,
    #[error("{0} bytes after the frame")]
    Trailing(usize),
}

impl CodecError {
    /// Errors after which the byte stream can no longer be resynchronized.
    pub fn is_fatal(&self) -> bool {
        matches!(self, Self::BadMagic(_) | Self::BadVersion(_) | Self::BadKind(_) | Self::Oversized(_))
    }
}

pub fn frame_len(range_len: usize) -> usize {
    HEADER_LEN + 8 * range_len + CHECKSUM_LEN
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let (kind, sender, local_iter, start, values): (u8, u32, u64, usize, &[f64]) = match msg {
        Message::Fragment(f) => (KIND_FRAGMENT, f.sender, f.local_iter, f.start, &f.values),
        Message::Control(c) => {
            let kind = match c.kind {
                ControlKind::Converge => KIND_CONVERGE,
                ControlKind::Diverge => KIND_DIVERGE,
                ControlKind::Stop => KIND_STOP,
            };
            (kind, c.sender, 0, 0, &[])
        }
    };
    let start = u32::try_from(start).map_err(|_| CodecError::TooLarge("range start"))?;
    let len = u32::try_from(values.len()).map_err(|_| CodecError::TooLarge("fragment length"))?;

    let mut buf = Vec::with_capacity(frame_len(values.len()));
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(kind);
    buf.extend_from_slice(&sender.to_le_bytes());
    buf.extend_from_slice(&local_iter.to_le_bytes());
    buf.extend_from_slice(&start.to_le_bytes());
    buf.extend_from_slice(&len.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Validates a header and returns the full length of its frame.
pub fn frame_len_from_header(header: &[u8]) -> Result<usize, CodecError> {
    if header.len() < HEADER_LEN {
        return Err(CodecError::Truncated { have: header.len(), need: HEADER_LEN });
    }
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(CodecError::BadVersion(header[4]));
    }
    if header[5] > KIND_STOP {
        return Err(CodecError::BadKind(header[5]));
    }
    let len = u32::from_le_bytes(header[22..26].try_into().unwrap()) as usize;
    if len > MAX_FRAME_VALUES {
        return Err(CodecError::Oversized(len));
    }
    Ok(frame_len(len))
}

/// Decodes exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, CodecError> {
    let total = frame_len_from_header(bytes)?;
    if bytes.len() < total {
        return Err(CodecError::Truncated { have: bytes.len(), need: total });
    }
    if bytes.len() > total {
        return Err(CodecError::Trailing(bytes.len() - total));
    }
    let body = &bytes[..total - CHECKSUM_LEN];
    let stored = u32::from_le_bytes(bytes[total - CHECKSUM_LEN..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CodecError::Checksum { stored, computed });
    }

    let sender = u32::from_le_bytes(body[6..10].try_into().unwrap());
    let local_iter = u64::from_le_bytes(body[10..18].try_into().unwrap());
    let start = u32::from_le_bytes(body[18..22].try_into().unwrap()) as usize;
    let len = u32::from_le_bytes(body[22..26].try_into().unwrap()) as usize;

    let control = |kind| {
        if local_iter != 0 || start != 0 || len != 0 {
            Err(CodecError::Malformed)
        } else {
            Ok(Message::Control(ControlMessage { kind, sender }))
        }
    };
    match body[5] {
        KIND_FRAGMENT => {
            let values: Arc<[f64]> =
                body[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(Message::Fragment(Fragment { sender, local_iter, start, values }))
        }
        KIND_CONVERGE => control(ControlKind::Converge),
        KIND_DIVERGE => control(ControlKind::Diverge),
        KIND_STOP => control(ControlKind::Stop),
        other => Err(CodecError::BadKind(other)),
    }
}

/// Incremental decoder for a byte stream of back-to-back frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        if !self.poisoned {
            self.buf.extend_from_slice(bytes);
        }
    }

    /// `true` once a fatal header error has been seen; further input is
    /// discarded.
    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Next complete frame, if one is buffered. Frames failing their
    /// checksum are consumed and returned as errors.
    pub fn next_frame(&mut self) -> Option<Result<Message, CodecError>> {
        if self.poisoned || self.buf.len() < HEADER_LEN {
            return None;
        }
        let total = match frame_len_from_header(&self.buf) {
            Ok(total) => total,
            Err(err) => {
                self.poisoned = true;
                self.buf.clear();
                return Some(Err(err));
            }
        };
        if self.buf.len() < total {
            return None;
        }
        let result = decode_frame(&self.buf[..total]);
        self.buf.drain(..total);
        Some(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fragment() -> Message {
        Message::Fragment(Fragment { sender: 1, local_iter: 7, start: 5, values: vec![0.25, 0.5, 0.125].into() })
    }

    #[test]
    fn stop_frame_layout() {
        let stop = Message::Control(ControlMessage { kind: ControlKind::Stop, sender: 255 });
        let bytes = encode_frame(&stop).unwrap();
        assert_eq!(bytes.len(), 30);
        assert_eq!(&bytes[0..4], b"ARNK");
        assert_eq!(bytes[4], VERSION);
        assert_eq!(bytes[5], 3);
        assert_eq!(&bytes[6..10], &255u32.to_le_bytes());
        assert_eq!(&bytes[22..26], &[0, 0, 0, 0]);
        assert_eq!(decode_frame(&bytes).unwrap(), stop);
    }

    #[test]
    fn fragment_round_trip() {
        let msg = fragment();
        let bytes = encode_frame(&msg).unwrap();
        assert_eq!(bytes.len(), 26 + 3 * 8 + 4);
        assert_eq!(&bytes[26..34], &0.25f64.to_le_bytes());
        assert_eq!(decode_frame(&bytes).unwrap(), msg);
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode_frame(&fragment()).unwrap();
        bytes[30] ^= 0x10;
        assert!(matches!(decode_frame(&bytes), Err(CodecError::Checksum { .. })));
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_frame(&fragment()).unwrap();
        assert!(matches!(decode_frame(&bytes[..20]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_frame(&bytes[..40]), Err(CodecError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_frame(&long), Err(CodecError::Trailing(1)));
        bytes[0] = b'X';
        assert!(matches!(decode_frame(&bytes), Err(CodecError::BadMagic(_))));
    }

    #[test]
    fn control_with_payload_is_malformed() {
        let mut bytes =
            encode_frame(&Message::Control(ControlMessage { kind: ControlKind::Converge, sender: 2 })).unwrap();
        bytes[10] = 1;
        let crc = crc32fast::hash(&bytes[..26]);
        bytes[26..30].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_frame(&bytes), Err(CodecError::Malformed));
    }

    #[test]
    fn decoder_skips_corrupt_frame_and_keeps_going() {
        let good = encode_frame(&fragment()).unwrap();
        let mut bad = good.clone();
        bad[40] ^= 0xff;
        let mut dec = FrameDecoder::new();
        let mut stream = bad;
        stream.extend_from_slice(&good);
        // Feed in small pieces to exercise partial buffering.
        for chunk in stream.chunks(7) {
            dec.extend(chunk);
        }
        assert!(matches!(dec.next_frame(), Some(Err(CodecError::Checksum { .. }))));
        assert_eq!(dec.next_frame(), Some(Ok(fragment())));
        assert_eq!(dec.next_frame(), None);
    }

    #[test]
    fn decoder_poisons_on_bad_magic() {
        let mut dec = FrameDecoder::new();
        dec.extend(&[0u8; 40]);
        assert!(matches!(dec.next_frame(), Some(Err(e)) if e.is_fatal()));
        assert!(dec.is_poisoned());
        dec.extend(&encode_frame(&fragment()).unwrap());
        assert_eq!(dec.next_frame(), None);
    }
}
