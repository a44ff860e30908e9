//! Binary framing for everything that crosses the link.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! magic "SCWP" (4) | version (1) | msg_type (1) | ndim (1)
//! dims: ndim x u32 | scale: f32 (4) | zero_point: i32 (4)
//! payload_len: u64 (8) | payload
//! ```
//!
//! The fixed part is 23 bytes, so a frame carrying an 8-D tensor still has a
//! header under 64 bytes.

use std::io::{self, Read, Write};

use crate::codec::{QuantizedTensor, Width};
use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const MAGIC: [u8; 4] = *b"SCWP";
pub const VERSION: u8 = 1;
pub const MAX_NDIM: usize = 8;
pub const FIXED_HEADER_LEN: usize = 23;

/// Default cap on a payload read from a stream (256 MiB).
pub const DEFAULT_MAX_PAYLOAD: u64 = 256 << 20;

/// Header size for a frame with `ndim` dimensions.
pub const fn header_len(ndim: usize) -> usize {
    FIXED_HEADER_LEN + 4 * ndim
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    JpegImage = 0,
    QTensor8 = 1,
    QTensor16 = 2,
    FTensor32 = 3,
    DetectionResult = 4,
    EmptyResult = 5,
}

impl MessageType {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => MessageType::JpegImage,
            1 => MessageType::QTensor8,
            2 => MessageType::QTensor16,
            3 => MessageType::FTensor32,
            4 => MessageType::DetectionResult,
            5 => MessageType::EmptyResult,
            _ => return None,
        })
    }

    /// Bytes per element for the tensor-carrying types.
    pub fn element_bytes(self) -> Option<usize> {
        match self {
            MessageType::QTensor8 => Some(1),
            MessageType::QTensor16 => Some(2),
            MessageType::FTensor32 => Some(4),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WireMessage {
    pub msg_type: MessageType,
    pub dims: Vec<u32>,
    pub scale: f32,
    pub zero_point: i32,
    pub payload: Vec<u8>,
}

// Bitwise on `scale` so NaN payloads compare equal after a round trip.
impl PartialEq for WireMessage {
    fn eq(&self, other: &Self) -> bool {
        self.msg_type == other.msg_type
            && self.dims == other.dims
            && self.scale.to_bits() == other.scale.to_bits()
            && self.zero_point == other.zero_point
            && self.payload == other.payload
    }
}

impl Eq for WireMessage {}

impl WireMessage {
    /// A dimensionless message of the given type.
    pub fn bare(msg_type: MessageType, payload: Vec<u8>) -> Self {
        WireMessage {
            msg_type,
            dims: Vec::new(),
            scale: 0.0,
            zero_point: 0,
            payload,
        }
    }

    pub fn empty_result() -> Self {
        WireMessage::bare(MessageType::EmptyResult, Vec::new())
    }

    pub fn detection_result(checksum: [u8; 32]) -> Self {
        WireMessage::bare(MessageType::DetectionResult, checksum.to_vec())
    }

    pub fn from_quantized(q: &QuantizedTensor) -> Result<Self> {
        let msg_type = match q.width {
            Width::W8 => MessageType::QTensor8,
            Width::W16 => MessageType::QTensor16,
            Width::W32 => MessageType::FTensor32,
        };
        let dims = q
            .shape
            .dims()
            .iter()
            .map(|&d| {
                u32::try_from(d)
                    .map_err(|_| Error::Protocol(format!("extent {d} does not fit in u32")))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = WireMessage {
            msg_type,
            dims,
            scale: q.scale,
            zero_point: q.zero_point,
            payload: q.payload.clone(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Rebuilds the quantized tensor a tensor-carrying frame describes.
    pub fn to_quantized(&self) -> Result<QuantizedTensor> {
        let width = match self.msg_type {
            MessageType::QTensor8 => Width::W8,
            MessageType::QTensor16 => Width::W16,
            MessageType::FTensor32 => Width::W32,
            other => {
                return Err(Error::Protocol(format!(
                    "message type {other:?} does not carry a tensor"
                )))
            }
        };
        let shape = Shape::new(self.dims.iter().map(|&d| d as usize).collect::<Vec<_>>())
            .map_err(|e| Error::Protocol(e.to_string()))?;
        let q = QuantizedTensor {
            shape,
            width,
            scale: self.scale,
            zero_point: self.zero_point,
            payload: self.payload.clone(),
            saturated: false,
        };
        q.validate().map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(q)
    }

    pub fn header_len(&self) -> usize {
        header_len(self.dims.len())
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.payload.len()
    }

    fn validate(&self) -> Result<()> {
        validate_frame(self.msg_type, &self.dims, self.payload.len() as u64)
    }
}

fn validate_frame(msg_type: MessageType, dims: &[u32], payload_len: u64) -> Result<()> {
    if dims.len() > MAX_NDIM {
        return Err(Error::Protocol(format!(
            "ndim {} exceeds {MAX_NDIM}",
            dims.len()
        )));
    }
    if let Some(elem) = msg_type.element_bytes() {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Protocol(format!(
                "{msg_type:?} needs nonzero dims, got {dims:?}"
            )));
        }
        let expected = dims
            .iter()
            .try_fold(elem as u64, |acc, &d| acc.checked_mul(u64::from(d)))
            .ok_or_else(|| Error::Protocol(format!("dims {dims:?} overflow")))?;
        if expected != payload_len {
            return Err(Error::Protocol(format!(
                "{msg_type:?} with dims {dims:?} needs {expected} payload bytes, header says {payload_len}"
            )));
        }
    }
    Ok(())
}

pub fn encode_message(m: &WireMessage) -> Result<Vec<u8>> {
    m.validate()?;
    let mut out = Vec::with_capacity(m.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(m.msg_type as u8);
    out.push(m.dims.len() as u8);
    for d in &m.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&m.scale.to_be_bytes());
    out.extend_from_slice(&m.zero_point.to_be_bytes());
    out.extend_from_slice(&(m.payload.len() as u64).to_be_bytes());
    out.extend_from_slice(&m.payload);
    Ok(out)
}

struct Header {
    msg_type: MessageType,
    dims: Vec<u32>,
    scale: f32,
    zero_point: i32,
    payload_len: u64,
}

fn parse_prefix(b: &[u8; 7]) -> Result<(MessageType, usize)> {
    if b[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:02x?}", &b[..4])));
    }
    if b[4] != VERSION {
        return Err(Error::Protocol(format!("unsupported version {}", b[4])));
    }
    let msg_type = MessageType::from_u8(b[5])
        .ok_or_else(|| Error::Protocol(format!("unknown message type {}", b[5])))?;
    let ndim = b[6] as usize;
    if ndim > MAX_NDIM {
        return Err(Error::Protocol(format!("ndim {ndim} exceeds {MAX_NDIM}")));
    }
    Ok((msg_type, ndim))
}

fn parse_rest(msg_type: MessageType, dims_and_tail: &[u8]) -> Header {
    let ndim = (dims_and_tail.len() - 16) / 4;
    let dims = dims_and_tail[..4 * ndim]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
        .collect();
    let tail = &dims_and_tail[4 * ndim..];
    Header {
        msg_type,
        dims,
        scale: f32::from_be_bytes(tail[0..4].try_into().unwrap()),
        zero_point: i32::from_be_bytes(tail[4..8].try_into().unwrap()),
        payload_len: u64::from_be_bytes(tail[8..16].try_into().unwrap()),
    }
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<WireMessage> {
    let truncated = || Error::Protocol(format!("truncated frame ({} bytes)", bytes.len()));
    let prefix: &[u8; 7] = bytes.get(..7).ok_or_else(truncated)?.try_into().unwrap();
    let (msg_type, ndim) = parse_prefix(prefix)?;
    let hlen = header_len(ndim);
    let rest = bytes.get(7..hlen).ok_or_else(truncated)?;
    let h = parse_rest(msg_type, rest);
    let available = (bytes.len() - hlen) as u64;
    if h.payload_len > available {
        return Err(truncated());
    }
    if h.payload_len < available {
        return Err(Error::Protocol(format!(
            "payload_len {} but {available} bytes follow the header",
            h.payload_len
        )));
    }
    validate_frame(h.msg_type, &h.dims, h.payload_len)?;
    Ok(WireMessage {
        msg_type: h.msg_type,
        dims: h.dims,
        scale: h.scale,
        zero_point: h.zero_point,
        payload: bytes[hlen..].to_vec(),
    })
}

/// Reads one frame from a stream. `Ok(None)` means the peer closed the
/// stream cleanly before the first byte of a frame.
pub fn read_message<R: Read>(r: &mut R, max_payload: u64) -> Result<Option<WireMessage>> {
    let mut prefix = [0u8; 7];
    let mut got = 0;
    while got < prefix.len() {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (msg_type, ndim) = parse_prefix(&prefix)?;
    let mut rest = vec![0u8; header_len(ndim) - 7];
    read_full(r, &mut rest)?;
    let h = parse_rest(msg_type, &rest);
    if h.payload_len > max_payload {
        return Err(Error::Protocol(format!(
            "payload_len {} exceeds limit {max_payload}",
            h.payload_len
        )));
    }
    validate_frame(h.msg_type, &h.dims, h.payload_len)?;
    let mut payload = vec![0u8; h.payload_len as usize];
    read_full(r, &mut payload)?;
    Ok(Some(WireMessage {
        msg_type: h.msg_type,
        dims: h.dims,
        scale: h.scale,
        zero_point: h.zero_point,
        payload,
    }))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Protocol("stream ended inside a frame".into()),
        _ => e.into(),
    })
}

pub fn write_message<W: Write>(w: &mut W, m: &WireMessage) -> Result<usize> {
    let bytes = encode_message(m)?;
    w.write_all(&bytes)?;
    Ok(bytes.len())
}
