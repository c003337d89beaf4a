//! Binary frame format shared by every transport.
//!
//! ```text
//! offset size field
//!      0    4 magic "DTMB"
//!      4    1 version (1)
//!      5    1 frame type
//!      6    1 payload kind (boundary frames) or 0
//!      7    1 reserved, 0
//!      8    8 iteration          u64 LE
//!     16    4 slice_from         u32 LE
//!     20    4 dim0 (K)           u32 LE
//!     24    4 dim1 (V, 0 for α)  u32 LE
//!     28    4 payload length n   u32 LE
//!     32    n payload
//!   32+n    4 CRC-32 of payload  u32 LE
//! ```
//!
//! Boundary payloads are row-major f64 little-endian. Socket transports put
//! a u32 LE frame length in front of each frame.

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"DTMB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("frame truncated: {got} bytes, need {need}")]
    Truncated { got: usize, need: usize },
    #[error("payload checksum mismatch (header says {expected:#010x}, payload hashes to {actual:#010x})")]
    Checksum { expected: u32, actual: u32 },
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("unknown payload kind {0}")]
    UnknownKind(u8),
    #[error("payload of {bytes} bytes does not match dims {dim0}x{dim1}")]
    Dims { bytes: usize, dim0: u32, dim1: u32 },
    #[error("expected a {expected:?} frame, got {got:?}")]
    UnexpectedType { expected: FrameType, got: FrameType },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Boundary = 1,
    Ack = 2,
    Nack = 3,
    /// Worker id in `slice_from`, topology checksum in `iteration`.
    Hello = 4,
    /// One metrics CSV row as UTF-8.
    Metrics = 5,
    /// An encoded slice checkpoint.
    Checkpoint = 6,
    Done = 7,
}

impl FrameType {
    fn from_u8(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => Self::Boundary,
            2 => Self::Ack,
            3 => Self::Nack,
            4 => Self::Hello,
            5 => Self::Metrics,
            6 => Self::Checkpoint,
            7 => Self::Done,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PayloadKind {
    None = 0,
    Alpha = 1,
    Phi = 2,
}

impl PayloadKind {
    fn from_u8(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            0 => Self::None,
            1 => Self::Alpha,
            2 => Self::Phi,
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub kind: PayloadKind,
    pub iteration: u64,
    pub slice_from: u32,
    pub dim0: u32,
    pub dim1: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn control(frame_type: FrameType, kind: PayloadKind, iteration: u64, slice_from: u32) -> Self {
        Self {
            frame_type,
            kind,
            iteration,
            slice_from,
            dim0: 0,
            dim1: 0,
            payload: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[VERSION, self.frame_type as u8, self.kind as u8, 0]);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.slice_from.to_le_bytes());
        out.extend_from_slice(&self.dim0.to_le_bytes());
        out.extend_from_slice(&self.dim1.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&crc32fast::hash(&self.payload).to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::Truncated {
                got: bytes.len(),
                need: HEADER_LEN,
            });
        }
        if &bytes[0..4] != MAGIC {
            return Err(WireError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(WireError::Version(bytes[4]));
        }
        let frame_type = FrameType::from_u8(bytes[5])?;
        let kind = PayloadKind::from_u8(bytes[6])?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let iteration = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let n = u32_at(28) as usize;
        let need = HEADER_LEN + n + 4;
        if bytes.len() < need {
            return Err(WireError::Truncated { got: bytes.len(), need });
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + n];
        let expected = u32_at(HEADER_LEN + n);
        let actual = crc32fast::hash(payload);
        if expected != actual {
            return Err(WireError::Checksum { expected, actual });
        }
        Ok(Self {
            frame_type,
            kind,
            iteration,
            slice_from: u32_at(16),
            dim0: u32_at(20),
            dim1: u32_at(24),
            payload: payload.to_vec(),
        })
    }

    pub fn expect(self, expected: FrameType) -> Result<Self, WireError> {
        if self.frame_type == expected {
            Ok(self)
        } else {
            Err(WireError::UnexpectedType {
                expected,
                got: self.frame_type,
            })
        }
    }
}

/// α_t or Φ_t as sent to an adjacent worker.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMessage {
    pub iteration: u64,
    pub slice_from: usize,
    pub kind: PayloadKind,
    /// `(K, 0)` for α, `(K, V)` for Φ.
    pub dims: (usize, usize),
    pub values: Vec<f64>,
}

impl BoundaryMessage {
    pub fn alpha(iteration: u64, slice_from: usize, alpha: &[f64]) -> Self {
        Self {
            iteration,
            slice_from,
            kind: PayloadKind::Alpha,
            dims: (alpha.len(), 0),
            values: alpha.to_vec(),
        }
    }

    pub fn phi(iteration: u64, slice_from: usize, k: usize, v: usize, phi: &[f64]) -> Self {
        Self {
            iteration,
            slice_from,
            kind: PayloadKind::Phi,
            dims: (k, v),
            values: phi.to_vec(),
        }
    }

    pub fn to_frame(&self) -> Frame {
        let mut payload = Vec::with_capacity(self.values.len() * 8);
        for x in &self.values {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        Frame {
            frame_type: FrameType::Boundary,
            kind: self.kind,
            iteration: self.iteration,
            slice_from: self.slice_from as u32,
            dim0: self.dims.0 as u32,
            dim1: self.dims.1 as u32,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_frame().encode()
    }

    pub fn from_frame(frame: Frame) -> Result<Self, WireError> {
        let frame = frame.expect(FrameType::Boundary)?;
        let count = frame.dim0 as usize * (frame.dim1 as usize).max(1);
        let dims_ok = match frame.kind {
            PayloadKind::Alpha => frame.dim1 == 0,
            PayloadKind::Phi => frame.dim1 > 0,
            PayloadKind::None => false,
        };
        if !dims_ok || frame.payload.len() != count * 8 {
            return Err(WireError::Dims {
                bytes: frame.payload.len(),
                dim0: frame.dim0,
                dim1: frame.dim1,
            });
        }
        Ok(Self {
            iteration: frame.iteration,
            slice_from: frame.slice_from as usize,
            kind: frame.kind,
            dims: (frame.dim0 as usize, frame.dim1 as usize),
            values: frame
                .payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        Self::from_frame(Frame::decode(bytes)?)
    }
}
