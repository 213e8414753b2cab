//! Chunk frame codec.
//!
//! ```text
//!  0      2      3      4            8                   16       18
//!  +------+------+------+------------+-------------------+--------+---------
//!  | DBA5 | ver  | type | conn_id BE | chunk_id BE       | len BE | payload
//!  +------+------+------+------------+-------------------+--------+---------
//! ```
//!
//! ACK frames carry no payload; the acknowledged chunk id rides in the
//! `chunk_id` field.

use thiserror::Error;

use crate::types::ConnId;

pub const MAGIC: [u8; 2] = [0xDB, 0xA5];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Data = 0,
    Ack = 1,
    /// Reserved for peer-assisted interface estimation.
    Probe = 2,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FrameType::Data),
            1 => Some(FrameType::Ack),
            2 => Some(FrameType::Probe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkFrame {
    pub frame_type: FrameType,
    pub conn_id: ConnId,
    pub chunk_id: u64,
    pub payload: Vec<u8>,
}

impl ChunkFrame {
    pub fn data(conn_id: ConnId, chunk_id: u64, payload: impl Into<Vec<u8>>) -> Self {
        ChunkFrame { frame_type: FrameType::Data, conn_id, chunk_id, payload: payload.into() }
    }

    pub fn ack(conn_id: ConnId, chunk_id: u64) -> Self {
        ChunkFrame { frame_type: FrameType::Ack, conn_id, chunk_id, payload: Vec::new() }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("ack frame with {0} payload bytes")]
    AckWithPayload(usize),
    #[error("payload of {len} bytes exceeds the limit of {limit}")]
    Oversize { len: usize, limit: usize },
}

/// Encodes a frame. `mtu`, when given, bounds DATA frames to fit in one
/// packet.
pub fn encode_frame(frame: &ChunkFrame, mtu: Option<u32>) -> Result<Vec<u8>, FrameError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_into(frame, mtu, &mut out)?;
    Ok(out)
}

pub fn encode_into(frame: &ChunkFrame, mtu: Option<u32>, out: &mut Vec<u8>) -> Result<(), FrameError> {
    let len = frame.payload.len();
    if len > u16::MAX as usize {
        return Err(FrameError::Oversize { len, limit: u16::MAX as usize });
    }
    if frame.frame_type == FrameType::Ack && len != 0 {
        return Err(FrameError::AckWithPayload(len));
    }
    if let (FrameType::Data, Some(mtu)) = (frame.frame_type, mtu) {
        let limit = (mtu as usize).saturating_sub(HEADER_LEN);
        if len > limit {
            return Err(FrameError::Oversize { len, limit });
        }
    }
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.frame_type as u8);
    out.extend_from_slice(&frame.conn_id.0.to_be_bytes());
    out.extend_from_slice(&frame.chunk_id.to_be_bytes());
    out.extend_from_slice(&(len as u16).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(())
}

/// Decodes one frame from the front of `buf`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(ChunkFrame, usize), FrameError> {
    if buf.len() < HEADER_LEN {
        return Err(FrameError::Truncated { needed: HEADER_LEN, have: buf.len() });
    }
    let magic = [buf[0], buf[1]];
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if buf[2] != VERSION {
        return Err(FrameError::BadVersion(buf[2]));
    }
    let frame_type = FrameType::from_byte(buf[3]).ok_or(FrameError::UnknownType(buf[3]))?;
    let conn_id = u32::from_be_bytes(buf[4..8].try_into().unwrap());
    let chunk_id = u64::from_be_bytes(buf[8..16].try_into().unwrap());
    let len = u16::from_be_bytes([buf[16], buf[17]]) as usize;
    if frame_type == FrameType::Ack && len != 0 {
        return Err(FrameError::AckWithPayload(len));
    }
    let end = HEADER_LEN + len;
    if buf.len() < end {
        return Err(FrameError::Truncated { needed: end, have: buf.len() });
    }
    let frame = ChunkFrame { frame_type, conn_id: ConnId(conn_id), chunk_id, payload: buf[HEADER_LEN..end].to_vec() };
    Ok((frame, end))
}
