use std::io::Read;

use crate::{Error, Result};

pub const MAGIC: u32 = 0x514B_4431;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 28;
/// Constant placeholder for a message authentication tag.
pub const AUTH_STUB: u16 = 0;
const MAX_PAYLOAD: u32 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    BasisAnnounce = 1,
    SampleDisclose = 2,
    ShuffleSeed = 3,
    ParityReq = 4,
    ParityResp = 5,
    Verify = 6,
    PaSeed = 7,
    PaAck = 8,
    Telemetry = 9,
    Control = 10,
}

impl MsgType {
    pub const ALL: [MsgType; 10] = [
        MsgType::BasisAnnounce,
        MsgType::SampleDisclose,
        MsgType::ShuffleSeed,
        MsgType::ParityReq,
        MsgType::ParityResp,
        MsgType::Verify,
        MsgType::PaSeed,
        MsgType::PaAck,
        MsgType::Telemetry,
        MsgType::Control,
    ];

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get((code as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Protocol(format!("unknown message type {code}")))
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session: u64,
    pub sequence: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(VERSION);
        out.push(self.msg_type.code());
        out.extend_from_slice(&AUTH_STUB.to_le_bytes());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a header, returning `(type, session, sequence, payload_len)`.
    fn parse_header(h: &[u8]) -> Result<(MsgType, u64, u64, u32)> {
        let magic = u32::from_le_bytes(h[0..4].try_into().expect("4 bytes"));
        if magic != MAGIC {
            return Err(Error::Protocol(format!("bad magic {magic:#x}")));
        }
        if h[4] != VERSION {
            return Err(Error::Protocol(format!("unsupported version {}", h[4])));
        }
        let t = MsgType::from_code(h[5])?;
        let session = u64::from_le_bytes(h[8..16].try_into().expect("8 bytes"));
        let sequence = u64::from_le_bytes(h[16..24].try_into().expect("8 bytes"));
        let len = u32::from_le_bytes(h[24..28].try_into().expect("4 bytes"));
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("payload length {len} too large")));
        }
        Ok((t, session, sequence, len))
    }

    /// Decodes one frame from the front of `buf`, returning it and its length.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize)> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Protocol("short frame header".into()));
        }
        let (msg_type, session, sequence, len) = Self::parse_header(&buf[..HEADER_LEN])?;
        let end = HEADER_LEN + len as usize;
        if buf.len() < end {
            return Err(Error::Protocol("truncated frame payload".into()));
        }
        Ok((
            Frame {
                msg_type,
                session,
                sequence,
                payload: buf[HEADER_LEN..end].to_vec(),
            },
            end,
        ))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame> {
        let mut h = [0u8; HEADER_LEN];
        r.read_exact(&mut h)?;
        let (msg_type, session, sequence, len) = Self::parse_header(&h)?;
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(Frame {
            msg_type,
            session,
            sequence,
            payload,
        })
    }
}
