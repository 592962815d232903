//! Framed classical channel between the two station engines.
//!
//! Frames are little-endian: `u32 magic, u8 version, u8 type, u16 auth stub,
//! u64 session, u64 sequence, u32 payload_len, payload`. Data frames carry
//! sequence numbers from 1, strictly increasing per direction; sequence 0 is
//! reserved for the resume handshake. Authentication is a constant stub tag.

mod channel;
mod frame;
mod messages;
mod transport;

pub use channel::{Channel, ChannelStats, Connector, Receipt, Recorded};
pub use frame::{Frame, MsgType, HEADER_LEN, MAGIC, VERSION};
pub use messages::{control, Message, ParityQuery};
pub use transport::{
    loopback_pair, FaultyTransport, LatencyTransport, LoopbackHub, LoopbackTransport, TcpTransport, Transport, VirtualClock,
};
