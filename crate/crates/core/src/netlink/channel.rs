use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::frame::{Frame, MsgType};
use super::messages::{control, Message};
use super::transport::Transport;
use crate::{Error, Result};

/// Produces a fresh transport after a disconnect.
pub type Connector = Box<dyn FnMut() -> Result<Box<dyn Transport>> + Send>;

/// Acknowledges that a frame was handed to the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub sequence: u64,
    pub bytes: usize,
}

/// Per-channel counters. Byte counts include retransmissions and resume
/// handshakes; message and parity counts include first deliveries only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Indexed by type code; slot 0 is unused.
    pub sent_by_type: [u64; 11],
    pub received_by_type: [u64; 11],
    /// Parity bits carried by `PARITY_RESP` frames in either direction.
    pub parity_bits: u64,
    pub retransmitted: u64,
    pub resumes: u64,
}

impl ChannelStats {
    pub fn sent(&self, t: MsgType) -> u64 {
        self.sent_by_type[t.code() as usize]
    }

    pub fn received(&self, t: MsgType) -> u64 {
        self.received_by_type[t.code() as usize]
    }
}

struct Outgoing {
    next_seq: u64,
    buffer: VecDeque<Frame>,
}

/// Recorded traffic, in the order this end saw it.
#[derive(Debug, Clone, PartialEq)]
pub enum Recorded {
    Sent(Frame),
    Received(Frame),
}

/// Reliable, ordered session over a replaceable transport.
///
/// Every data frame stays in a retransmit buffer; after a disconnect both ends
/// exchange the last sequence number they received and replay the rest.
pub struct Channel {
    session: u64,
    transport: RwLock<(u64, Arc<dyn Transport>)>,
    connector: Mutex<Option<Connector>>,
    resume_lock: Mutex<()>,
    out: Mutex<Outgoing>,
    last_in: AtomicU64,
    stats: Mutex<ChannelStats>,
    retired_up: AtomicU64,
    retired_down: AtomicU64,
    recording: Mutex<Option<Vec<Recorded>>>,
    /// Frames kept for replay.
    pub retransmit_capacity: usize,
    pub resume_attempts: u32,
    pub resume_timeout: Duration,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Channel {
    pub fn new(session: u64, transport: Box<dyn Transport>) -> Self {
        Self {
            session,
            transport: RwLock::new((0, Arc::from(transport))),
            connector: Mutex::new(None),
            resume_lock: Mutex::new(()),
            out: Mutex::new(Outgoing { next_seq: 1, buffer: VecDeque::new() }),
            last_in: AtomicU64::new(0),
            stats: Mutex::new(ChannelStats::default()),
            retired_up: AtomicU64::new(0),
            retired_down: AtomicU64::new(0),
            recording: Mutex::new(None),
            retransmit_capacity: 1 << 16,
            resume_attempts: 5,
            resume_timeout: Duration::from_secs(5),
        }
    }

    pub fn with_connector(self, connector: Connector) -> Self {
        *lock(&self.connector) = Some(connector);
        self
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    pub fn stats(&self) -> ChannelStats {
        lock(&self.stats).clone()
    }

    /// Bytes moved by every transport this channel has used, `(sent, received)`.
    pub fn transport_bytes(&self) -> (u64, u64) {
        let t = self.current().1;
        (
            self.retired_up.load(Ordering::SeqCst) + t.bytes_sent(),
            self.retired_down.load(Ordering::SeqCst) + t.bytes_received(),
        )
    }

    pub fn start_recording(&self) {
        *lock(&self.recording) = Some(Vec::new());
    }

    pub fn take_recording(&self) -> Vec<Recorded> {
        lock(&self.recording).take().unwrap_or_default()
    }

    fn current(&self) -> (u64, Arc<dyn Transport>) {
        let g = self.transport.read().unwrap_or_else(|p| p.into_inner());
        (g.0, g.1.clone())
    }

    fn count_parity(frame: &Frame) -> u64 {
        if frame.msg_type != MsgType::ParityResp {
            return 0;
        }
        Message::decode(frame.msg_type, &frame.payload).map(|m| m.parity_bits()).unwrap_or(0)
    }

    /// Sends a raw payload of type `t`.
    pub fn send(&self, t: MsgType, payload: Vec<u8>) -> Result<Receipt> {
        let (gen, transport) = self.current();
        let mut out = lock(&self.out);
        let frame = Frame { msg_type: t, session: self.session, sequence: out.next_seq, payload };
        out.next_seq += 1;
        let bytes = frame.encode();
        {
            let mut s = lock(&self.stats);
            s.sent_by_type[t.code() as usize] += 1;
            s.parity_bits += Self::count_parity(&frame);
        }
        if let Some(r) = lock(&self.recording).as_mut() {
            r.push(Recorded::Sent(frame.clone()));
        }
        let receipt = Receipt { sequence: frame.sequence, bytes: bytes.len() };
        out.buffer.push_back(frame);
        if out.buffer.len() > self.retransmit_capacity {
            out.buffer.pop_front();
        }
        let sent = transport.send(&bytes);
        if sent.is_ok() {
            lock(&self.stats).bytes_up += bytes.len() as u64;
        }
        drop(out);
        match sent {
            Ok(()) => Ok(receipt),
            Err(Error::Transport(msg)) => {
                log::warn!("session {}: send failed ({msg}); resuming", self.session);
                // A successful resume replays the frame from the buffer.
                self.resume(gen)?;
                Ok(receipt)
            }
            Err(e) => Err(e),
        }
    }

    pub fn send_message(&self, m: &Message) -> Result<Receipt> {
        self.send(m.msg_type(), m.encode())
    }

    /// Next in-order data frame, or [`Error::Timeout`].
    pub fn recv(&self, timeout: Duration) -> Result<Frame> {
        let deadline = Instant::now() + timeout;
        loop {
            let (gen, transport) = self.current();
            let left = deadline.saturating_duration_since(Instant::now());
            match transport.recv(left) {
                Ok(bytes) => {
                    let (frame, _) = Frame::decode(&bytes)?;
                    lock(&self.stats).bytes_down += bytes.len() as u64;
                    if frame.session != self.session {
                        return Err(Error::Protocol(format!(
                            "frame for session {} on session {}",
                            frame.session, self.session
                        )));
                    }
                    let last = self.last_in.load(Ordering::SeqCst);
                    if frame.sequence <= last {
                        continue;
                    }
                    if frame.sequence != last + 1 {
                        return Err(Error::Protocol(format!(
                            "sequence gap: expected {}, got {}",
                            last + 1,
                            frame.sequence
                        )));
                    }
                    self.last_in.store(frame.sequence, Ordering::SeqCst);
                    {
                        let mut s = lock(&self.stats);
                        s.received_by_type[frame.msg_type.code() as usize] += 1;
                        s.parity_bits += Self::count_parity(&frame);
                    }
                    if let Some(r) = lock(&self.recording).as_mut() {
                        r.push(Recorded::Received(frame.clone()));
                    }
                    return Ok(frame);
                }
                Err(Error::Transport(msg)) => {
                    log::warn!("session {}: receive failed ({msg}); resuming", self.session);
                    self.resume(gen)?;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn recv_message(&self, timeout: Duration) -> Result<Message> {
        let f = self.recv(timeout)?;
        Message::decode(f.msg_type, &f.payload)
    }

    fn resume(&self, failed_gen: u64) -> Result<()> {
        let _guard = lock(&self.resume_lock);
        if self.current().0 != failed_gen {
            return Ok(());
        }
        let mut last_err = Error::Transport("no connector configured".into());
        for attempt in 0..self.resume_attempts {
            let fresh = {
                let mut c = lock(&self.connector);
                match c.as_mut() {
                    Some(connect) => connect(),
                    None => return Err(last_err),
                }
            };
            match fresh.and_then(|t| self.handshake(t)) {
                Ok(()) => {
                    lock(&self.stats).resumes += 1;
                    return Ok(());
                }
                Err(e) => {
                    log::warn!("session {}: resume attempt {} failed: {e}", self.session, attempt + 1);
                    last_err = e;
                }
            }
        }
        Err(Error::Transport(format!("resume failed: {last_err}")))
    }

    fn handshake(&self, t: Box<dyn Transport>) -> Result<()> {
        let hello = |last: u64| {
            Frame {
                msg_type: MsgType::Control,
                session: self.session,
                sequence: 0,
                payload: Message::Control { kind: control::RESUME, value: last }.encode(),
            }
            .encode()
        };
        let mine = hello(self.last_in.load(Ordering::SeqCst));
        t.send(&mine)?;
        let reply = t.recv(self.resume_timeout)?;
        let (frame, _) = Frame::decode(&reply)?;
        let peer_last = match Message::decode(frame.msg_type, &frame.payload)? {
            Message::Control { kind: control::RESUME, value } if frame.sequence == 0 => value,
            other => return Err(Error::Protocol(format!("expected resume, got {other:?}"))),
        };
        let mut out = lock(&self.out);
        while out.buffer.front().is_some_and(|f| f.sequence <= peer_last) {
            out.buffer.pop_front();
        }
        let first_missing = out.buffer.front().map_or(out.next_seq, |f| f.sequence);
        if first_missing != peer_last + 1 {
            return Err(Error::Protocol(format!(
                "peer needs sequence {} but replay starts at {first_missing}",
                peer_last + 1
            )));
        }
        let mut up = (mine.len() + reply.len()) as u64;
        let mut replayed = 0;
        for f in &out.buffer {
            let b = f.encode();
            t.send(&b)?;
            up += b.len() as u64;
            replayed += 1;
        }
        {
            let mut s = lock(&self.stats);
            s.bytes_up += up - reply.len() as u64;
            s.bytes_down += reply.len() as u64;
            s.retransmitted += replayed;
        }
        let mut slot = self.transport.write().unwrap_or_else(|p| p.into_inner());
        self.retired_up.fetch_add(slot.1.bytes_sent(), Ordering::SeqCst);
        self.retired_down.fetch_add(slot.1.bytes_received(), Ordering::SeqCst);
        *slot = (slot.0 + 1, Arc::from(t));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlink::{loopback_pair, FaultyTransport, LoopbackHub};

    #[test]
    fn in_order_delivery_and_byte_accounting() {
        let (a, b) = loopback_pair();
        let (a, b) = (Channel::new(3, Box::new(a)), Channel::new(3, Box::new(b)));
        for i in 0..10u64 {
            a.send_message(&Message::Control { kind: 9, value: i }).unwrap();
        }
        for i in 0..10u64 {
            assert_eq!(b.recv_message(Duration::from_secs(1)).unwrap(), Message::Control { kind: 9, value: i });
        }
        let (sa, sb) = (a.stats(), b.stats());
        assert_eq!(sa.bytes_up, a.transport_bytes().0);
        assert_eq!(sb.bytes_down, b.transport_bytes().1);
        assert_eq!(sa.bytes_up, sb.bytes_down);
        assert_eq!(sa.sent(MsgType::Control), 10);
        assert!(matches!(b.recv(Duration::from_millis(10)), Err(Error::Timeout(_))));
    }

    #[test]
    fn resumes_after_injected_disconnect_without_loss_or_duplication() {
        let hub = LoopbackHub::new();
        let a0 = FaultyTransport::new(hub.connect(0), 4);
        let b0 = hub.connect(1);
        let ha = hub.clone();
        let hb = hub.clone();
        let a = Channel::new(1, Box::new(a0)).with_connector(Box::new(move || Ok(Box::new(ha.connect(0)))));
        let b = Channel::new(1, Box::new(b0)).with_connector(Box::new(move || Ok(Box::new(hb.connect(1)))));
        std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..20u64 {
                    a.send_message(&Message::Control { kind: 9, value: i }).unwrap();
                }
                let m = a.recv_message(Duration::from_secs(5)).unwrap();
                assert_eq!(m, Message::Control { kind: 8, value: 20 });
            });
            for i in 0..20u64 {
                assert_eq!(b.recv_message(Duration::from_secs(5)).unwrap(), Message::Control { kind: 9, value: i });
            }
            b.send_message(&Message::Control { kind: 8, value: 20 }).unwrap();
        });
        assert_eq!(a.stats().resumes, 1);
        assert_eq!(b.stats().resumes, 1);
        assert_eq!(a.stats().bytes_up, a.transport_bytes().0);
    }

    #[test]
    fn resume_without_connector_is_an_error() {
        let (a, b) = loopback_pair();
        let a = Channel::new(1, Box::new(FaultyTransport::new(a, 0)));
        let _b = Channel::new(1, Box::new(b));
        assert!(matches!(a.send(MsgType::Control, vec![]), Err(Error::Transport(_))));
    }
}
