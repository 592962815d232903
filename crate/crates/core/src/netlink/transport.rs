use std::collections::VecDeque;
use std::io::{ErrorKind, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::frame::{Frame, HEADER_LEN};
use crate::{Error, Result};

/// A duplex pipe of encoded frames. Implementations are internally
/// synchronized so that send and recv can run on different threads.
pub trait Transport: Send + Sync {
    /// Sends one encoded frame.
    fn send(&self, frame: &[u8]) -> Result<()>;
    /// Receives one encoded frame, or [`Error::Timeout`].
    fn recv(&self, timeout: Duration) -> Result<Vec<u8>>;
    /// Tears the link down; both ends observe a transport error afterwards.
    fn close(&self);
    fn bytes_sent(&self) -> u64;
    fn bytes_received(&self) -> u64;
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// In-process transport backed by channels.
pub struct LoopbackTransport {
    tx: Mutex<Option<Sender<Vec<u8>>>>,
    rx: Mutex<Receiver<Vec<u8>>>,
    closed: Arc<AtomicBool>,
    sent: AtomicU64,
    received: AtomicU64,
}

/// Two connected loopback ends.
pub fn loopback_pair() -> (LoopbackTransport, LoopbackTransport) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    let closed = Arc::new(AtomicBool::new(false));
    let end = |tx, rx, closed| LoopbackTransport {
        tx: Mutex::new(Some(tx)),
        rx: Mutex::new(rx),
        closed,
        sent: AtomicU64::new(0),
        received: AtomicU64::new(0),
    };
    (end(tx_ab, rx_ba, closed.clone()), end(tx_ba, rx_ab, closed))
}

impl Transport for LoopbackTransport {
    fn send(&self, frame: &[u8]) -> Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::Transport("loopback closed".into()));
        }
        let tx = lock(&self.tx);
        let tx = tx.as_ref().ok_or_else(|| Error::Transport("loopback closed".into()))?;
        tx.send(frame.to_vec()).map_err(|_| Error::Transport("peer disconnected".into()))?;
        self.sent.fetch_add(frame.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> Result<Vec<u8>> {
        let rx = lock(&self.rx);
        // Queued frames drain first; a close is noticed within one poll slice.
        let slice = Duration::from_millis(20);
        let mut left = timeout;
        loop {
            let wait = left.min(slice);
            match rx.recv_timeout(wait) {
                Ok(f) => {
                    self.received.fetch_add(f.len() as u64, Ordering::Relaxed);
                    return Ok(f);
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Transport("peer disconnected".into())),
                Err(RecvTimeoutError::Timeout) => {
                    if self.closed.load(Ordering::SeqCst) {
                        return Err(Error::Transport("loopback closed".into()));
                    }
                    left = left.saturating_sub(wait);
                    if left.is_zero() {
                        return Err(Error::Timeout(timeout));
                    }
                }
            }
        }
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        lock(&self.tx).take();
    }

    fn bytes_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    fn bytes_received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
}

/// Rendezvous point that hands out fresh loopback pairs on reconnect.
///
/// Whichever side connects first creates the pair and parks the peer's end;
/// the other side picks it up.
#[derive(Clone, Default)]
pub struct LoopbackHub {
    parked: Arc<Mutex<[Option<LoopbackTransport>; 2]>>,
}

impl LoopbackHub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns a fresh end for side `side` (0 or 1).
    pub fn connect(&self, side: usize) -> LoopbackTransport {
        let mut parked = lock(&self.parked);
        if let Some(t) = parked[side].take() {
            return t;
        }
        let (mine, theirs) = loopback_pair();
        parked[1 - side] = Some(theirs);
        mine
    }
}

/// Stream socket transport; frames are self-delimiting via the header length.
pub struct TcpTransport {
    reader: Mutex<TcpStream>,
    writer: Mutex<TcpStream>,
    sent: AtomicU64,
    received: AtomicU64,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Self {
            reader: Mutex::new(reader),
            writer: Mutex::new(stream),
            sent: AtomicU64::new(0),
            received: AtomicU64::new(0),
        })
    }
}

impl Transport for TcpTransport {
    fn send(&self, frame: &[u8]) -> Result<()> {
        let mut w = lock(&self.writer);
        w.write_all(frame).map_err(|e| Error::Transport(e.to_string()))?;
        self.sent.fetch_add(frame.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> Result<Vec<u8>> {
        let mut r = lock(&self.reader);
        r.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        // Peek the header first so a timeout never leaves a partial frame consumed.
        let mut h = [0u8; HEADER_LEN];
        match r.peek(&mut h) {
            Ok(0) => return Err(Error::Transport("socket closed by peer".into())),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Err(Error::Timeout(timeout))
            }
            Err(e) => return Err(Error::Transport(e.to_string())),
        }
        r.set_read_timeout(None)?;
        let frame = Frame::read_from(&mut *r).map_err(|e| match e {
            Error::Io(io) => Error::Transport(io.to_string()),
            other => other,
        })?;
        let bytes = frame.encode();
        self.received.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        Ok(bytes)
    }

    fn close(&self) {
        let _ = lock(&self.writer).shutdown(Shutdown::Both);
    }

    fn bytes_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    fn bytes_received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
}

/// Simulated time shared by the two ends of a latency-injected link.
#[derive(Clone, Default, Debug)]
pub struct VirtualClock {
    ns: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Duration {
        Duration::from_nanos(self.ns.load(Ordering::SeqCst))
    }

    pub fn advance_to(&self, t: Duration) {
        self.ns.fetch_max(t.as_nanos() as u64, Ordering::SeqCst);
    }
}

/// Adds a fixed one-way latency on a virtual clock instead of sleeping.
///
/// Delivery stamps travel beside the frames in a per-direction queue, so the
/// wire bytes are untouched.
pub struct LatencyTransport<T> {
    inner: T,
    latency: Duration,
    clock: VirtualClock,
    outgoing: Arc<Mutex<VecDeque<Duration>>>,
    incoming: Arc<Mutex<VecDeque<Duration>>>,
}

impl<T: Transport> LatencyTransport<T> {
    /// Wraps both ends of one link.
    pub fn pair(a: T, b: T, latency: Duration, clock: VirtualClock) -> (Self, Self) {
        let ab = Arc::new(Mutex::new(VecDeque::new()));
        let ba = Arc::new(Mutex::new(VecDeque::new()));
        (
            Self { inner: a, latency, clock: clock.clone(), outgoing: ab.clone(), incoming: ba.clone() },
            Self { inner: b, latency, clock, outgoing: ba, incoming: ab },
        )
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }
}

impl<T: Transport> Transport for LatencyTransport<T> {
    fn send(&self, frame: &[u8]) -> Result<()> {
        let mut q = lock(&self.outgoing);
        self.inner.send(frame)?;
        q.push_back(self.clock.now() + self.latency);
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> Result<Vec<u8>> {
        let f = self.inner.recv(timeout)?;
        // The sender pushes the stamp while holding the queue lock around its send.
        let stamp = loop {
            if let Some(s) = lock(&self.incoming).pop_front() {
                break s;
            }
            std::thread::yield_now();
        };
        self.clock.advance_to(stamp);
        Ok(f)
    }

    fn close(&self) {
        self.inner.close()
    }

    fn bytes_sent(&self) -> u64 {
        self.inner.bytes_sent()
    }

    fn bytes_received(&self) -> u64 {
        self.inner.bytes_received()
    }
}

/// Drops the link after a fixed number of successful sends. The frame that
/// trips the fault is lost, as are any frames still queued toward this end.
pub struct FaultyTransport<T> {
    inner: T,
    remaining: AtomicU64,
}

impl<T: Transport> FaultyTransport<T> {
    pub fn new(inner: T, fail_after_sends: u64) -> Self {
        Self { inner, remaining: AtomicU64::new(fail_after_sends) }
    }
}

impl<T: Transport> Transport for FaultyTransport<T> {
    fn send(&self, frame: &[u8]) -> Result<()> {
        let ok = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| r.checked_sub(1))
            .is_ok();
        if !ok {
            self.inner.close();
            return Err(Error::Transport("injected disconnect".into()));
        }
        self.inner.send(frame)
    }

    fn recv(&self, timeout: Duration) -> Result<Vec<u8>> {
        self.inner.recv(timeout)
    }

    fn close(&self) {
        self.inner.close()
    }

    fn bytes_sent(&self) -> u64 {
        self.inner.bytes_sent()
    }

    fn bytes_received(&self) -> u64 {
        self.inner.bytes_received()
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, frame: &[u8]) -> Result<()> {
        (**self).send(frame)
    }
    fn recv(&self, timeout: Duration) -> Result<Vec<u8>> {
        (**self).recv(timeout)
    }
    fn close(&self) {
        (**self).close()
    }
    fn bytes_sent(&self) -> u64 {
        (**self).bytes_sent()
    }
    fn bytes_received(&self) -> u64 {
        (**self).bytes_received()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlink::{Frame, MsgType};
    use std::net::TcpListener;

    fn frame(seq: u64) -> Vec<u8> {
        Frame { msg_type: MsgType::Control, session: 1, sequence: seq, payload: vec![seq as u8; 3] }.encode()
    }

    #[test]
    fn loopback_send_then_recv_returns_identical_frame() {
        let (a, b) = loopback_pair();
        a.send(&frame(1)).unwrap();
        assert_eq!(b.recv(Duration::from_millis(100)).unwrap(), frame(1));
        assert!(matches!(b.recv(Duration::from_millis(10)), Err(Error::Timeout(_))));
        assert_eq!(a.bytes_sent(), b.bytes_received());
    }

    #[test]
    fn closing_one_end_is_seen_by_the_other() {
        let (a, b) = loopback_pair();
        a.close();
        assert!(matches!(b.recv(Duration::from_millis(100)), Err(Error::Transport(_))));
        assert!(b.send(&frame(1)).is_err());
    }

    #[test]
    fn tcp_round_trip_and_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let h = std::thread::spawn(move || TcpTransport::new(listener.accept().unwrap().0).unwrap());
        let a = TcpTransport::new(TcpStream::connect(addr).unwrap()).unwrap();
        let b = h.join().unwrap();
        assert!(matches!(b.recv(Duration::from_millis(20)), Err(Error::Timeout(_))));
        a.send(&frame(7)).unwrap();
        assert_eq!(b.recv(Duration::from_secs(1)).unwrap(), frame(7));
        a.close();
        assert!(matches!(b.recv(Duration::from_secs(1)), Err(Error::Transport(_))));
    }

    #[test]
    fn latency_advances_virtual_clock_per_hop() {
        let (a, b) = loopback_pair();
        let clock = VirtualClock::new();
        let (a, b) = LatencyTransport::pair(a, b, Duration::from_millis(50), clock.clone());
        for i in 0..3 {
            a.send(&frame(i)).unwrap();
            b.recv(Duration::from_secs(1)).unwrap();
            b.send(&frame(i)).unwrap();
            a.recv(Duration::from_secs(1)).unwrap();
        }
        assert_eq!(clock.now(), Duration::from_millis(300));
    }

    #[test]
    fn faulty_transport_drops_after_budget() {
        let (a, b) = loopback_pair();
        let a = FaultyTransport::new(a, 1);
        a.send(&frame(1)).unwrap();
        assert!(a.send(&frame(2)).is_err());
        assert_eq!(b.recv(Duration::from_millis(50)).unwrap(), frame(1));
        assert!(matches!(b.recv(Duration::from_millis(50)), Err(Error::Transport(_))));
    }
}
