//! Point-to-point frame delivery between workers.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::wire::{Frame, FrameType, PayloadKind, WireError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("worker {peer} disconnected")]
    Disconnected { peer: usize },
    #[error("no link to worker {peer}")]
    NoRoute { peer: usize },
    #[error("worker {peer} unreachable at {addr} after {attempts} attempts: {source}")]
    Unreachable {
        peer: usize,
        addr: SocketAddr,
        attempts: u32,
        #[source]
        source: io::Error,
    },
    #[error("link to worker {peer}: {source}")]
    Io {
        peer: usize,
        #[source]
        source: io::Error,
    },
    #[error("handshake with worker {peer}: {reason}")]
    Handshake { peer: usize, reason: String },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Ordered, reliable frame delivery to and from named peers.
///
/// Frames between one sender and one receiver arrive in send order.
pub trait Transport: Send {
    fn worker_id(&self) -> usize;
    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError>;
    fn recv(&mut self, from: usize) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn worker_id(&self) -> usize {
        (**self).worker_id()
    }
    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        (**self).send(to, frame)
    }
    fn recv(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        (**self).recv(from)
    }
}

/// In-process transport over `std::sync::mpsc` channels.
pub struct ChannelTransport {
    id: usize,
    tx: HashMap<usize, Sender<Vec<u8>>>,
    rx: HashMap<usize, Receiver<Vec<u8>>>,
}

impl ChannelTransport {
    /// Endpoints for `n` workers linked as a chain (w ↔ w+1).
    pub fn chain(n: usize) -> Vec<ChannelTransport> {
        let mut ends: Vec<ChannelTransport> = (0..n)
            .map(|id| ChannelTransport {
                id,
                tx: HashMap::new(),
                rx: HashMap::new(),
            })
            .collect();
        for w in 1..n {
            let (a_tx, a_rx) = channel();
            let (b_tx, b_rx) = channel();
            ends[w - 1].tx.insert(w, a_tx);
            ends[w].rx.insert(w - 1, a_rx);
            ends[w].tx.insert(w - 1, b_tx);
            ends[w - 1].rx.insert(w, b_rx);
        }
        ends
    }
}

impl Transport for ChannelTransport {
    fn worker_id(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        self.tx
            .get(&to)
            .ok_or(TransportError::NoRoute { peer: to })?
            .send(frame.to_vec())
            .map_err(|_| TransportError::Disconnected { peer: to })
    }

    fn recv(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        self.rx
            .get(&from)
            .ok_or(TransportError::NoRoute { peer: from })?
            .recv()
            .map_err(|_| TransportError::Disconnected { peer: from })
    }
}

/// Dial settings for socket links.
#[derive(Clone, Copy, Debug)]
pub struct DialPolicy {
    pub attempts: u32,
    pub delay: Duration,
}

impl Default for DialPolicy {
    fn default() -> Self {
        Self {
            attempts: 50,
            delay: Duration::from_millis(100),
        }
    }
}

pub fn dial(peer: usize, addr: SocketAddr, policy: DialPolicy) -> Result<TcpStream, TransportError> {
    let mut last = None;
    for attempt in 0..policy.attempts.max(1) {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true).map_err(|source| TransportError::Io { peer, source })?;
                return Ok(s);
            }
            Err(e) => {
                last = Some(e);
                if attempt + 1 < policy.attempts {
                    thread::sleep(policy.delay);
                }
            }
        }
    }
    Err(TransportError::Unreachable {
        peer,
        addr,
        attempts: policy.attempts.max(1),
        source: last.unwrap_or_else(|| io::Error::other("no attempt made")),
    })
}

/// Writes one u32-LE length-prefixed frame.
pub fn write_prefixed(stream: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    stream.write_all(&(frame.len() as u32).to_le_bytes())?;
    stream.write_all(frame)?;
    stream.flush()
}

pub fn read_prefixed(stream: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

/// Transport over TCP: worker w dials w+1 and accepts w−1, each link opened
/// with a Hello carrying the dialer's id and topology checksum.
pub struct SocketTransport {
    id: usize,
    links: HashMap<usize, TcpStream>,
}

impl SocketTransport {
    /// Connects worker `id` into the chain. `listener` must already be bound
    /// to `addrs[id]`.
    pub fn connect_chain(
        id: usize,
        listener: &TcpListener,
        addrs: &[SocketAddr],
        topology_checksum: u64,
        policy: DialPolicy,
    ) -> Result<Self, TransportError> {
        let mut links = HashMap::new();
        if id + 1 < addrs.len() {
            let peer = id + 1;
            let mut s = dial(peer, addrs[peer], policy)?;
            let hello = Frame::control(FrameType::Hello, PayloadKind::None, topology_checksum, id as u32);
            write_prefixed(&mut s, &hello.encode()).map_err(|source| TransportError::Io { peer, source })?;
            let reply = Frame::decode(&read_prefixed(&mut s).map_err(|source| TransportError::Io { peer, source })?)?;
            if reply.frame_type != FrameType::Ack {
                return Err(TransportError::Handshake {
                    peer,
                    reason: "peer rejected our topology checksum".into(),
                });
            }
            links.insert(peer, s);
        }
        if id > 0 {
            let peer = id - 1;
            let (mut s, _) = listener.accept().map_err(|source| TransportError::Io { peer, source })?;
            s.set_nodelay(true).map_err(|source| TransportError::Io { peer, source })?;
            let hello = Frame::decode(&read_prefixed(&mut s).map_err(|source| TransportError::Io { peer, source })?)?
                .expect(FrameType::Hello)?;
            let ok = hello.slice_from as usize == peer && hello.iteration == topology_checksum;
            let reply = Frame::control(
                if ok { FrameType::Ack } else { FrameType::Nack },
                PayloadKind::None,
                topology_checksum,
                id as u32,
            );
            write_prefixed(&mut s, &reply.encode()).map_err(|source| TransportError::Io { peer, source })?;
            if !ok {
                return Err(TransportError::Handshake {
                    peer,
                    reason: format!(
                        "expected worker {peer} with topology checksum {topology_checksum:#018x}, got worker {} with {:#018x}",
                        hello.slice_from, hello.iteration
                    ),
                });
            }
            links.insert(peer, s);
        }
        Ok(Self { id, links })
    }

    /// Builds a full loopback chain in one process, one thread per worker.
    pub fn loopback_chain(n: usize) -> Result<Vec<SocketTransport>, TransportError> {
        let listeners: Vec<TcpListener> = (0..n)
            .map(|w| TcpListener::bind("127.0.0.1:0").map_err(|source| TransportError::Io { peer: w, source }))
            .collect::<Result<_, _>>()?;
        let addrs: Vec<SocketAddr> = listeners
            .iter()
            .enumerate()
            .map(|(w, l)| l.local_addr().map_err(|source| TransportError::Io { peer: w, source }))
            .collect::<Result<_, _>>()?;
        thread::scope(|scope| {
            let handles: Vec<_> = listeners
                .iter()
                .enumerate()
                .map(|(w, l)| {
                    let addrs = &addrs;
                    scope.spawn(move || SocketTransport::connect_chain(w, l, addrs, 0, DialPolicy::default()))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("connect thread")).collect()
        })
    }
}

impl Transport for SocketTransport {
    fn worker_id(&self) -> usize {
        self.id
    }

    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        let s = self.links.get_mut(&to).ok_or(TransportError::NoRoute { peer: to })?;
        write_prefixed(s, frame).map_err(|source| link_error(to, source))
    }

    fn recv(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        let s = self.links.get_mut(&from).ok_or(TransportError::NoRoute { peer: from })?;
        read_prefixed(s).map_err(|source| link_error(from, source))
    }
}

fn link_error(peer: usize, source: io::Error) -> TransportError {
    match source.kind() {
        io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe => {
            TransportError::Disconnected { peer }
        }
        _ => TransportError::Io { peer, source },
    }
}

/// Direction and bytes of one frame seen by a [`RecordingTransport`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recorded {
    pub from: usize,
    pub to: usize,
    pub bytes: Vec<u8>,
}

/// Wraps a transport and logs every frame it sends.
pub struct RecordingTransport<T> {
    inner: T,
    log: Arc<Mutex<Vec<Recorded>>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, log: Arc<Mutex<Vec<Recorded>>>) -> Self {
        Self { inner, log }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn worker_id(&self) -> usize {
        self.inner.worker_id()
    }

    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        self.log.lock().unwrap().push(Recorded {
            from: self.inner.worker_id(),
            to,
            bytes: frame.to_vec(),
        });
        self.inner.send(to, frame)
    }

    fn recv(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        self.inner.recv(from)
    }
}

/// Flips one payload bit in the first `corrupt` boundary frames it sends.
/// For exercising the retransmit path.
pub struct CorruptingTransport<T> {
    inner: T,
    remaining: usize,
}

impl<T: Transport> CorruptingTransport<T> {
    pub fn new(inner: T, corrupt: usize) -> Self {
        Self { inner, remaining: corrupt }
    }
}

impl<T: Transport> Transport for CorruptingTransport<T> {
    fn worker_id(&self) -> usize {
        self.inner.worker_id()
    }

    fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
        let is_boundary = frame.len() > super::wire::HEADER_LEN + 4 && frame[5] == FrameType::Boundary as u8;
        if self.remaining > 0 && is_boundary {
            self.remaining -= 1;
            let mut bad = frame.to_vec();
            bad[super::wire::HEADER_LEN] ^= 0x80;
            return self.inner.send(to, &bad);
        }
        self.inner.send(to, frame)
    }

    fn recv(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
        self.inner.recv(from)
    }
}
