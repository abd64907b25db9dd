//! TCP transport. Each endpoint listens on its own address and opens one
//! persistent connection per peer on first send. Frames go on the wire
//! back to back with no extra framing.

use std::collections::{HashMap, VecDeque};
use std::io::{ErrorKind, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::warn;

use super::codec::{encode_frame, FrameDecoder};
use super::inbox::{supersede, Inbox};
use super::{Endpoint, Message, SendOutcome, TransportError, TransportStats};
use crate::UeId;

pub const DEFAULT_SEND_TIMEOUT: Duration = Duration::from_secs(2);
const ACCEPT_POLL: Duration = Duration::from_millis(2);
const READ_POLL: Duration = Duration::from_millis(50);

#[derive(Default)]
struct OutState {
    queue: VecDeque<Message>,
    closed: bool,
    failed: Option<String>,
}

#[derive(Default)]
struct Outbox {
    state: Mutex<OutState>,
    ready: Condvar,
}

struct Link {
    outbox: Arc<Outbox>,
    writer: Option<JoinHandle<()>>,
}

pub struct TcpEndpoint {
    id: UeId,
    local_addr: SocketAddr,
    peers: Vec<SocketAddr>,
    send_timeout: Duration,
    inbox: Arc<Inbox>,
    links: HashMap<UeId, Link>,
    shutdown: Arc<AtomicBool>,
    listener: Option<JoinHandle<()>>,
    sent: u64,
    superseded: u64,
}

impl TcpEndpoint {
    /// Starts listening on `addr`. Peers are configured separately.
    pub fn bind(id: UeId, addr: SocketAddr, send_timeout: Duration) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let inbox = Arc::new(Inbox::default());
        let shutdown = Arc::new(AtomicBool::new(false));

        let handle = {
            let inbox = Arc::clone(&inbox);
            let shutdown = Arc::clone(&shutdown);
            thread::Builder::new()
                .name(format!("rank-accept-{id}"))
                .spawn(move || accept_loop(listener, inbox, shutdown))?
        };

        Ok(Self {
            id,
            local_addr,
            peers: Vec::new(),
            send_timeout,
            inbox,
            links: HashMap::new(),
            shutdown,
            listener: Some(handle),
            sent: 0,
            superseded: 0,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Address table indexed by endpoint id.
    pub fn set_peers(&mut self, peers: Vec<SocketAddr>) {
        self.peers = peers;
    }

    fn link(&mut self, to: UeId) -> Result<&Link, TransportError> {
        if !self.links.contains_key(&to) {
            let addr = *self.peers.get(to as usize).ok_or(TransportError::UnknownPeer(to))?;
            let stream = TcpStream::connect_timeout(&addr, self.send_timeout)
                .map_err(|e| TransportError::Unreachable { peer: to, reason: e.to_string() })?;
            stream.set_nodelay(true)?;
            stream.set_write_timeout(Some(self.send_timeout))?;
            let outbox = Arc::new(Outbox::default());
            let writer = {
                let outbox = Arc::clone(&outbox);
                thread::Builder::new()
                    .name(format!("rank-send-{}-{to}", self.id))
                    .spawn(move || write_loop(stream, outbox))?
            };
            self.links.insert(to, Link { outbox, writer: Some(writer) });
        }
        Ok(&self.links[&to])
    }
}

impl Endpoint for TcpEndpoint {
    fn id(&self) -> UeId {
        self.id
    }

    fn send(&mut self, to: UeId, msg: Message) -> Result<SendOutcome, TransportError> {
        let from = self.id;
        let outbox = Arc::clone(&self.link(to)?.outbox);
        let mut state = outbox.state.lock().unwrap();
        if let Some(reason) = &state.failed {
            return Err(TransportError::LinkFailed { peer: to, reason: reason.clone() });
        }
        let outcome = if msg.is_fragment() { supersede(&mut state.queue, from) } else { SendOutcome::Queued };
        state.queue.push_back(msg);
        drop(state);
        outbox.ready.notify_one();

        self.sent += 1;
        if outcome == SendOutcome::Superseded {
            self.superseded += 1;
        }
        Ok(outcome)
    }

    fn poll(&mut self) -> Vec<Message> {
        self.inbox.drain()
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Vec<Message> {
        self.inbox.wait_drain(timeout)
    }

    fn stats(&self) -> TransportStats {
        let inbox = self.inbox.counters();
        TransportStats {
            sent: self.sent,
            superseded: self.superseded + inbox.superseded,
            received: inbox.received,
            corrupt: inbox.corrupt,
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        for link in self.links.values() {
            link.outbox.state.lock().unwrap().closed = true;
            link.outbox.ready.notify_all();
        }
        // Writers flush what is queued before exiting.
        for link in self.links.values_mut() {
            if let Some(h) = link.writer.take() {
                let _ = h.join();
            }
        }
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.listener.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, inbox: Arc<Inbox>, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let inbox = Arc::clone(&inbox);
                let shutdown = Arc::clone(&shutdown);
                let spawned =
                    thread::Builder::new().name("rank-recv".into()).spawn(move || read_loop(stream, inbox, shutdown));
                if let Err(e) = spawned {
                    warn!("cannot spawn reader thread: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn read_loop(mut stream: TcpStream, inbox: Arc<Inbox>, shutdown: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(READ_POLL)).is_err() {
        return;
    }
    let mut decoder = FrameDecoder::new();
    let mut chunk = vec![0u8; 64 * 1024];
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(read) => decoder.extend(&chunk[..read]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                if shutdown.load(Ordering::SeqCst) {
                    return;
                }
                continue;
            }
            Err(_) => return,
        }
        while let Some(frame) = decoder.next_frame() {
            match frame {
                Ok(msg) => {
                    inbox.push(msg.sender(), msg);
                }
                Err(e) => {
                    warn!("dropping corrupt frame: {e}");
                    inbox.note_corrupt();
                }
            }
        }
        if decoder.is_poisoned() {
            warn!("closing desynchronized connection");
            return;
        }
    }
}

fn write_loop(mut stream: TcpStream, outbox: Arc<Outbox>) {
    loop {
        let msg = {
            let mut state = outbox.state.lock().unwrap();
            loop {
                if let Some(msg) = state.queue.pop_front() {
                    break msg;
                }
                if state.closed {
                    return;
                }
                state = outbox.ready.wait(state).unwrap();
            }
        };
        let result = encode_frame(&msg)
            .map_err(|e| e.to_string())
            .and_then(|bytes| stream.write_all(&bytes).map_err(|e| e.to_string()));
        if let Err(reason) = result {
            warn!("send failed: {reason}");
            outbox.state.lock().unwrap().failed = Some(reason);
            return;
        }
    }
}

/// `count` loopback endpoints wired to each other. With a base port,
/// endpoint `i` listens on `base_port + i`; otherwise ports are ephemeral.
pub fn tcp_mesh(
    count: usize,
    base_port: Option<u16>,
    send_timeout: Duration,
) -> Result<Vec<TcpEndpoint>, TransportError> {
    let mut endpoints = Vec::with_capacity(count);
    for id in 0..count {
        let port = match base_port {
            Some(base) => base.checked_add(id as u16).ok_or_else(|| {
                TransportError::Io(std::io::Error::new(ErrorKind::InvalidInput, "port range overflow"))
            })?,
            None => 0,
        };
        endpoints.push(TcpEndpoint::bind(id as UeId, SocketAddr::from((Ipv4Addr::LOCALHOST, port)), send_timeout)?);
    }
    let addrs: Vec<SocketAddr> = endpoints.iter().map(TcpEndpoint::local_addr).collect();
    for ep in &mut endpoints {
        ep.set_peers(addrs.clone());
    }
    Ok(endpoints)
}
