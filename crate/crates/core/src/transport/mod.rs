//! Message transport between UEs and the monitor.
//!
//! Sends never block beyond the endpoint's send timeout. Fragments use
//! latest-value semantics: a fragment still waiting on a link is replaced by
//! a newer one from the same sender. Control messages are never dropped or
//! replaced, and each link keeps send order.

pub mod codec;
mod inbox;
pub mod tcp;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::engine::Fragment;
use crate::termination::ControlMessage;
use crate::UeId;

pub use codec::{decode_frame, encode_frame, CodecError, FrameDecoder};
use inbox::Inbox;
pub use tcp::{tcp_mesh, TcpEndpoint};

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Fragment(Fragment),
    Control(ControlMessage),
}

impl Message {
    pub fn sender(&self) -> UeId {
        match self {
            Self::Fragment(f) => f.sender,
            Self::Control(c) => c.sender,
        }
    }

    pub fn is_fragment(&self) -> bool {
        matches!(self, Self::Fragment(_))
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer {peer} unreachable: {reason}")]
    Unreachable { peer: UeId, reason: String },
    #[error("unknown peer {0}")]
    UnknownPeer(UeId),
    #[error("link to peer {peer} failed: {reason}")]
    LinkFailed { peer: UeId, reason: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Queued,
    /// Accepted, replacing an older fragment that had not gone out yet.
    Superseded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub sent: u64,
    /// Fragments replaced before delivery, on either end of a link.
    pub superseded: u64,
    pub received: u64,
    /// Frames that failed to decode and were skipped.
    pub corrupt: u64,
}

/// One participant's view of the transport. Owned by a single thread.
pub trait Endpoint: Send {
    fn id(&self) -> UeId;

    fn send(&mut self, to: UeId, msg: Message) -> Result<SendOutcome, TransportError>;

    /// Everything currently available, per-sender arrival order. Never blocks.
    fn poll(&mut self) -> Vec<Message>;

    /// Like `poll`, but waits up to `timeout` for at least one message.
    fn recv_timeout(&mut self, timeout: Duration) -> Vec<Message>;

    fn stats(&self) -> TransportStats;
}

/// Endpoints sharing memory inboxes, one per id in `0..count`.
pub fn in_process_mesh(count: usize) -> Vec<InProcessEndpoint> {
    let inboxes: Arc<[Arc<Inbox>]> = (0..count).map(|_| Arc::new(Inbox::default())).collect();
    (0..count).map(|id| InProcessEndpoint { id: id as UeId, inboxes: Arc::clone(&inboxes), sent: 0 }).collect()
}

pub struct InProcessEndpoint {
    id: UeId,
    inboxes: Arc<[Arc<Inbox>]>,
    sent: u64,
}

impl Endpoint for InProcessEndpoint {
    fn id(&self) -> UeId {
        self.id
    }

    fn send(&mut self, to: UeId, msg: Message) -> Result<SendOutcome, TransportError> {
        let inbox = self.inboxes.get(to as usize).ok_or(TransportError::UnknownPeer(to))?;
        self.sent += 1;
        Ok(inbox.push(self.id, msg))
    }

    fn poll(&mut self) -> Vec<Message> {
        self.inboxes[self.id as usize].drain()
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Vec<Message> {
        self.inboxes[self.id as usize].wait_drain(timeout)
    }

    fn stats(&self) -> TransportStats {
        let inbox = self.inboxes[self.id as usize].counters();
        TransportStats {
            sent: self.sent,
            superseded: inbox.superseded,
            received: inbox.received,
            corrupt: inbox.corrupt,
        }
    }
}
