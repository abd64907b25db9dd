use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{Message, SendOutcome};
use crate::UeId;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct InboxCounters {
    pub superseded: u64,
    pub received: u64,
    pub corrupt: u64,
}

#[derive(Default)]
struct State {
    queue: VecDeque<(UeId, Message)>,
    counters: InboxCounters,
}

/// Receiver-side mailbox with latest-value fragments per sender.
#[derive(Default)]
pub(crate) struct Inbox {
    state: Mutex<State>,
    ready: Condvar,
}

impl Inbox {
    pub fn push(&self, from: UeId, msg: Message) -> SendOutcome {
        let mut state = self.state.lock().unwrap();
        let outcome = if msg.is_fragment() { supersede(&mut state.queue, from) } else { SendOutcome::Queued };
        if outcome == SendOutcome::Superseded {
            state.counters.superseded += 1;
        }
        state.counters.received += 1;
        state.queue.push_back((from, msg));
        drop(state);
        self.ready.notify_all();
        outcome
    }

    pub fn note_corrupt(&self) {
        self.state.lock().unwrap().counters.corrupt += 1;
    }

    pub fn drain(&self) -> Vec<Message> {
        let mut state = self.state.lock().unwrap();
        state.queue.drain(..).map(|(_, m)| m).collect()
    }

    pub fn wait_drain(&self, timeout: Duration) -> Vec<Message> {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().unwrap();
        while state.queue.is_empty() {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            state = self.ready.wait_timeout(state, deadline - now).unwrap().0;
        }
        state.queue.drain(..).map(|(_, m)| m).collect()
    }

    pub fn counters(&self) -> InboxCounters {
        self.state.lock().unwrap().counters
    }
}

/// Removes the queued fragment from `from`, if any. At most one can be queued.
pub(crate) fn supersede<T: AsMessage>(queue: &mut VecDeque<T>, from: UeId) -> SendOutcome {
    match queue.iter().position(|item| item.is_fragment_from(from)) {
        Some(pos) => {
            queue.remove(pos);
            SendOutcome::Superseded
        }
        None => SendOutcome::Queued,
    }
}

pub(crate) trait AsMessage {
    fn is_fragment_from(&self, from: UeId) -> bool;
}

impl AsMessage for (UeId, Message) {
    fn is_fragment_from(&self, from: UeId) -> bool {
        self.0 == from && self.1.is_fragment()
    }
}

impl AsMessage for Message {
    fn is_fragment_from(&self, from: UeId) -> bool {
        self.is_fragment() && self.sender() == from
    }
}
