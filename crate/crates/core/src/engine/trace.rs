use std::fmt;
use std::io::Write;

use crate::UeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// UE computed a fragment; `local_iter` is its new count.
    Step,
    /// Just before a step: UE holds `peer`'s fragment number `local_iter`.
    Tau,
    /// UE put a fragment on the link to `peer`.
    Send,
    /// Fragment to `peer` lost on the link.
    Drop,
    /// Pending fragment from `peer` replaced in the mailbox by a newer one.
    Supersede,
    /// Fragment from `peer` installed in the view.
    Import,
    /// Fragment from `peer` discarded as not newer than the one held.
    Stale,
    Converge,
    Diverge,
    /// Monitor sent STOP to `peer`.
    Stop,
    /// UE stopped computing.
    Halt,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Step => "step",
            Self::Tau => "tau",
            Self::Send => "send",
            Self::Drop => "drop",
            Self::Supersede => "supersede",
            Self::Import => "import",
            Self::Stale => "stale",
            Self::Converge => "converge",
            Self::Diverge => "diverge",
            Self::Stop => "stop",
            Self::Halt => "halt",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: u64,
    pub ue: UeId,
    pub kind: EventKind,
    pub peer: Option<UeId>,
    pub local_iter: u64,
    pub residual: Option<f64>,
}

impl TraceEvent {
    /// Tab-separated: time, ue, kind, peer, local_iter, residual; `-` marks
    /// an absent field.
    pub fn to_line(&self) -> String {
        let peer = self.peer.map_or_else(|| "-".to_string(), |p| p.to_string());
        let residual = self.residual.map_or_else(|| "-".to_string(), |r| format!("{r:.16e}"));
        format!("{}\t{}\t{}\t{}\t{}\t{}", self.time, self.ue, self.kind, peer, self.local_iter, residual)
    }

    /// Bitwise identity, residuals compared by bit pattern.
    pub fn same_as(&self, other: &Self) -> bool {
        self.time == other.time
            && self.ue == other.ue
            && self.kind == other.kind
            && self.peer == other.peer
            && self.local_iter == other.local_iter
            && self.residual.map(f64::to_bits) == other.residual.map(f64::to_bits)
    }
}

/// A step with the delays it saw.
#[derive(Debug, Clone, PartialEq)]
pub struct StepView {
    pub time: u64,
    pub ue: UeId,
    /// Iteration count before the step.
    pub t: u64,
    /// `tau[j]`: iteration count of `j`'s fragment used; `tau[ue] == t`.
    pub tau: Vec<u64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub(crate) fn push(
        &mut self,
        time: u64,
        ue: UeId,
        kind: EventKind,
        peer: Option<UeId>,
        local_iter: u64,
        residual: Option<f64>,
    ) {
        self.events.push(TraceEvent { time, ue, kind, peer, local_iter, residual });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Pairs every step with its preceding `Tau` events.
    pub fn steps(&self, p: usize) -> Vec<StepView> {
        let mut pending: Vec<Vec<Option<u64>>> = vec![vec![None; p]; p];
        let mut out = Vec::new();
        for ev in &self.events {
            let ue = ev.ue as usize;
            match ev.kind {
                EventKind::Tau => {
                    if let Some(peer) = ev.peer {
                        pending[ue][peer as usize] = Some(ev.local_iter);
                    }
                }
                EventKind::Step => {
                    let t = ev.local_iter - 1;
                    let tau = (0..p).map(|j| if j == ue { t } else { pending[ue][j].take().unwrap_or(0) }).collect();
                    out.push(StepView { time: ev.time, ue: ev.ue, t, tau, residual: ev.residual.unwrap_or(f64::NAN) });
                }
                _ => {}
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for ev in &self.events {
            writeln!(out, "{}", ev.to_line())?;
        }
        out.flush()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ev in &self.events {
            s.push_str(&ev.to_line());
            s.push('\n');
        }
        s
    }

    /// Event-by-event bitwise equality.
    pub fn same_as(&self, other: &Self) -> bool {
        self.events.len() == other.events.len() && self.events.iter().zip(&other.events).all(|(a, b)| a.same_as(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let mut trace = Trace::default();
        trace.push(3, 1, EventKind::Step, None, 4, Some(0.25));
        trace.push(3, 1, EventKind::Send, Some(0), 4, None);
        assert_eq!(trace.to_text(), "3\t1\tstep\t-\t4\t2.5000000000000000e-1\n3\t1\tsend\t0\t4\t-\n");
    }

    #[test]
    fn steps_collect_tau() {
        let mut trace = Trace::default();
        trace.push(0, 0, EventKind::Tau, Some(1), 0, None);
        trace.push(0, 0, EventKind::Step, None, 1, Some(0.5));
        trace.push(1, 0, EventKind::Tau, Some(1), 1, None);
        trace.push(1, 0, EventKind::Step, None, 2, Some(0.1));
        let steps = trace.steps(2);
        assert_eq!(steps[0].tau, vec![0, 0]);
        assert_eq!(steps[1].tau, vec![1, 1]);
        assert_eq!(steps[1].t, 1);
    }
}
