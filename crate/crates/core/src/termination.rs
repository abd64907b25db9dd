//! Centralized termination detection with persistence counters.
//!
//! A computing UE reports `Converge` once its local test has passed
//! `pc_max` consecutive times and `Diverge` when a passing streak breaks.
//! The monitor runs the same counter over the predicate "every UE's latest
//! report is `Converge`" and broadcasts `Stop` when it saturates.

use std::collections::VecDeque;

use thiserror::Error;

use crate::UeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("persistence threshold must be at least 1")]
    ZeroThreshold,
    #[error("{kind:?} from UE {sender} after the monitor stopped")]
    AfterStop { kind: ControlKind, sender: UeId },
    #[error("unexpected {kind:?} from {sender} at the monitor")]
    UnexpectedKind { kind: ControlKind, sender: UeId },
    #[error("unknown UE {0}")]
    UnknownUe(UeId),
    #[error("script line {line}: {msg}")]
    Script { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlKind {
    Converge,
    Diverge,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlMessage {
    pub kind: ControlKind,
    pub sender: UeId,
}

/// The shared counter mechanics of both protocol sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersistenceCounter {
    converged: bool,
    pc: u32,
    pc_max: u32,
}

/// What a single check did to the counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterEvent {
    /// Counter reached `pc_max` on this check.
    Saturated,
    /// A converged streak ended.
    Reset,
    None,
}

impl PersistenceCounter {
    pub fn new(pc_max: u32) -> Result<Self, ProtocolError> {
        if pc_max == 0 {
            return Err(ProtocolError::ZeroThreshold);
        }
        Ok(Self { converged: false, pc: 0, pc_max })
    }

    pub fn check(&mut self, passed: bool) -> CounterEvent {
        if passed {
            self.converged = true;
            if self.pc < self.pc_max {
                self.pc += 1;
                if self.pc == self.pc_max {
                    return CounterEvent::Saturated;
                }
            }
            CounterEvent::None
        } else if self.converged {
            self.converged = false;
            self.pc = 0;
            CounterEvent::Reset
        } else {
            CounterEvent::None
        }
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn pc(&self) -> u32 {
        self.pc
    }

    pub fn pc_max(&self) -> u32 {
        self.pc_max
    }
}

/// Computing-UE side of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UeProtocolState {
    counter: PersistenceCounter,
}

impl UeProtocolState {
    pub fn new(pc_max: u32) -> Result<Self, ProtocolError> {
        Ok(Self { counter: PersistenceCounter::new(pc_max)? })
    }

    /// Feeds one local convergence test; returns the message to send to the
    /// monitor, if any. `Converge` is emitted once per converged episode.
    pub fn on_check(&mut self, locally_converged: bool) -> Option<ControlKind> {
        match self.counter.check(locally_converged) {
            CounterEvent::Saturated => Some(ControlKind::Converge),
            CounterEvent::Reset => Some(ControlKind::Diverge),
            CounterEvent::None => None,
        }
    }

    pub fn converged(&self) -> bool {
        self.counter.converged()
    }

    pub fn pc(&self) -> u32 {
        self.counter.pc()
    }

    pub fn pc_max(&self) -> u32 {
        self.counter.pc_max()
    }
}

/// Monitor side of the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorState {
    ue_status: Vec<bool>,
    counter: PersistenceCounter,
    stopped: bool,
}

impl MonitorState {
    pub fn new(p: usize, pc_max: u32) -> Result<Self, ProtocolError> {
        Ok(Self { ue_status: vec![false; p], counter: PersistenceCounter::new(pc_max)?, stopped: false })
    }

    /// Records a report and runs one convergence check. Returns `true` when
    /// `Stop` must be broadcast to every UE.
    pub fn on_message(&mut self, msg: ControlMessage) -> Result<bool, ProtocolError> {
        if self.stopped {
            return Err(ProtocolError::AfterStop { kind: msg.kind, sender: msg.sender });
        }
        let status = self.ue_status.get_mut(msg.sender as usize).ok_or(ProtocolError::UnknownUe(msg.sender))?;
        *status = match msg.kind {
            ControlKind::Converge => true,
            ControlKind::Diverge => false,
            ControlKind::Stop => return Err(ProtocolError::UnexpectedKind { kind: msg.kind, sender: msg.sender }),
        };
        Ok(self.check())
    }

    /// One convergence check without a new report (the monitor's idle loop).
    pub fn on_tick(&mut self) -> bool {
        if self.stopped {
            return false;
        }
        self.check()
    }

    fn check(&mut self) -> bool {
        let all = self.all_converged();
        if self.counter.check(all) == CounterEvent::Saturated {
            self.stopped = true;
        }
        self.stopped
    }

    pub fn all_converged(&self) -> bool {
        self.ue_status.iter().all(|&s| s)
    }

    pub fn ue_status(&self) -> &[bool] {
        &self.ue_status
    }

    pub fn converged(&self) -> bool {
        self.counter.converged()
    }

    pub fn pc(&self) -> u32 {
        self.counter.pc()
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }
}

/// One step of a protocol scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioEvent {
    /// UE runs its local test; any resulting message is queued to the monitor.
    Check { ue: UeId, converged: bool },
    /// Oldest queued message from `ue` reaches the monitor.
    Deliver { ue: UeId },
    /// Every queued message reaches the monitor, in UE then FIFO order.
    DeliverAll,
    /// Monitor runs a check without receiving anything.
    Tick,
}

impl ScenarioEvent {
    /// Parses one script line: `check <ue> <0|1>`, `deliver <ue>`,
    /// `deliver-all` or `tick`.
    pub fn parse(line: &str) -> Result<Option<Self>, String> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(None);
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let ue = |tok: &str| tok.parse::<UeId>().map_err(|_| format!("bad UE id {tok:?}"));
        let event = match tokens.as_slice() {
            ["check", id, flag] => {
                let converged = match *flag {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    other => return Err(format!("bad convergence flag {other:?}")),
                };
                Self::Check { ue: ue(id)?, converged }
            }
            ["deliver", id] => Self::Deliver { ue: ue(id)? },
            ["deliver-all"] => Self::DeliverAll,
            ["tick"] => Self::Tick,
            _ => return Err(format!("unrecognized event {line:?}")),
        };
        Ok(Some(event))
    }
}

pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioEvent>, ProtocolError> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        match ScenarioEvent::parse(line) {
            Ok(Some(ev)) => events.push(ev),
            Ok(None) => {}
            Err(msg) => return Err(ProtocolError::Script { line: idx + 1, msg }),
        }
    }
    Ok(events)
}

/// A message movement in a scenario trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioRecord {
    /// UE queued a report for the monitor.
    Sent { step: usize, msg: ControlMessage },
    /// Monitor consumed a report; `pc` is its counter afterwards.
    Received { step: usize, msg: ControlMessage, pc: u32 },
    /// Monitor ran an idle check.
    Ticked { step: usize, pc: u32 },
    /// `Stop` delivered to `to`.
    Stop { step: usize, to: UeId },
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub trace: Vec<ScenarioRecord>,
    pub monitor: MonitorState,
    pub ues: Vec<UeProtocolState>,
    /// Messages still queued when the run ended.
    pub undelivered: usize,
    /// Index of the event that triggered `Stop`.
    pub stopped_at: Option<usize>,
}

impl ScenarioOutcome {
    pub fn stop_count(&self) -> usize {
        self.trace.iter().filter(|r| matches!(r, ScenarioRecord::Stop { .. })).count()
    }
}

/// Replays a scenario deterministically. Links to the monitor are FIFO.
/// Once `Stop` has been broadcast all UEs halt; remaining events and queued
/// reports are ignored.
pub fn run_protocol_scenario(
    p: usize,
    pc_max_ue: u32,
    pc_max_monitor: u32,
    script: &[ScenarioEvent],
) -> Result<ScenarioOutcome, ProtocolError> {
    let mut ues = vec![UeProtocolState::new(pc_max_ue)?; p];
    let mut monitor = MonitorState::new(p, pc_max_monitor)?;
    let mut queues: Vec<VecDeque<ControlMessage>> = vec![VecDeque::new(); p];
    let mut trace = Vec::new();
    let mut stopped_at = None;

    let check_ue = |ue: UeId| -> Result<usize, ProtocolError> {
        if (ue as usize) < p {
            Ok(ue as usize)
        } else {
            Err(ProtocolError::UnknownUe(ue))
        }
    };

    for (step, event) in script.iter().enumerate() {
        let mut deliveries = Vec::new();
        match *event {
            ScenarioEvent::Check { ue, converged } => {
                let idx = check_ue(ue)?;
                if let Some(kind) = ues[idx].on_check(converged) {
                    let msg = ControlMessage { kind, sender: ue };
                    queues[idx].push_back(msg);
                    trace.push(ScenarioRecord::Sent { step, msg });
                }
            }
            ScenarioEvent::Deliver { ue } => {
                let idx = check_ue(ue)?;
                deliveries.extend(queues[idx].pop_front());
            }
            ScenarioEvent::DeliverAll => {
                for q in &mut queues {
                    deliveries.extend(q.drain(..));
                }
            }
            ScenarioEvent::Tick => {
                let stop = monitor.on_tick();
                trace.push(ScenarioRecord::Ticked { step, pc: monitor.pc() });
                if stop {
                    stopped_at = Some(step);
                }
            }
        }
        for msg in deliveries {
            if stopped_at.is_some() {
                break;
            }
            let stop = monitor.on_message(msg)?;
            trace.push(ScenarioRecord::Received { step, msg, pc: monitor.pc() });
            if stop {
                stopped_at = Some(step);
            }
        }
        if stopped_at.is_some() {
            for to in 0..p {
                trace.push(ScenarioRecord::Stop { step, to: to as UeId });
            }
            break;
        }
    }

    Ok(ScenarioOutcome { trace, monitor, ues, undelivered: queues.iter().map(VecDeque::len).sum(), stopped_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ScenarioEvent::*;

    fn converge(sender: UeId) -> ControlMessage {
        ControlMessage { kind: ControlKind::Converge, sender }
    }

    fn diverge(sender: UeId) -> ControlMessage {
        ControlMessage { kind: ControlKind::Diverge, sender }
    }

    #[test]
    fn ue_first_convergence_emits() {
        let mut ue = UeProtocolState::new(1).unwrap();
        assert_eq!(ue.on_check(true), Some(ControlKind::Converge));
        assert_eq!(ue.pc(), 1);
        assert!(ue.converged());
    }

    #[test]
    fn ue_divergence_resets() {
        let mut ue = UeProtocolState::new(1).unwrap();
        ue.on_check(true);
        assert_eq!(ue.on_check(false), Some(ControlKind::Diverge));
        assert!(!ue.converged());
        assert_eq!(ue.pc(), 0);
    }

    #[test]
    fn ue_idle() {
        let mut ue = UeProtocolState::new(1).unwrap();
        assert_eq!(ue.on_check(false), None);
        assert_eq!(ue, UeProtocolState::new(1).unwrap());
    }

    #[test]
    fn ue_saturates_without_repeats() {
        let mut ue = UeProtocolState::new(3).unwrap();
        let sent: Vec<_> = (0..6).map(|_| ue.on_check(true)).collect();
        assert_eq!(sent, vec![None, None, Some(ControlKind::Converge), None, None, None]);
        assert_eq!(ue.pc(), 3);
    }

    #[test]
    fn zero_threshold_rejected() {
        assert_eq!(UeProtocolState::new(0), Err(ProtocolError::ZeroThreshold));
        assert!(MonitorState::new(2, 0).is_err());
    }

    #[test]
    fn monitor_stops_on_last_converge() {
        let mut m = MonitorState::new(2, 1).unwrap();
        assert!(!m.on_message(converge(0)).unwrap());
        assert!(m.on_message(converge(1)).unwrap());
        assert!(m.stopped());
    }

    #[test]
    fn monitor_persistence_counts_checks() {
        let mut m = MonitorState::new(2, 3).unwrap();
        assert!(!m.on_message(converge(0)).unwrap());
        assert!(!m.on_message(converge(1)).unwrap());
        assert_eq!(m.pc(), 1);
        assert!(!m.on_message(converge(0)).unwrap());
        assert!(m.on_message(converge(1)).unwrap());
    }

    #[test]
    fn monitor_divergence_resets() {
        let mut m = MonitorState::new(2, 1).unwrap();
        m.on_message(converge(0)).unwrap();
        assert!(!m.on_message(diverge(0)).unwrap());
        assert!(!m.converged());
        assert_eq!(m.pc(), 0);
    }

    #[test]
    fn monitor_rejects_after_stop_and_bad_input() {
        let mut m = MonitorState::new(1, 1).unwrap();
        assert!(m.on_message(converge(0)).unwrap());
        assert!(matches!(m.on_message(diverge(0)), Err(ProtocolError::AfterStop { .. })));
        let mut m = MonitorState::new(1, 1).unwrap();
        assert_eq!(m.on_message(converge(4)), Err(ProtocolError::UnknownUe(4)));
        let stop = ControlMessage { kind: ControlKind::Stop, sender: 0 };
        assert!(matches!(m.on_message(stop), Err(ProtocolError::UnexpectedKind { .. })));
    }

    #[test]
    fn scenario_stable_convergence_single_stop() {
        let script = [Check { ue: 0, converged: true }, Check { ue: 1, converged: true }, DeliverAll, Tick, Tick];
        let out = run_protocol_scenario(2, 1, 1, &script).unwrap();
        assert_eq!(out.stop_count(), 2);
        assert_eq!(out.stopped_at, Some(2));
        assert!(out.monitor.stopped());
    }

    #[test]
    fn scenario_late_divergence_blocks_stop() {
        let script = [
            Check { ue: 0, converged: true },
            Check { ue: 1, converged: true },
            DeliverAll,
            Tick,
            Check { ue: 1, converged: false },
            DeliverAll,
            Tick,
            Tick,
        ];
        let out = run_protocol_scenario(2, 1, 3, &script).unwrap();
        assert_eq!(out.stop_count(), 0);
        assert!(!out.monitor.stopped());
        assert_eq!(out.monitor.pc(), 0);
    }

    #[test]
    fn scenario_single_ue_minimal() {
        let out = run_protocol_scenario(1, 1, 1, &[Check { ue: 0, converged: true }, Deliver { ue: 0 }]).unwrap();
        assert_eq!(
            out.trace,
            vec![
                ScenarioRecord::Sent { step: 0, msg: converge(0) },
                ScenarioRecord::Received { step: 1, msg: converge(0), pc: 1 },
                ScenarioRecord::Stop { step: 1, to: 0 },
            ]
        );
    }

    #[test]
    fn scenario_script_parsing() {
        let events = parse_scenario("# two UEs\ncheck 0 1\ncheck 1 true\n\ndeliver 0\ndeliver-all\ntick\n").unwrap();
        assert_eq!(
            events,
            vec![
                Check { ue: 0, converged: true },
                Check { ue: 1, converged: true },
                Deliver { ue: 0 },
                DeliverAll,
                Tick
            ]
        );
        assert_eq!(
            parse_scenario("check 0 1\ncheck x 1\n").unwrap_err(),
            ProtocolError::Script { line: 2, msg: "bad UE id \"x\"".into() }
        );
        assert!(parse_scenario("jump 1\n").is_err());
        assert!(run_protocol_scenario(2, 1, 1, &[Check { ue: 2, converged: true }]).is_err());
    }

    #[test]
    fn both_sides_share_counter_trajectory() {
        let stream = [true, true, false, true, false, false, true, true, true, true];
        let mut ue = UeProtocolState::new(2).unwrap();
        let mut counter = PersistenceCounter::new(2).unwrap();
        let mut ue_pcs = Vec::new();
        let mut monitor_pcs = Vec::new();
        for &b in &stream {
            ue.on_check(b);
            counter.check(b);
            ue_pcs.push(ue.pc());
            monitor_pcs.push(counter.pc());
        }
        assert_eq!(ue_pcs, monitor_pcs);
        assert_eq!(ue_pcs, vec![1, 2, 0, 1, 0, 0, 1, 2, 2, 2]);
    }
}
