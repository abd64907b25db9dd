use crate::UeId;

use super::EngineError;

/// How the simulator orders computation and message delivery.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub seed: u64,
    /// Largest extra delay, in ticks, a message may experience.
    pub delay_bound: u32,
    /// Probability that a fragment on a link is skipped. Two consecutive
    /// fragments on one link are never both skipped.
    pub drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleMode {
    /// Every UE steps each tick and sees every peer's previous iterate.
    Lockstep,
    /// Every UE steps each tick; messages are delayed and fragments dropped
    /// at random.
    SeededRandom,
    /// Explicit event sequence.
    Scripted(Script),
}

impl Schedule {
    pub fn lockstep() -> Self {
        Self { mode: ScheduleMode::Lockstep, seed: 0, delay_bound: 0, drop_rate: 0.0 }
    }

    pub fn seeded(seed: u64, delay_bound: u32, drop_rate: f64) -> Result<Self, EngineError> {
        if !(0.0..=1.0).contains(&drop_rate) {
            return Err(EngineError::Schedule(format!("drop rate {drop_rate} outside [0, 1]")));
        }
        Ok(Self { mode: ScheduleMode::SeededRandom, seed, delay_bound, drop_rate })
    }

    pub fn scripted(script: Script) -> Self {
        Self { mode: ScheduleMode::Scripted(script), seed: 0, delay_bound: 0, drop_rate: 0.0 }
    }

    pub(crate) fn validate(&self, p: usize) -> Result<(), EngineError> {
        match &self.mode {
            ScheduleMode::Lockstep if self.delay_bound != 0 || self.drop_rate != 0.0 => {
                Err(EngineError::Schedule("lockstep schedules have no delays or drops".into()))
            }
            ScheduleMode::SeededRandom if !(0.0..=1.0).contains(&self.drop_rate) => {
                Err(EngineError::Schedule(format!("drop rate {} outside [0, 1]", self.drop_rate)))
            }
            ScheduleMode::Scripted(script) => script.validate(p),
            _ => Ok(()),
        }
    }
}

/// One scripted action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptEvent {
    /// The UE consumes its mailbox, computes, and puts its fragment on every
    /// outgoing link. Its convergence reports reach the monitor at once.
    Step(UeId),
    /// Oldest fragment in flight on `from -> to` reaches `to`'s mailbox.
    Deliver { from: UeId, to: UeId },
    /// Oldest fragment in flight on `from -> to` is lost.
    Drop { from: UeId, to: UeId },
    /// Everything in flight is delivered.
    DeliverAll,
    /// The monitor runs an idle convergence check.
    Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Script {
    pub events: Vec<ScriptEvent>,
    /// Replay the events until the run ends.
    pub cycle: bool,
}

impl Script {
    pub fn new(events: Vec<ScriptEvent>) -> Self {
        Self { events, cycle: false }
    }

    pub fn cycled(mut self) -> Self {
        self.cycle = true;
        self
    }

    /// Every UE steps, then everything is delivered; repeated.
    pub fn round_robin(p: usize) -> Self {
        let mut events: Vec<_> = (0..p as UeId).map(ScriptEvent::Step).collect();
        events.push(ScriptEvent::DeliverAll);
        Self { events, cycle: true }
    }

    /// Parses the line format: `step <ue>`, `deliver <from> <to>`,
    /// `drop <from> <to>`, `deliver-all`, `tick`, and a `cycle` directive.
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let mut script = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| EngineError::Script { line: line_no, msg };
            let id = |tok: &str| tok.parse::<UeId>().map_err(|_| err(format!("bad UE id {tok:?}")));
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let event = match tokens.as_slice() {
                ["step", ue] => ScriptEvent::Step(id(ue)?),
                ["deliver", from, to] => ScriptEvent::Deliver { from: id(from)?, to: id(to)? },
                ["drop", from, to] => ScriptEvent::Drop { from: id(from)?, to: id(to)? },
                ["deliver-all"] => ScriptEvent::DeliverAll,
                ["tick"] => ScriptEvent::Tick,
                ["cycle"] => {
                    script.cycle = true;
                    continue;
                }
                _ => return Err(err(format!("unrecognized event {line:?}"))),
            };
            script.events.push(event);
        }
        Ok(script)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.cycle {
            out.push_str("cycle\n");
        }
        for ev in &self.events {
            let line = match ev {
                ScriptEvent::Step(ue) => format!("step {ue}"),
                ScriptEvent::Deliver { from, to } => format!("deliver {from} {to}"),
                ScriptEvent::Drop { from, to } => format!("drop {from} {to}"),
                ScriptEvent::DeliverAll => "deliver-all".to_string(),
                ScriptEvent::Tick => "tick".to_string(),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub(crate) fn validate(&self, p: usize) -> Result<(), EngineError> {
        for (idx, ev) in self.events.iter().enumerate() {
            let bad = |msg: String| Err(EngineError::Script { line: idx + 1, msg });
            match *ev {
                ScriptEvent::Step(ue) if ue as usize >= p => return bad(format!("UE {ue} out of range")),
                ScriptEvent::Deliver { from, to } | ScriptEvent::Drop { from, to } => {
                    if from as usize >= p || to as usize >= p {
                        return bad(format!("link {from}->{to} out of range"));
                    }
                    if from == to {
                        return bad(format!("link {from}->{to} is a self-link"));
                    }
                }
                _ => {}
            }
        }
        if self.cycle && !self.events.iter().any(|e| matches!(e, ScriptEvent::Step(_))) {
            return Err(EngineError::Script { line: 0, msg: "a cycling script needs at least one step".into() });
        }
        Ok(())
    }
}
