//! Single-threaded virtual-time driver.
//!
//! Under timed schedules (lockstep, seeded-random) every live UE steps once
//! per tick. A message sent during tick `T` with delay `d` is delivered at
//! the start of tick `T + 1 + d`, before any UE steps; the monitor's replies
//! take effect within the same delivery phase when their delay is 0. Under a
//! script, each event advances virtual time by one and control messages
//! travel instantly.
//!
//! All messages pass through real transport endpoints (ids `0..p` for the
//! UEs, `p` for the monitor); each is received before the next is sent, so
//! the outcome does not depend on the transport's timing.

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    assemble, prepare, AsyncConfig, AsyncResult, EngineError, EventKind, Fragment, Schedule, ScheduleMode, Script,
    ScriptEvent, Trace, UeState,
};
use crate::kernels::{GoogleOperator, GoogleParams};
use crate::termination::{ControlKind, ControlMessage, MonitorState, UeProtocolState};
use crate::transport::{in_process_mesh, Endpoint, Message, TransportError};
use crate::webgraph::{AdjacencyGraph, Partition, TransitionBlock};
use crate::UeId;

const TRANSMIT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub record_trace: bool,
    /// Keep the concatenated own blocks (before any renormalization) after
    /// every tick in which some UE stepped, or after every step under a
    /// script.
    pub record_iterates: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { record_trace: true, record_iterates: false }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub result: AsyncResult,
    pub trace: Trace,
    /// Starts with `x0`; empty unless requested.
    pub iterates: Vec<Vec<f64>>,
    /// Virtual time at the end of the run.
    pub virtual_time: u64,
}

pub fn simulate(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
    schedule: &Schedule,
    options: SimOptions,
) -> Result<SimOutcome, EngineError> {
    let endpoints =
        in_process_mesh(partition.p() + 1).into_iter().map(|ep| Box::new(ep) as Box<dyn Endpoint>).collect();
    simulate_with_endpoints(graph, params, partition, config, schedule, options, endpoints)
}

/// Replays an explicit script, recording the full trace.
pub fn simulate_deterministic(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
    script: Script,
) -> Result<SimOutcome, EngineError> {
    simulate(graph, params, partition, config, &Schedule::scripted(script), SimOptions::default())
}

/// `endpoints[i]` must have id `i`, with the monitor at index `p`.
pub fn simulate_with_endpoints(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
    schedule: &Schedule,
    options: SimOptions,
    endpoints: Vec<Box<dyn Endpoint>>,
) -> Result<SimOutcome, EngineError> {
    let p = partition.p();
    schedule.validate(p)?;
    if endpoints.len() != p + 1 || endpoints.iter().enumerate().any(|(i, ep)| ep.id() as usize != i) {
        return Err(EngineError::Config(format!("need endpoints with ids 0..={p}")));
    }
    let (blocks, op) = prepare(graph, params, partition, config)?;
    let x0 = config.start_vector(graph.n());

    let links = match &schedule.mode {
        ScheduleMode::Scripted(script) => {
            Links::Scripted { script: script.clone(), queues: vec![VecDeque::new(); p * p] }
        }
        mode => Links::Timed {
            rng: ChaCha8Rng::seed_from_u64(schedule.seed),
            in_flight: BTreeMap::new(),
            seq: 0,
            last_dropped: vec![false; p * p],
            control_tail: vec![0; 2 * p],
            delay_bound: if *mode == ScheduleMode::Lockstep { 0 } else { schedule.delay_bound },
            drop_rate: if *mode == ScheduleMode::Lockstep { 0.0 } else { schedule.drop_rate },
        },
    };

    let ues = (0..p as UeId).map(|i| UeState::new(i, partition, &x0)).collect::<Result<Vec<_>, _>>()?;
    let mut sim = Sim {
        blocks,
        op,
        params,
        partition,
        config,
        p,
        ues,
        protocols: vec![UeProtocolState::new(config.pc_max_ue)?; p],
        monitor: MonitorState::new(p, config.pc_max_monitor)?,
        mailboxes: vec![Vec::new(); p],
        stop_received: vec![false; p],
        halted: vec![false; p],
        halt_time: vec![None; p],
        endpoints,
        trace: options.record_trace.then(Trace::default),
        iterates: options.record_iterates.then(|| vec![x0]),
        now: 0,
        started: Instant::now(),
        exhausted: false,
    };

    match links {
        Links::Timed { .. } => sim.run_timed(links)?,
        Links::Scripted { .. } => sim.run_scripted(links)?,
    }
    sim.finish()
}

enum Links {
    Timed {
        rng: ChaCha8Rng,
        /// Keyed by `(arrival, sequence)`.
        in_flight: BTreeMap<(u64, u64), (UeId, UeId, Message)>,
        seq: u64,
        last_dropped: Vec<bool>,
        /// Latest arrival per control link: `i` is UE→monitor, `p + i` is
        /// monitor→UE.
        control_tail: Vec<u64>,
        delay_bound: u32,
        drop_rate: f64,
    },
    Scripted {
        script: Script,
        /// Fragments in flight per `from * p + to`.
        queues: Vec<VecDeque<Fragment>>,
    },
}

impl Links {
    fn draw_delay(&mut self) -> u64 {
        match self {
            Links::Timed { rng, delay_bound, .. } if *delay_bound > 0 => rng.random_range(0..=*delay_bound) as u64,
            _ => 0,
        }
    }

    fn enqueue(&mut self, arrival: u64, from: UeId, to: UeId, msg: Message) {
        if let Links::Timed { in_flight, seq, .. } = self {
            in_flight.insert((arrival, *seq), (from, to, msg));
            *seq += 1;
        }
    }
}

struct Sim<'a> {
    blocks: Vec<TransitionBlock>,
    op: GoogleOperator,
    params: &'a GoogleParams,
    partition: &'a Partition,
    config: &'a AsyncConfig,
    p: usize,
    ues: Vec<UeState>,
    protocols: Vec<UeProtocolState>,
    monitor: MonitorState,
    /// Arrived, not yet consumed; at most one fragment per sender.
    mailboxes: Vec<Vec<Fragment>>,
    stop_received: Vec<bool>,
    halted: Vec<bool>,
    halt_time: Vec<Option<f64>>,
    endpoints: Vec<Box<dyn Endpoint>>,
    trace: Option<Trace>,
    iterates: Option<Vec<Vec<f64>>>,
    now: u64,
    started: Instant,
    exhausted: bool,
}

impl Sim<'_> {
    fn monitor_id(&self) -> UeId {
        self.p as UeId
    }

    fn record(&mut self, ue: UeId, kind: EventKind, peer: Option<UeId>, local_iter: u64, residual: Option<f64>) {
        if let Some(trace) = &mut self.trace {
            trace.push(self.now, ue, kind, peer, local_iter, residual);
        }
    }

    fn record_iterate(&mut self) {
        if let Some(iterates) = &mut self.iterates {
            iterates.push(self.ues.iter().flat_map(|ue| ue.own_values().iter().copied()).collect());
        }
    }

    fn done(&self) -> bool {
        self.exhausted || self.halted.iter().all(|&h| h)
    }

    /// Sends through the transport and waits until the receiver has it.
    fn transmit(&mut self, from: UeId, to: UeId, msg: Message) -> Result<Vec<Message>, EngineError> {
        self.endpoints[from as usize].send(to, msg).map_err(|source| EngineError::Transport { ue: from, source })?;
        let deadline = Instant::now() + TRANSMIT_TIMEOUT;
        loop {
            let got = self.endpoints[to as usize].recv_timeout(Duration::from_millis(100));
            if !got.is_empty() {
                return Ok(got);
            }
            if Instant::now() >= deadline {
                return Err(EngineError::Transport {
                    ue: to,
                    source: TransportError::LinkFailed { peer: from, reason: "message never arrived".into() },
                });
            }
        }
    }

    fn deliver(&mut self, from: UeId, to: UeId, msg: Message, links: &mut Links) -> Result<(), EngineError> {
        for msg in self.transmit(from, to, msg)? {
            match msg {
                Message::Fragment(frag) => self.arrive_fragment(to, frag),
                Message::Control(ctrl) if to == self.monitor_id() => self.monitor_receive(ctrl, links)?,
                Message::Control(ControlMessage { kind: ControlKind::Stop, .. }) => {
                    self.stop_received[to as usize] = true;
                }
                Message::Control(ctrl) => {
                    return Err(EngineError::Protocol(format!("UE {to} received {:?} from {}", ctrl.kind, ctrl.sender)))
                }
            }
        }
        Ok(())
    }

    fn arrive_fragment(&mut self, to: UeId, frag: Fragment) {
        let mailbox = &mut self.mailboxes[to as usize];
        if let Some(pos) = mailbox.iter().position(|f| f.sender == frag.sender) {
            if mailbox[pos].local_iter >= frag.local_iter {
                let (sender, iter) = (frag.sender, frag.local_iter);
                self.record(to, EventKind::Stale, Some(sender), iter, None);
                return;
            }
            let old = mailbox.remove(pos);
            self.record(to, EventKind::Supersede, Some(old.sender), old.local_iter, None);
        }
        self.mailboxes[to as usize].push(frag);
    }

    fn monitor_receive(&mut self, msg: ControlMessage, links: &mut Links) -> Result<(), EngineError> {
        // Reports still in flight when STOP went out are moot.
        if self.monitor.stopped() {
            return Ok(());
        }
        if self.monitor.on_message(msg)? {
            self.broadcast_stop(links)?;
        }
        Ok(())
    }

    fn broadcast_stop(&mut self, links: &mut Links) -> Result<(), EngineError> {
        let monitor = self.monitor_id();
        for ue in 0..self.p as UeId {
            let stop = Message::Control(ControlMessage { kind: ControlKind::Stop, sender: monitor });
            self.record(monitor, EventKind::Stop, Some(ue), 0, None);
            match links {
                Links::Timed { .. } => {
                    let delay = links.draw_delay();
                    let arrival = {
                        let Links::Timed { control_tail, .. } = links else { unreachable!() };
                        let slot = &mut control_tail[self.p + ue as usize];
                        *slot = (*slot).max(self.now + delay);
                        *slot
                    };
                    links.enqueue(arrival, monitor, ue, stop);
                }
                Links::Scripted { .. } => self.deliver(monitor, ue, stop, links)?,
            }
        }
        Ok(())
    }

    fn halt(&mut self, ue: usize) {
        self.halted[ue] = true;
        self.halt_time[ue] = Some(self.started.elapsed().as_secs_f64());
        let iter = self.ues[ue].local_iter();
        self.record(ue as UeId, EventKind::Halt, None, iter, None);
    }

    /// Consume the mailbox, compute, send. Returns whether a step happened.
    fn step_ue(&mut self, i: usize, links: &mut Links) -> Result<bool, EngineError> {
        if self.halted[i] {
            return Ok(false);
        }
        if self.stop_received[i] {
            self.halt(i);
            return Ok(false);
        }
        let id = i as UeId;

        for frag in std::mem::take(&mut self.mailboxes[i]) {
            let accepted = self.ues[i].ingest(&frag, self.partition)?;
            let kind = if accepted { EventKind::Import } else { EventKind::Stale };
            self.record(id, kind, Some(frag.sender), frag.local_iter, None);
        }
        if self.trace.is_some() {
            for j in (0..self.p).filter(|&j| j != i) {
                let tau = self.ues[i].last_seen()[j];
                self.record(id, EventKind::Tau, Some(j as UeId), tau, None);
            }
        }

        let (frag, residual) =
            self.ues[i].step(&self.blocks[i], self.params, self.config.kernel, self.config.tolerance)?;
        self.record(id, EventKind::Step, None, frag.local_iter, Some(residual));
        self.send_fragment(id, frag, links);

        let locally_converged = self.ues[i].converged();
        if let Some(kind) = self.protocols[i].on_check(locally_converged) {
            let event = if kind == ControlKind::Converge { EventKind::Converge } else { EventKind::Diverge };
            let iter = self.ues[i].local_iter();
            let monitor = self.monitor_id();
            self.record(id, event, Some(monitor), iter, Some(residual));
            let msg = Message::Control(ControlMessage { kind, sender: id });
            match links {
                Links::Timed { .. } => {
                    let delay = links.draw_delay();
                    let arrival = {
                        let Links::Timed { control_tail, .. } = links else { unreachable!() };
                        let slot = &mut control_tail[i];
                        *slot = (*slot).max(self.now + 1 + delay);
                        *slot
                    };
                    links.enqueue(arrival, id, monitor, msg);
                }
                Links::Scripted { .. } => self.deliver(id, monitor, msg, links)?,
            }
        }

        if self.ues[i].local_iter() >= self.config.max_iters {
            self.exhausted = true;
        }
        Ok(true)
    }

    fn send_fragment(&mut self, from: UeId, frag: Fragment, links: &mut Links) {
        let p = self.p;
        for to in (0..p as UeId).filter(|&j| j != from) {
            let link = from as usize * p + to as usize;
            match links {
                Links::Timed { rng, last_dropped, drop_rate, .. } => {
                    if *drop_rate > 0.0 && !last_dropped[link] && rng.random_bool(*drop_rate) {
                        last_dropped[link] = true;
                        self.record(from, EventKind::Drop, Some(to), frag.local_iter, None);
                        continue;
                    }
                    last_dropped[link] = false;
                    let delay = links.draw_delay();
                    links.enqueue(self.now + 1 + delay, from, to, Message::Fragment(frag.clone()));
                }
                Links::Scripted { queues, .. } => queues[link].push_back(frag.clone()),
            }
            self.record(from, EventKind::Send, Some(to), frag.local_iter, None);
        }
    }

    fn run_timed(&mut self, mut links: Links) -> Result<(), EngineError> {
        loop {
            loop {
                let Links::Timed { in_flight, .. } = &mut links else { unreachable!() };
                let due = matches!(in_flight.first_key_value(), Some((&(arrival, _), _)) if arrival <= self.now);
                if !due {
                    break;
                }
                let (_, (from, to, msg)) = in_flight.pop_first().expect("checked non-empty");
                self.deliver(from, to, msg, &mut links)?;
            }

            let mut stepped = false;
            for i in 0..self.p {
                stepped |= self.step_ue(i, &mut links)?;
            }
            if stepped {
                self.record_iterate();
            }

            if !self.monitor.stopped() && self.monitor.on_tick() {
                self.broadcast_stop(&mut links)?;
            }
            if self.done() {
                return Ok(());
            }
            self.now += 1;
        }
    }

    fn run_scripted(&mut self, mut links: Links) -> Result<(), EngineError> {
        let Links::Scripted { script, .. } = &links else { unreachable!() };
        let script = script.clone();
        loop {
            let mut stepped = false;
            for event in &script.events {
                self.now += 1;
                match *event {
                    ScriptEvent::Step(ue) => {
                        if self.step_ue(ue as usize, &mut links)? {
                            stepped = true;
                            self.record_iterate();
                        }
                    }
                    ScriptEvent::Deliver { from, to } => {
                        if let Some(frag) = self.pop_in_flight(&mut links, from, to) {
                            self.deliver(from, to, Message::Fragment(frag), &mut links)?;
                        }
                    }
                    ScriptEvent::Drop { from, to } => {
                        if let Some(frag) = self.pop_in_flight(&mut links, from, to) {
                            self.record(from, EventKind::Drop, Some(to), frag.local_iter, None);
                        }
                    }
                    ScriptEvent::DeliverAll => {
                        for from in 0..self.p as UeId {
                            for to in (0..self.p as UeId).filter(|&t| t != from) {
                                while let Some(frag) = self.pop_in_flight(&mut links, from, to) {
                                    self.deliver(from, to, Message::Fragment(frag), &mut links)?;
                                }
                            }
                        }
                    }
                    ScriptEvent::Tick => {
                        if !self.monitor.stopped() && self.monitor.on_tick() {
                            self.broadcast_stop(&mut links)?;
                        }
                    }
                }
                if self.done() {
                    return Ok(());
                }
            }
            if !script.cycle || !stepped {
                return Ok(());
            }
        }
    }

    fn pop_in_flight(&self, links: &mut Links, from: UeId, to: UeId) -> Option<Fragment> {
        let Links::Scripted { queues, .. } = links else { return None };
        queues[from as usize * self.p + to as usize].pop_front()
    }

    fn finish(mut self) -> Result<SimOutcome, EngineError> {
        let end = self.started.elapsed().as_secs_f64();
        let (x, global_residual) = assemble(&self.ues, &self.op, self.config.kernel)?;
        let result = AsyncResult {
            x,
            per_ue_iters: self.ues.iter().map(UeState::local_iter).collect(),
            per_ue_time: self.halt_time.iter().map(|t| t.unwrap_or(end)).collect(),
            import_matrix: self.ues.iter().map(|ue| ue.import_counts().to_vec()).collect(),
            global_residual,
            converged: self.monitor.stopped(),
        };
        Ok(SimOutcome {
            result,
            trace: self.trace.take().unwrap_or_default(),
            iterates: self.iterates.take().unwrap_or_default(),
            virtual_time: self.now,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{run_sync, Kernel};
    use crate::webgraph::{generate_synthetic, parse_edge_list_str, partition_rows, ParseOptions};

    fn small() -> (AdjacencyGraph, GoogleParams) {
        let g = parse_edge_list_str("0 1\n0 2\n1 2\n2 0\n", ParseOptions::default()).unwrap();
        (g, GoogleParams::uniform(3, 0.85).unwrap())
    }

    #[test]
    fn lockstep_all_ues_agree_on_iterations() {
        let g = generate_synthetic(60, 4.0, 0.1, 8).unwrap();
        let params = GoogleParams::uniform(60, 0.85).unwrap();
        let part = partition_rows(60, 3).unwrap();
        let cfg = AsyncConfig { kernel: Kernel::Linear, tolerance: 1e-10, ..Default::default() };
        let res = simulate(&g, &params, &part, &cfg, &Schedule::lockstep(), SimOptions::default()).unwrap().result;
        assert!(res.converged);
        assert!(res.per_ue_iters.iter().all(|&k| k == res.per_ue_iters[0]));
        let sync = run_sync(&g, &params, 1e-300, res.per_ue_iters[0] as usize, None).unwrap();
        assert!(crate::kernels::residual_l1(&res.x, &sync.x).unwrap() < 1e-12);
    }

    #[test]
    fn second_step_before_exchange_uses_start_fragments() {
        let (g, params) = small();
        let part = partition_rows(3, 3).unwrap();
        let script = Script::new(vec![ScriptEvent::Step(0), ScriptEvent::Step(0), ScriptEvent::Step(1)]);
        let out = simulate_deterministic(&g, &params, &part, &AsyncConfig::default(), script).unwrap();
        let steps = out.trace.steps(3);
        assert_eq!(steps[1].ue, 0);
        assert_eq!(steps[1].t, 1);
        assert_eq!(steps[1].tau, vec![1, 0, 0]);
        assert_eq!(steps[2].tau, vec![0, 0, 0]);
        assert!(!out.result.converged);
    }

    #[test]
    fn scripted_delay_shows_in_tau() {
        let g = generate_synthetic(9, 2.0, 0.0, 3).unwrap();
        let params = GoogleParams::uniform(9, 0.85).unwrap();
        let part = partition_rows(9, 3).unwrap();
        let mut events = Vec::new();
        for round in 0..8 {
            events.extend([ScriptEvent::Step(0), ScriptEvent::Step(1), ScriptEvent::Step(2)]);
            for (from, to) in [(0, 1), (0, 2), (1, 0), (1, 2)] {
                events.push(ScriptEvent::Deliver { from, to });
            }
            if round >= 2 {
                events.push(ScriptEvent::Deliver { from: 2, to: 0 });
                events.push(ScriptEvent::Deliver { from: 2, to: 1 });
            }
        }
        let cfg = AsyncConfig { tolerance: 1e-14, ..Default::default() };
        let out = simulate_deterministic(&g, &params, &part, &cfg, Script::new(events)).unwrap();
        for step in out.trace.steps(3).iter().filter(|s| s.ue != 2 && s.t >= 3) {
            assert_eq!(step.t - step.tau[2], 2, "{step:?}");
            let other = 1 - step.ue as usize;
            assert_eq!(step.tau[other], step.t);
        }
    }

    #[test]
    fn dropped_then_superseded_fragment_lowers_imports() {
        let (g, params) = small();
        let part = partition_rows(3, 3).unwrap();
        let script = Script::new(vec![
            ScriptEvent::Step(0),
            ScriptEvent::Step(1),
            ScriptEvent::Step(2),
            ScriptEvent::Drop { from: 0, to: 1 },
            ScriptEvent::DeliverAll,
            ScriptEvent::Step(0),
            ScriptEvent::Step(1),
            ScriptEvent::Step(2),
            ScriptEvent::DeliverAll,
            ScriptEvent::Step(1),
        ]);
        let out = simulate_deterministic(&g, &params, &part, &AsyncConfig::default(), script).unwrap();
        let m = &out.result.import_matrix;
        assert_eq!(m[1][1], 3);
        assert_eq!(m[1][0], 1);
        assert!(m[1][0] < out.result.per_ue_iters[0]);
        assert_eq!(m[1][2], 2);
        assert_eq!(m[2][0], 1);
        assert_eq!(out.trace.of_kind(EventKind::Drop).count(), 1);
    }

    #[test]
    fn script_ids_are_validated() {
        let (g, params) = small();
        let part = partition_rows(3, 3).unwrap();
        let script = Script::new(vec![ScriptEvent::Step(3)]);
        assert!(matches!(
            simulate_deterministic(&g, &params, &part, &AsyncConfig::default(), script),
            Err(EngineError::Script { .. })
        ));
    }

    #[test]
    fn max_iters_ends_unconverged() {
        let g = generate_synthetic(30, 3.0, 0.1, 2).unwrap();
        let params = GoogleParams::uniform(30, 0.85).unwrap();
        let part = partition_rows(30, 2).unwrap();
        let cfg = AsyncConfig { tolerance: 1e-300, max_iters: 7, ..Default::default() };
        let res = run_async_plain(&g, &params, &part, &cfg);
        assert!(!res.converged);
        assert_eq!(res.per_ue_iters, vec![7, 7]);
    }

    fn run_async_plain(g: &AdjacencyGraph, params: &GoogleParams, part: &Partition, cfg: &AsyncConfig) -> AsyncResult {
        super::super::run_async(g, params, part, cfg, &Schedule::seeded(3, 2, 0.2).unwrap()).unwrap()
    }
}
