//! One thread per UE plus a monitor thread, exchanging messages over a real
//! transport. Nothing is scheduled: delays are whatever the OS produces.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use super::{assemble, prepare, AsyncConfig, AsyncResult, EngineError, UeState};
use crate::kernels::GoogleParams;
use crate::termination::{ControlKind, ControlMessage, MonitorState, UeProtocolState};
use crate::transport::tcp::{tcp_mesh, DEFAULT_SEND_TIMEOUT};
use crate::transport::{in_process_mesh, Endpoint, Message};
use crate::webgraph::{AdjacencyGraph, Partition, TransitionBlock};
use crate::UeId;

const MONITOR_POLL: Duration = Duration::from_millis(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcurrentTransport {
    InProcess,
    /// Loopback TCP; endpoint `i` listens on `base_port + i`, or on an
    /// ephemeral port.
    Tcp {
        base_port: Option<u16>,
    },
}

pub fn run_concurrent(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
    transport: ConcurrentTransport,
) -> Result<AsyncResult, EngineError> {
    let p = partition.p();
    let (blocks, op) = prepare(graph, params, partition, config)?;
    let x0 = config.start_vector(graph.n());

    let mut endpoints: Vec<Box<dyn Endpoint>> = match transport {
        ConcurrentTransport::InProcess => {
            in_process_mesh(p + 1).into_iter().map(|ep| Box::new(ep) as Box<dyn Endpoint>).collect()
        }
        ConcurrentTransport::Tcp { base_port } => tcp_mesh(p + 1, base_port, DEFAULT_SEND_TIMEOUT)
            .map_err(|source| EngineError::Transport { ue: p as UeId, source })?
            .into_iter()
            .map(|ep| Box::new(ep) as Box<dyn Endpoint>)
            .collect(),
    };

    let abort = AtomicBool::new(false);
    let started = Instant::now();

    // Endpoints outlive every thread so late sends to a halted peer still
    // land somewhere.
    let (ue_results, monitor_result) = thread::scope(|scope| {
        let (monitor_ep, ue_eps) = endpoints.split_last_mut().expect("p + 1 endpoints");
        let handles: Vec<_> = ue_eps
            .iter_mut()
            .zip(&blocks)
            .enumerate()
            .map(|(i, (ep, block))| {
                let (abort, x0) = (&abort, &x0);
                scope.spawn(move || {
                    let out = ue_loop(i as UeId, ep.as_mut(), block, params, partition, config, x0, abort, started);
                    if out.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    out
                })
            })
            .collect();
        let monitor = {
            let abort = &abort;
            scope.spawn(move || {
                let out = monitor_loop(monitor_ep.as_mut(), p, config, abort);
                if out.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                out
            })
        };
        let ue_results: Vec<_> = handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.join().unwrap_or(Err(EngineError::Panicked(i as UeId))))
            .collect();
        let monitor_result = monitor.join().unwrap_or(Err(EngineError::Panicked(p as UeId)));
        (ue_results, monitor_result)
    });

    let converged = monitor_result?;
    let mut ues = Vec::with_capacity(p);
    let mut per_ue_time = Vec::with_capacity(p);
    for res in ue_results {
        let (ue, time) = res?;
        ues.push(ue);
        per_ue_time.push(time);
    }
    let (x, global_residual) = assemble(&ues, &op, config.kernel)?;
    Ok(AsyncResult {
        x,
        per_ue_iters: ues.iter().map(UeState::local_iter).collect(),
        per_ue_time,
        import_matrix: ues.iter().map(|ue| ue.import_counts().to_vec()).collect(),
        global_residual,
        converged,
    })
}

#[allow(clippy::too_many_arguments)]
fn ue_loop(
    id: UeId,
    ep: &mut dyn Endpoint,
    block: &TransitionBlock,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
    x0: &[f64],
    abort: &AtomicBool,
    started: Instant,
) -> Result<(UeState, f64), EngineError> {
    let p = partition.p() as UeId;
    let monitor = p;
    let mut ue = UeState::new(id, partition, x0)?;
    let mut protocol = UeProtocolState::new(config.pc_max_ue)?;
    let transport_err = |source| EngineError::Transport { ue: id, source };

    'run: loop {
        if abort.load(Ordering::SeqCst) {
            break;
        }
        for msg in ep.poll() {
            match msg {
                Message::Fragment(frag) => {
                    ue.ingest(&frag, partition)?;
                }
                Message::Control(ControlMessage { kind: ControlKind::Stop, .. }) => break 'run,
                Message::Control(ctrl) => {
                    return Err(EngineError::Protocol(format!("UE {id} received {:?} from {}", ctrl.kind, ctrl.sender)))
                }
            }
        }

        let (frag, _) = ue.step(block, params, config.kernel, config.tolerance)?;
        for to in (0..p).filter(|&j| j != id) {
            ep.send(to, Message::Fragment(frag.clone())).map_err(transport_err)?;
        }
        if let Some(kind) = protocol.on_check(ue.converged()) {
            ep.send(monitor, Message::Control(ControlMessage { kind, sender: id })).map_err(transport_err)?;
        }
        if ue.local_iter() >= config.max_iters {
            debug!("UE {id} reached the iteration cap");
            abort.store(true, Ordering::SeqCst);
            break;
        }
        if p as usize > 1 {
            thread::yield_now();
        }
    }
    Ok((ue, started.elapsed().as_secs_f64()))
}

/// Returns whether STOP was sent.
fn monitor_loop(
    ep: &mut dyn Endpoint,
    p: usize,
    config: &AsyncConfig,
    abort: &AtomicBool,
) -> Result<bool, EngineError> {
    let id = p as UeId;
    let mut monitor = MonitorState::new(p, config.pc_max_monitor)?;
    while !abort.load(Ordering::SeqCst) {
        let mut stop = false;
        for msg in ep.recv_timeout(MONITOR_POLL) {
            match msg {
                Message::Control(ctrl) if !stop => stop = monitor.on_message(ctrl)?,
                Message::Control(_) => {}
                Message::Fragment(frag) => {
                    return Err(EngineError::Protocol(format!("monitor received a fragment from UE {}", frag.sender)))
                }
            }
        }
        if stop || monitor.on_tick() {
            for ue in 0..id {
                let msg = Message::Control(ControlMessage { kind: ControlKind::Stop, sender: id });
                ep.send(ue, msg).map_err(|source| EngineError::Transport { ue: id, source })?;
            }
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dense_oracle, Kernel};
    use crate::webgraph::{generate_synthetic, partition_rows};

    fn check(transport: ConcurrentTransport) {
        let g = generate_synthetic(200, 5.0, 0.1, 11).unwrap();
        let params = GoogleParams::uniform(200, 0.85).unwrap();
        let part = partition_rows(200, 4).unwrap();
        let cfg = AsyncConfig {
            kernel: Kernel::Power,
            tolerance: 1e-9,
            pc_max_ue: 3,
            pc_max_monitor: 3,
            ..Default::default()
        };
        let res = run_concurrent(&g, &params, &part, &cfg, transport).unwrap();
        assert!(res.converged);
        let oracle = dense_oracle(&g, &params, 1e-12).unwrap();
        let err: f64 = res.x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum();
        assert!(err < 1e-5, "error {err}");
        assert_eq!(res.per_ue_iters.len(), 4);
    }

    #[test]
    fn threads_in_process_converge() {
        check(ConcurrentTransport::InProcess);
    }

    #[test]
    fn threads_over_tcp_converge() {
        check(ConcurrentTransport::Tcp { base_port: None });
    }

    #[test]
    fn cap_ends_unconverged() {
        let g = generate_synthetic(50, 4.0, 0.1, 1).unwrap();
        let params = GoogleParams::uniform(50, 0.85).unwrap();
        let part = partition_rows(50, 2).unwrap();
        let cfg = AsyncConfig { tolerance: 1e-300, max_iters: 20, ..Default::default() };
        let res = run_concurrent(&g, &params, &part, &cfg, ConcurrentTransport::InProcess).unwrap();
        assert!(!res.converged);
        assert!(res.per_ue_iters.iter().any(|&k| k == 20));
    }
}
