//! Asynchronous block iteration.
//!
//! Each of `p` computing UEs owns one row block of the rank vector. A UE
//! keeps a full-length view assembled from its own latest fragment and the
//! freshest fragments received from peers, and repeatedly recomputes its
//! block from that view with either the power or the linear kernel. The
//! iteration counts of the peer fragments a UE holds when it steps are the
//! realized delays `τ`.
//!
//! Two drivers share this core: a single-threaded simulator advancing
//! virtual time under a [`Schedule`], and a concurrent runner with one
//! thread per UE plus a monitor, talking over a [`crate::transport`].

mod concurrent;
mod schedule;
mod sim;
mod trace;

use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::kernels::{apply_block_into, renormalize, residual_l1, GoogleOperator, GoogleParams, Kernel, KernelError};
use crate::termination::ProtocolError;
use crate::transport::TransportError;
use crate::webgraph::{build_all_blocks, AdjacencyGraph, GraphError, Partition, TransitionBlock};
use crate::UeId;

pub use concurrent::{run_concurrent, ConcurrentTransport};
pub use schedule::{Schedule, ScheduleMode, Script, ScriptEvent};
pub use sim::{simulate, simulate_deterministic, simulate_with_endpoints, SimOptions, SimOutcome};
pub use trace::{EventKind, StepView, Trace, TraceEvent};

pub const DEFAULT_MAX_ITERS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Termination(#[from] ProtocolError),
    #[error("UE {ue}: transport failure: {source}")]
    Transport {
        ue: UeId,
        #[source]
        source: TransportError,
    },
    #[error("script line {line}: {msg}")]
    Script { line: usize, msg: String },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("UE {0} panicked")]
    Panicked(UeId),
}

/// Contiguous piece of the rank vector produced by one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub sender: UeId,
    /// The sender's iteration count when it produced these values.
    pub local_iter: u64,
    pub start: usize,
    pub values: Arc<[f64]>,
}

impl Fragment {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.values.len()
    }
}

/// Run parameters shared by every driver.
#[derive(Debug, Clone, PartialEq)]
pub struct AsyncConfig {
    pub kernel: Kernel,
    /// Local convergence threshold on a UE's own fragment residual.
    pub tolerance: f64,
    pub pc_max_ue: u32,
    pub pc_max_monitor: u32,
    /// Per-UE iteration cap; reaching it ends the run unconverged.
    pub max_iters: u64,
    pub x0: Option<Vec<f64>>,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Power,
            tolerance: 1e-6,
            pc_max_ue: 1,
            pc_max_monitor: 1,
            max_iters: DEFAULT_MAX_ITERS,
            x0: None,
        }
    }
}

impl AsyncConfig {
    pub(crate) fn validate(&self, n: usize) -> Result<(), EngineError> {
        if !(self.tolerance > 0.0) {
            return Err(EngineError::Config(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.pc_max_ue == 0 || self.pc_max_monitor == 0 {
            return Err(EngineError::Config("persistence thresholds must be at least 1".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(EngineError::Config(format!("start vector length {} for {n} pages", x0.len())));
            }
        }
        Ok(())
    }

    pub(crate) fn start_vector(&self, n: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![1.0 / n as f64; n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncResult {
    /// Each UE's own freshest fragment, concatenated; renormalized for the
    /// power kernel.
    pub x: Vec<f64>,
    pub per_ue_iters: Vec<u64>,
    /// Seconds from start to each UE's halt.
    pub per_ue_time: Vec<f64>,
    /// `import_matrix[i][j]`: distinct fragments of `j` consumed by `i`;
    /// the diagonal holds each UE's own iteration count.
    pub import_matrix: Vec<Vec<u64>>,
    /// `‖x − Gx‖₁` of the assembled vector.
    pub global_residual: f64,
    pub converged: bool,
}

impl AsyncResult {
    /// Mean over peers `j ≠ i` of `import[i][j] / iters[j]`, in percent.
    pub fn completed_import_percentages(&self) -> Vec<f64> {
        completed_import_percentages(&self.import_matrix, &self.per_ue_iters)
    }
}

pub fn completed_import_percentages(import_matrix: &[Vec<u64>], per_ue_iters: &[u64]) -> Vec<f64> {
    let p = per_ue_iters.len();
    (0..p)
        .map(|i| {
            if p < 2 {
                return 100.0;
            }
            let total: f64 = (0..p)
                .filter(|&j| j != i)
                .map(|j| match per_ue_iters[j] {
                    0 => 1.0,
                    iters => import_matrix[i][j] as f64 / iters as f64,
                })
                .sum();
            100.0 * total / (p - 1) as f64
        })
        .collect()
}

/// Working state of one computing UE.
#[derive(Debug, Clone)]
pub struct UeState {
    id: UeId,
    own: Range<usize>,
    view: Vec<f64>,
    local_iter: u64,
    last_seen: Vec<u64>,
    import_counts: Vec<u64>,
    converged: bool,
    scratch: Vec<f64>,
}

impl UeState {
    /// Fresh state whose view is `x0`; every peer's start fragment counts as
    /// iteration 0.
    pub fn new(id: UeId, partition: &Partition, x0: &[f64]) -> Result<Self, EngineError> {
        let p = partition.p();
        if id as usize >= p {
            return Err(EngineError::Config(format!("UE {id} out of range for {p} UEs")));
        }
        if x0.len() != partition.n() {
            return Err(EngineError::Config(format!("start vector length {} for {} pages", x0.len(), partition.n())));
        }
        let own = partition.range(id);
        Ok(Self {
            id,
            scratch: vec![0.0; own.len()],
            own,
            view: x0.to_vec(),
            local_iter: 0,
            last_seen: vec![0; p],
            import_counts: vec![0; p],
            converged: false,
        })
    }

    pub fn id(&self) -> UeId {
        self.id
    }

    pub fn view(&self) -> &[f64] {
        &self.view
    }

    pub fn own_values(&self) -> &[f64] {
        &self.view[self.own.clone()]
    }

    pub fn own_range(&self) -> Range<usize> {
        self.own.clone()
    }

    pub fn local_iter(&self) -> u64 {
        self.local_iter
    }

    /// Iteration count of the freshest fragment held from each UE.
    pub fn last_seen(&self) -> &[u64] {
        &self.last_seen
    }

    pub fn import_counts(&self) -> &[u64] {
        &self.import_counts
    }

    /// Result of the most recent local convergence test.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Recomputes the owned block from the current view.
    ///
    /// Returns the new fragment and the 1-norm change of the owned block.
    pub fn step(
        &mut self,
        block: &TransitionBlock,
        params: &GoogleParams,
        kernel: Kernel,
        tolerance: f64,
    ) -> Result<(Fragment, f64), EngineError> {
        if block.row_range() != self.own {
            return Err(EngineError::Config(format!(
                "block rows {:?} do not match UE {} range {:?}",
                block.row_range(),
                self.id,
                self.own
            )));
        }
        apply_block_into(block, &self.view, params, kernel, &mut self.scratch)?;
        let residual = residual_l1(&self.scratch, &self.view[self.own.clone()])?;
        self.view[self.own.clone()].copy_from_slice(&self.scratch);
        self.local_iter += 1;
        self.last_seen[self.id as usize] = self.local_iter;
        self.import_counts[self.id as usize] = self.local_iter;
        self.converged = residual < tolerance;
        let fragment = Fragment {
            sender: self.id,
            local_iter: self.local_iter,
            start: self.own.start,
            values: self.scratch.as_slice().into(),
        };
        Ok((fragment, residual))
    }

    /// Installs a peer fragment if it is newer than what is held. Returns
    /// whether it was accepted.
    pub fn ingest(&mut self, frag: &Fragment, partition: &Partition) -> Result<bool, EngineError> {
        let sender = frag.sender as usize;
        if frag.sender == self.id {
            return Err(EngineError::Protocol(format!("UE {} received its own fragment", self.id)));
        }
        if sender >= partition.p() || frag.range() != partition.range(frag.sender) {
            return Err(EngineError::Protocol(format!(
                "fragment from UE {} covers {:?}, which is not its block",
                frag.sender,
                frag.range()
            )));
        }
        if frag.local_iter <= self.last_seen[sender] {
            return Ok(false);
        }
        self.view[frag.range()].copy_from_slice(&frag.values);
        self.last_seen[sender] = frag.local_iter;
        self.import_counts[sender] += 1;
        Ok(true)
    }
}

/// Concatenates every UE's own block, renormalizing for the power kernel,
/// and measures the fixed-point residual.
pub(crate) fn assemble(
    ues: &[UeState],
    graph_op: &GoogleOperator,
    kernel: Kernel,
) -> Result<(Vec<f64>, f64), EngineError> {
    let mut x = Vec::with_capacity(graph_op.params().n());
    for ue in ues {
        x.extend_from_slice(ue.own_values());
    }
    if kernel == Kernel::Power {
        x = renormalize(&x)?;
    }
    let residual = graph_op.fixed_point_residual(&x)?;
    Ok((x, residual))
}

/// Deterministic asynchronous run under `schedule` with in-process
/// transport.
pub fn run_async(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
    schedule: &Schedule,
) -> Result<AsyncResult, EngineError> {
    let options = SimOptions { record_trace: false, record_iterates: false };
    Ok(simulate(graph, params, partition, config, schedule, options)?.result)
}

pub(crate) fn prepare(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    partition: &Partition,
    config: &AsyncConfig,
) -> Result<(Vec<TransitionBlock>, GoogleOperator), EngineError> {
    if graph.n() != partition.n() {
        return Err(EngineError::Config(format!(
            "graph has {} pages but the partition covers {}",
            graph.n(),
            partition.n()
        )));
    }
    config.validate(graph.n())?;
    let blocks = build_all_blocks(graph, partition)?;
    let op = GoogleOperator::new(graph, params.clone())?;
    Ok((blocks, op))
}
