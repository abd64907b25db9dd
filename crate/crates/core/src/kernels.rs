//! Google-operator kernels applied block by block without ever forming `S`
//! or `G`, the normalization-free synchronous power method, and a dense
//! linear-system oracle for small graphs.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::webgraph::{build_transition_block, partition_rows, AdjacencyGraph, TransitionBlock};

/// Largest graph `dense_oracle` will materialize.
pub const ORACLE_MAX_N: usize = 2000;

pub const DEFAULT_ALPHA: f64 = 0.85;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("graph of {n} pages exceeds the dense oracle limit of {ORACLE_MAX_N}")]
    TooLarge { n: usize },
    #[error("singular system")]
    Singular,
}

/// Which per-block update a UE applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `x_i <- G_i x`
    Power,
    /// `x_i <- R_i x + b_i`
    Linear,
}

/// Relaxation parameter and teleportation distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GoogleParams {
    alpha: f64,
    n: usize,
    teleport: Option<Arc<[f64]>>,
}

impl GoogleParams {
    /// `v = e/n`.
    pub fn uniform(n: usize, alpha: f64) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        if n == 0 {
            return Err(KernelError::Parameter("dimension must be at least 1".into()));
        }
        Ok(Self { alpha, n, teleport: None })
    }

    pub fn with_teleport(alpha: f64, v: Vec<f64>) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        if v.is_empty() {
            return Err(KernelError::Parameter("teleportation vector is empty".into()));
        }
        if let Some(bad) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(KernelError::Parameter(format!("teleportation entry {bad} is not a probability")));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(KernelError::Parameter(format!("teleportation vector sums to {sum}, not 1")));
        }
        Ok(Self { alpha, n: v.len(), teleport: Some(v.into()) })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_uniform(&self) -> bool {
        self.teleport.is_none()
    }

    #[inline]
    pub fn teleport(&self, i: usize) -> f64 {
        match &self.teleport {
            Some(v) => v[i],
            None => 1.0 / self.n as f64,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), KernelError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(KernelError::Parameter(format!("alpha {alpha} outside (0, 1)")))
    }
}

/// `α Pᵀx + α (dᵀx) w + (1−α)(eᵀx) v`, restricted to the block's rows.
pub fn apply_google_block(block: &TransitionBlock, x: &[f64], params: &GoogleParams) -> Result<Vec<f64>, KernelError> {
    let mut out = vec![0.0; block.rows()];
    apply_block_into(block, x, params, Kernel::Power, &mut out)?;
    Ok(out)
}

/// `α Pᵀx + α (dᵀx) w + (1−α) v`, i.e. `R_i x + b_i`.
pub fn apply_linear_block(block: &TransitionBlock, x: &[f64], params: &GoogleParams) -> Result<Vec<f64>, KernelError> {
    let mut out = vec![0.0; block.rows()];
    apply_block_into(block, x, params, Kernel::Linear, &mut out)?;
    Ok(out)
}

/// Writes the selected kernel's output for the block's rows into `out`.
///
/// Every row sum runs over ascending columns and the two scalar corrections
/// are summed over the full `x` in index order, so the same row computed from
/// any partition of the same `x` is bitwise identical.
pub fn apply_block_into(
    block: &TransitionBlock,
    x: &[f64],
    params: &GoogleParams,
    kernel: Kernel,
    out: &mut [f64],
) -> Result<(), KernelError> {
    let n = block.n();
    if x.len() != n || params.n() != n {
        return Err(KernelError::Shape(format!(
            "block dimension {n}, vector length {}, parameter dimension {}",
            x.len(),
            params.n()
        )));
    }
    if out.len() != block.rows() {
        return Err(KernelError::Shape(format!("output length {} for a block of {} rows", out.len(), block.rows())));
    }

    let alpha = params.alpha();
    let dangling_mass: f64 = block.dangling_pages().iter().map(|&c| x[c]).sum();
    let dangling_share = alpha * dangling_mass / n as f64;
    let teleport_scale = match kernel {
        Kernel::Power => (1.0 - alpha) * x.iter().sum::<f64>(),
        Kernel::Linear => 1.0 - alpha,
    };

    let start = block.row_range().start;
    for (local, slot) in out.iter_mut().enumerate() {
        let link_sum: f64 = block.row(local).map(|(c, w)| w * x[c]).sum();
        *slot = alpha * link_sum + dangling_share + teleport_scale * params.teleport(start + local);
    }
    Ok(())
}

/// Whole-graph operator, a single block covering every row.
#[derive(Debug, Clone)]
pub struct GoogleOperator {
    block: TransitionBlock,
    params: GoogleParams,
}

impl GoogleOperator {
    pub fn new(graph: &AdjacencyGraph, params: GoogleParams) -> Result<Self, KernelError> {
        if graph.n() != params.n() {
            return Err(KernelError::Shape(format!(
                "graph has {} pages, parameters have dimension {}",
                graph.n(),
                params.n()
            )));
        }
        let partition = partition_rows(graph.n(), 1).map_err(|e| KernelError::Parameter(e.to_string()))?;
        let block = build_transition_block(graph, &partition, 0).map_err(|e| KernelError::Parameter(e.to_string()))?;
        Ok(Self { block, params })
    }

    pub fn params(&self) -> &GoogleParams {
        &self.params
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        apply_google_block(&self.block, x, &self.params)
    }

    pub fn apply_linear(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        apply_linear_block(&self.block, x, &self.params)
    }

    /// `‖x − Gx‖₁`.
    pub fn fixed_point_residual(&self, x: &[f64]) -> Result<f64, KernelError> {
        residual_l1(x, &self.apply(x)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖x(t+1) − x(t)‖₁` for every step taken.
    pub residual_history: Vec<f64>,
    pub wall_time: f64,
    pub converged: bool,
}

/// Normalization-free power method `x(t+1) = G x(t)`.
pub fn run_sync(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    tolerance: f64,
    max_iters: usize,
    x0: Option<&[f64]>,
) -> Result<SyncResult, KernelError> {
    run_sync_observed(graph, params, tolerance, max_iters, x0, |_, _| {})
}

/// `run_sync`, calling `observe(t, x(t))` for the start vector and every
/// iterate.
pub fn run_sync_observed(
    graph: &AdjacencyGraph,
    params: &GoogleParams,
    tolerance: f64,
    max_iters: usize,
    x0: Option<&[f64]>,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<SyncResult, KernelError> {
    if !(tolerance > 0.0) {
        return Err(KernelError::Parameter(format!("tolerance {tolerance} must be positive")));
    }
    let started = Instant::now();
    let op = GoogleOperator::new(graph, params.clone())?;
    let n = graph.n();
    let mut x = match x0 {
        Some(x0) if x0.len() != n => {
            return Err(KernelError::Shape(format!("start vector length {} for {n} pages", x0.len())))
        }
        Some(x0) => x0.to_vec(),
        None => vec![1.0 / n as f64; n],
    };
    observe(0, &x);

    let mut next = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    while history.len() < max_iters {
        apply_block_into(&op.block, &x, &op.params, Kernel::Power, &mut next)?;
        let residual = residual_l1(&next, &x)?;
        std::mem::swap(&mut x, &mut next);
        history.push(residual);
        observe(history.len(), &x);
        if residual < tolerance {
            converged = true;
            break;
        }
    }

    Ok(SyncResult {
        x,
        iterations: history.len(),
        residual_history: history,
        wall_time: started.elapsed().as_secs_f64(),
        converged,
    })
}

pub fn residual_l1(a: &[f64], b: &[f64]) -> Result<f64, KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// `x / ‖x‖₁`.
pub fn renormalize(x: &[f64]) -> Result<Vec<f64>, KernelError> {
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(KernelError::Degenerate(format!("cannot renormalize a vector of 1-norm {norm}")));
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// Solves `(I − αS) x = (1−α) v` on a dense copy of the matrix.
///
/// The tolerance is only used to sanity-check that the solution sums to 1.
pub fn dense_oracle(graph: &AdjacencyGraph, params: &GoogleParams, tolerance: f64) -> Result<Vec<f64>, KernelError> {
    let n = graph.n();
    if n > ORACLE_MAX_N {
        return Err(KernelError::TooLarge { n });
    }
    if params.n() != n {
        return Err(KernelError::Shape(format!("graph has {n} pages, parameters have dimension {}", params.n())));
    }
    let alpha = params.alpha();

    // S = Pᵀ + w dᵀ, column by column.
    let mut system = DMatrix::<f64>::identity(n, n);
    for src in 0..n {
        let degree = graph.out_degree(src);
        if degree == 0 {
            for row in 0..n {
                system[(row, src)] -= alpha / n as f64;
            }
        } else {
            for &dst in graph.neighbors(src) {
                system[(dst, src)] -= alpha / degree as f64;
            }
        }
    }
    let rhs = DVector::from_fn(n, |i, _| (1.0 - alpha) * params.teleport(i));
    let solution = system.lu().solve(&rhs).ok_or(KernelError::Singular)?;

    let sum: f64 = solution.iter().sum();
    if (sum - 1.0).abs() > tolerance.max(1e-9) {
        return Err(KernelError::Degenerate(format!("oracle solution sums to {sum}")));
    }
    Ok(solution.iter().map(|v| v / sum).collect())
}
