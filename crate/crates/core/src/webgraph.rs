//! Link structure of a web graph: ingestion, synthetic generation, row-block
//! partitioning and the per-UE slices of the transposed transition matrix.
//!
//! Pages are dense 0-based ids. The adjacency structure is binary, so
//! duplicate links collapse; self-links are ordinary edges and count toward
//! the out-degree.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use thiserror::Error;

use crate::UeId;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: vertex id {id} out of range for {n} pages")]
    Range { line: usize, id: u64, n: usize },
    #[error("edge {src}->{dst} out of range for {n} pages")]
    EdgeRange { src: usize, dst: usize, n: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether vertex ids in an edge list start at 0 or at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexBase {
    #[default]
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub base: IndexBase,
    /// Page count; when absent it is one past the largest id seen.
    pub declared_n: Option<usize>,
}

/// Binary adjacency structure in compressed sparse row form.
///
/// Row `i` lists the distinct out-neighbours of page `i` in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl AdjacencyGraph {
    /// Builds a graph from arbitrary `(src, dst)` pairs, sorting and
    /// collapsing duplicates.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(src, dst)) = edges.iter().find(|&&(s, d)| s >= n || d >= n) {
            return Err(GraphError::EdgeRange { src, dst, n });
        }
        edges.sort_unstable();
        edges.dedup();

        let mut offsets = vec![0usize; n + 1];
        for &(src, _) in &edges {
            offsets[src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = edges.into_iter().map(|(_, dst)| dst).collect();
        Ok(Self { n, offsets, targets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn neighbors(&self, page: usize) -> &[usize] {
        &self.targets[self.offsets[page]..self.offsets[page + 1]]
    }

    pub fn out_degree(&self, page: usize) -> usize {
        self.offsets[page + 1] - self.offsets[page]
    }

    pub fn is_dangling(&self, page: usize) -> bool {
        self.out_degree(page) == 0
    }

    /// Per-page dangling flags, the `d` vector.
    pub fn dangling(&self) -> Vec<bool> {
        (0..self.n).map(|i| self.is_dangling(i)).collect()
    }

    pub fn dangling_count(&self) -> usize {
        (0..self.n).filter(|&i| self.is_dangling(i)).count()
    }

    /// All edges in ascending `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |src| self.neighbors(src).iter().map(move |&dst| (src, dst)))
    }

    /// Writes the graph as a 0-based edge list, rows in ascending order.
    pub fn write_edge_list<W: Write>(&self, mut out: W, header: Option<&str>) -> std::io::Result<()> {
        if let Some(header) = header {
            for line in header.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        for (src, dst) in self.edges() {
            writeln!(out, "{src} {dst}")?;
        }
        out.flush()
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf, None).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("edge list is ASCII")
    }
}

/// Parses a whitespace-separated `src dst` edge list. Lines starting with
/// `#` and blank lines are skipped.
pub fn parse_edge_list<R: BufRead>(reader: R, options: ParseOptions) -> Result<AdjacencyGraph, GraphError> {
    let offset: u64 = match options.base {
        IndexBase::Zero => 0,
        IndexBase::One => 1,
    };
    let mut edges = Vec::new();
    let mut max_id: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (tokens.next(), tokens.next(), tokens.next()) else {
            return Err(GraphError::Parse { line: line_no, msg: format!("expected two vertex ids, got {trimmed:?}") });
        };
        let mut endpoint = |tok: &str| -> Result<usize, GraphError> {
            let raw: u64 = tok
                .parse()
                .map_err(|_| GraphError::Parse { line: line_no, msg: format!("invalid vertex id {tok:?}") })?;
            let id = raw.checked_sub(offset).ok_or(GraphError::Parse {
                line: line_no,
                msg: format!("vertex id {raw} below index base {offset}"),
            })?;
            let id = usize::try_from(id)
                .map_err(|_| GraphError::Parse { line: line_no, msg: format!("vertex id {raw} too large") })?;
            if let Some(n) = options.declared_n {
                if id >= n {
                    return Err(GraphError::Range { line: line_no, id: raw, n });
                }
            }
            max_id = Some(max_id.map_or(id, |m| m.max(id)));
            Ok(id)
        };
        let src = endpoint(a)?;
        let dst = endpoint(b)?;
        edges.push((src, dst));
    }

    let n = options.declared_n.unwrap_or_else(|| max_id.map_or(0, |m| m + 1));
    AdjacencyGraph::from_edges(n, edges)
}

pub fn parse_edge_list_str(text: &str, options: ParseOptions) -> Result<AdjacencyGraph, GraphError> {
    parse_edge_list(text.as_bytes(), options)
}

/// Random graph with a geometric out-degree model.
///
/// Each page is dangling with probability `dangling_fraction`; every other
/// page draws an out-degree `1 + Geometric(1/mean)` (mean `avg_out_degree`,
/// at least 1, capped at `n`) and links to that many distinct uniformly
/// chosen pages.
pub fn generate_synthetic(
    n: usize,
    avg_out_degree: f64,
    dangling_fraction: f64,
    seed: u64,
) -> Result<AdjacencyGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::Parameter("synthetic graph needs at least one page".into()));
    }
    if !(0.0..=1.0).contains(&dangling_fraction) {
        return Err(GraphError::Parameter(format!("dangling fraction {dangling_fraction} outside [0, 1]")));
    }
    if !(avg_out_degree >= 0.0) || !avg_out_degree.is_finite() {
        return Err(GraphError::Parameter(format!(
            "average out-degree {avg_out_degree} must be a finite non-negative number"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = avg_out_degree.max(1.0);
    let extra = Geometric::new(1.0 / mean).expect("success probability lies in (0, 1]");

    let mut edges = Vec::new();
    for src in 0..n {
        if rng.random_bool(dangling_fraction) {
            continue;
        }
        let degree = (1 + extra.sample(&mut rng)).min(n as u64) as usize;
        for dst in index::sample(&mut rng, n, degree) {
            edges.push((src, dst));
        }
    }
    AdjacencyGraph::from_edges(n, edges)
}

/// Balanced split of `[0, n)` into `p` consecutive blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    bounds: Vec<usize>,
}

/// Splits `n` rows into `p` consecutive blocks; the first `n mod p` blocks
/// get one extra row.
pub fn partition_rows(n: usize, p: usize) -> Result<Partition, GraphError> {
    if p == 0 || p > n {
        return Err(GraphError::Parameter(format!("cannot split {n} rows among {p} units of execution")));
    }
    let base = n / p;
    let remainder = n % p;
    let mut bounds = Vec::with_capacity(p + 1);
    bounds.push(0);
    for block in 0..p {
        let size = base + usize::from(block < remainder);
        bounds.push(bounds[block] + size);
    }
    Ok(Partition { n, bounds })
}

impl Partition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn range(&self, owner: UeId) -> Range<usize> {
        let owner = owner as usize;
        self.bounds[owner]..self.bounds[owner + 1]
    }

    pub fn block_len(&self, owner: UeId) -> usize {
        self.range(owner).len()
    }

    /// The UE owning global row `row`.
    pub fn owner_of(&self, row: usize) -> Option<UeId> {
        if row >= self.n {
            return None;
        }
        let block = self.bounds.partition_point(|&b| b <= row) - 1;
        Some(block as UeId)
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.bounds.windows(2).map(|w| w[0]..w[1])
    }
}

/// Rows `row_range` of `Pᵀ`, stored sparsely: entry `(r, c)` has weight
/// `1/deg(c)` for every link `c -> r`. Dangling columns carry no entries;
/// the kernels add their mass back through the `w dᵀ` correction.
#[derive(Debug, Clone)]
pub struct TransitionBlock {
    owner: UeId,
    n: usize,
    row_range: Range<usize>,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    dangling: Arc<[usize]>,
}

impl TransitionBlock {
    pub fn owner(&self) -> UeId {
        self.owner
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_range(&self) -> Range<usize> {
        self.row_range.clone()
    }

    pub fn rows(&self) -> usize {
        self.row_range.len()
    }

    /// Stored `(column, weight)` entries of local row `local`, columns ascending.
    pub fn row(&self, local: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[local]..self.row_offsets[local + 1];
        self.cols[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    /// Indices of dangling pages, ascending.
    pub fn dangling_pages(&self) -> &[usize] {
        &self.dangling
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

pub fn build_transition_block(
    graph: &AdjacencyGraph,
    partition: &Partition,
    owner: UeId,
) -> Result<TransitionBlock, GraphError> {
    let dangling: Arc<[usize]> = (0..graph.n()).filter(|&i| graph.is_dangling(i)).collect();
    build_block_with(graph, partition, owner, dangling)
}

/// Builds every block of `partition`, sharing one dangling index list.
pub fn build_all_blocks(graph: &AdjacencyGraph, partition: &Partition) -> Result<Vec<TransitionBlock>, GraphError> {
    let dangling: Arc<[usize]> = (0..graph.n()).filter(|&i| graph.is_dangling(i)).collect();
    (0..partition.p()).map(|owner| build_block_with(graph, partition, owner as UeId, Arc::clone(&dangling))).collect()
}

fn build_block_with(
    graph: &AdjacencyGraph,
    partition: &Partition,
    owner: UeId,
    dangling: Arc<[usize]>,
) -> Result<TransitionBlock, GraphError> {
    if graph.n() != partition.n() {
        return Err(GraphError::Parameter(format!(
            "graph has {} pages but partition covers {}",
            graph.n(),
            partition.n()
        )));
    }
    if owner as usize >= partition.p() {
        return Err(GraphError::Parameter(format!(
            "owner {owner} out of range for {} units of execution",
            partition.p()
        )));
    }
    let rows = partition.range(owner);

    let mut row_offsets = vec![0usize; rows.len() + 1];
    for (_, dst) in graph.edges() {
        if rows.contains(&dst) {
            row_offsets[dst - rows.start + 1] += 1;
        }
    }
    for i in 0..rows.len() {
        row_offsets[i + 1] += row_offsets[i];
    }

    let nnz = row_offsets[rows.len()];
    let mut cols = vec![0usize; nnz];
    let mut weights = vec![0f64; nnz];
    let mut cursor = row_offsets.clone();
    // Sources are visited in ascending order, so each row fills column-sorted.
    for src in 0..graph.n() {
        let degree = graph.out_degree(src);
        for &dst in graph.neighbors(src) {
            if rows.contains(&dst) {
                let slot = &mut cursor[dst - rows.start];
                cols[*slot] = src;
                weights[*slot] = 1.0 / degree as f64;
                *slot += 1;
            }
        }
    }

    Ok(TransitionBlock { owner, n: graph.n(), row_range: rows, row_offsets, cols, weights, dangling })
}
