//! Rank orderings and rank-vector files.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Page indices by descending score, ties by ascending index.
pub fn ordering(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    idx
}

pub fn top_k(x: &[f64], k: usize) -> Vec<usize> {
    let mut order = ordering(x);
    order.truncate(k);
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankComparison {
    /// `|top_k(x) ∩ top_k(y)| / k`; 1 when `k = 0`.
    pub overlap: f64,
    /// Largest `|pos_x(i) − pos_y(i)|` over pages in either top-k set.
    pub max_displacement: usize,
}

pub fn compare_rankings(x: &[f64], y: &[f64], k: usize) -> Result<RankComparison, RankError> {
    if x.len() != y.len() {
        return Err(RankError::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    if k > x.len() {
        return Err(RankError::Shape(format!("k = {k} exceeds {} pages", x.len())));
    }
    if k == 0 {
        return Ok(RankComparison { overlap: 1.0, max_displacement: 0 });
    }
    let (ox, oy) = (ordering(x), ordering(y));
    let mut pos_x = vec![0; x.len()];
    let mut pos_y = vec![0; x.len()];
    for (rank, &page) in ox.iter().enumerate() {
        pos_x[page] = rank;
    }
    for (rank, &page) in oy.iter().enumerate() {
        pos_y[page] = rank;
    }
    let shared = ox[..k].iter().filter(|&&page| pos_y[page] < k).count();
    let max_displacement =
        ox[..k].iter().chain(&oy[..k]).map(|&page| pos_x[page].abs_diff(pos_y[page])).max().unwrap_or(0);
    Ok(RankComparison { overlap: shared as f64 / k as f64, max_displacement })
}

/// One value per line with 17 significant digits.
pub fn write_rank_vector<W: Write>(x: &[f64], mut out: W) -> std::io::Result<()> {
    for v in x {
        writeln!(out, "{v:.16e}")?;
    }
    out.flush()
}

/// Blank lines and `#` comments are skipped.
pub fn read_rank_vector<R: BufRead>(reader: R) -> Result<Vec<f64>, RankError> {
    let mut x = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let v: f64 =
            text.parse().map_err(|_| RankError::Parse { line: idx + 1, msg: format!("not a number: {text:?}") })?;
        if !v.is_finite() {
            return Err(RankError::Parse { line: idx + 1, msg: format!("non-finite value {text}") });
        }
        x.push(v);
    }
    Ok(x)
}
