//! Machine-readable run report and its fixed-width text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub pages: usize,
    pub links: usize,
    pub dangling: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub iterations: usize,
    pub wall_time: f64,
    pub final_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncSummary {
    pub p: usize,
    pub per_ue_iters: Vec<u64>,
    pub per_ue_time: Vec<f64>,
    pub iters_min: u64,
    pub iters_max: u64,
    pub time_min: f64,
    pub time_max: f64,
    /// Row `i`: fragments of each UE consumed by UE `i`; the diagonal is
    /// UE `i`'s own iteration count.
    pub import_matrix: Vec<Vec<u64>>,
    /// Per row, mean over peers of imports over the peer's iterations.
    pub completed_imports_pct: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPage {
    pub rank: usize,
    pub page: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub mode: String,
    pub graph: GraphSummary,
    pub converged: bool,
    /// `‖x − Gx‖₁` of the reported vector.
    pub global_residual: f64,
    /// `‖x − x_oracle‖₁`, when the graph is small enough for the dense
    /// oracle.
    pub oracle_error: Option<f64>,
    pub sync: Option<SyncSummary>,
    #[serde(rename = "async")]
    pub asynchronous: Option<AsyncSummary>,
    /// Sync wall time over the mean of the fastest and slowest UE times.
    pub speedup: Option<f64>,
    pub top_k: Vec<RankedPage>,
    /// Where the full rank vector was written, if anywhere.
    pub vector_path: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are always serializable")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            1
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let g = &self.graph;
        let _ = writeln!(out, "mode             {}", self.mode);
        let _ = writeln!(out, "graph            {} pages, {} links, {} dangling", g.pages, g.links, g.dangling);
        let _ = writeln!(out, "converged        {}", if self.converged { "yes" } else { "no" });
        let _ = writeln!(out, "global residual  {:.3e}", self.global_residual);
        if let Some(err) = self.oracle_error {
            let _ = writeln!(out, "oracle error     {err:.3e}");
        }

        if self.sync.is_some() || self.asynchronous.is_some() {
            out.push('\n');
            let _ = writeln!(
                out,
                "{:>4}  {:>10}  {:>12}  {:>17}  {:>23}  {:>8}",
                "p", "sync iters", "sync time s", "async iters", "async time s", "speedup"
            );
            let (s_iters, s_time) = match &self.sync {
                Some(s) => (s.iterations.to_string(), format!("{:.4}", s.wall_time)),
                None => ("-".into(), "-".into()),
            };
            let (p, a_iters, a_time) = match &self.asynchronous {
                Some(a) => (
                    a.p.to_string(),
                    format!("[{}, {}]", a.iters_min, a.iters_max),
                    format!("[{:.4}, {:.4}]", a.time_min, a.time_max),
                ),
                None => ("1".into(), "-".into(), "-".into()),
            };
            let speedup = self.speedup.map_or_else(|| "-".into(), |s| format!("{s:.2}"));
            let _ = writeln!(out, "{p:>4}  {s_iters:>10}  {s_time:>12}  {a_iters:>17}  {a_time:>23}  {speedup:>8}");
        }

        if let Some(a) = &self.asynchronous {
            out.push_str("\ncompleted imports\n");
            let _ = write!(out, "{:>6}", "");
            for j in 0..a.p {
                let _ = write!(out, "{:>10}", format!("UE{j}"));
            }
            let _ = writeln!(out, "{:>12}", "imports %");
            for (i, row) in a.import_matrix.iter().enumerate() {
                let _ = write!(out, "{:>6}", format!("UE{i}"));
                for v in row {
                    let _ = write!(out, "{v:>10}");
                }
                let _ = writeln!(out, "{:>12.1}", a.completed_imports_pct[i]);
            }
        }

        if !self.top_k.is_empty() {
            let _ = writeln!(out, "\n{:>5}  {:>8}  {:>22}", "rank", "page", "score");
            for r in &self.top_k {
                let _ = writeln!(out, "{:>5}  {:>8}  {:>22.16e}", r.rank, r.page, r.score);
            }
        }
        out
    }
}
