//! Turns a configuration into a run and a report.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use asyncrank::engine::{
    run_concurrent, simulate, AsyncConfig, AsyncResult, ConcurrentTransport, EngineError, Schedule, Script, SimOptions,
    Trace,
};
use asyncrank::kernels::{dense_oracle, run_sync, GoogleOperator, GoogleParams, KernelError, SyncResult, ORACLE_MAX_N};
use asyncrank::ranking::{read_rank_vector, top_k, write_rank_vector, RankError};
use asyncrank::webgraph::{
    generate_synthetic, parse_edge_list_str, partition_rows, AdjacencyGraph, GraphError, IndexBase, ParseOptions,
};
use log::info;
use thiserror::Error;

use crate::config::{ConfigError, GraphSource, Mode, RunConfig, ScheduleKind, Teleport};
use crate::report::{AsyncSummary, GraphSummary, RankedPage, RunReport, SyncSummary};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("graph {path}: {source}")]
    Graph {
        path: String,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Rank {
        path: PathBuf,
        #[source]
        source: RankError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub x: Vec<f64>,
    pub trace: Option<Trace>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Page count from a leading `# nodes: N` comment.
fn declared_nodes(text: &str) -> Option<usize> {
    text.lines()
        .map(str::trim)
        .take_while(|l| l.is_empty() || l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("nodes:")?.trim().parse().ok())
}

pub fn load_graph(source: &GraphSource, base: IndexBase, nodes: Option<usize>) -> Result<AdjacencyGraph, RunError> {
    match source {
        GraphSource::Synthetic(s) => generate_synthetic(s.n, s.avg, s.dangling, s.seed)
            .map_err(|source| RunError::Graph { path: s.to_string(), source }),
        GraphSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let declared_n = nodes.or_else(|| declared_nodes(&text));
            parse_edge_list_str(&text, ParseOptions { base, declared_n })
                .map_err(|source| RunError::Graph { path: path.display().to_string(), source })
        }
    }
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_rank_vector(BufReader::new(file)).map_err(|source| RunError::Rank { path: path.into(), source })
}

pub fn write_vector(path: &Path, x: &[f64]) -> Result<(), RunError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_rank_vector(x, BufWriter::new(file)).map_err(io_err(path))
}

fn params_for(config: &RunConfig, n: usize) -> Result<GoogleParams, RunError> {
    Ok(match &config.teleport {
        Teleport::Uniform => GoogleParams::uniform(n, config.alpha)?,
        Teleport::File(path) => {
            let v = read_vector(path)?;
            if v.len() != n {
                return Err(RunError::Invalid(format!("teleport vector has {} entries for {n} pages", v.len())));
            }
            GoogleParams::with_teleport(config.alpha, v)?
        }
    })
}

fn schedule_for(config: &RunConfig) -> Result<Schedule, RunError> {
    Ok(match config.schedule {
        ScheduleKind::Lockstep => Schedule::lockstep(),
        ScheduleKind::Seeded => Schedule::seeded(config.seed, config.delay_bound, config.drop_rate)?,
        ScheduleKind::Scripted => {
            let path =
                config.script.as_ref().ok_or_else(|| RunError::Invalid("scripted schedule without a script".into()))?;
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            Schedule::scripted(Script::parse(&text)?)
        }
    })
}

fn sync_summary(res: &SyncResult) -> SyncSummary {
    SyncSummary {
        iterations: res.iterations,
        wall_time: res.wall_time,
        final_residual: res.residual_history.last().copied().unwrap_or(0.0),
        converged: res.converged,
    }
}

fn async_summary(res: &AsyncResult) -> AsyncSummary {
    let fold = |f: fn(f64, f64) -> f64, init| res.per_ue_time.iter().copied().fold(init, f);
    AsyncSummary {
        p: res.per_ue_iters.len(),
        per_ue_iters: res.per_ue_iters.clone(),
        per_ue_time: res.per_ue_time.clone(),
        iters_min: res.per_ue_iters.iter().copied().min().unwrap_or(0),
        iters_max: res.per_ue_iters.iter().copied().max().unwrap_or(0),
        time_min: fold(f64::min, f64::INFINITY),
        time_max: fold(f64::max, 0.0),
        import_matrix: res.import_matrix.clone(),
        completed_imports_pct: res.completed_import_percentages(),
        converged: res.converged,
    }
}

pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    config.validate()?;
    let graph = load_graph(&config.graph, config.base_index, config.nodes)?;
    let n = graph.n();
    if n == 0 {
        return Err(RunError::Invalid("the graph has no pages".into()));
    }
    let params = params_for(config, n)?;
    info!("{} pages, {} links, mode {}", n, graph.edge_count(), config.mode.as_str());

    let run_sync_now = || -> Result<SyncResult, RunError> {
        let max_iters = usize::try_from(config.max_iters).unwrap_or(usize::MAX);
        Ok(run_sync(&graph, &params, config.tolerance, max_iters, None)?)
    };

    let mut trace = None;
    let (x, converged, sync, asynchronous) = match config.mode {
        Mode::Sync => {
            let res = run_sync_now()?;
            (res.x.clone(), res.converged, Some(sync_summary(&res)), None)
        }
        mode => {
            if config.p > n {
                return Err(RunError::Invalid(format!("p = {} exceeds the {n} pages", config.p)));
            }
            let partition = partition_rows(n, config.p)
                .map_err(|source| RunError::Graph { path: config.graph.to_string(), source })?;
            let async_cfg = AsyncConfig {
                kernel: config.kernel,
                tolerance: config.tolerance,
                pc_max_ue: config.pc_max_ue,
                pc_max_monitor: config.pc_max_monitor,
                max_iters: config.max_iters,
                x0: None,
            };
            let res = match mode {
                Mode::AsyncSim => {
                    let options = SimOptions { record_trace: config.trace_path.is_some(), record_iterates: false };
                    let out = simulate(&graph, &params, &partition, &async_cfg, &schedule_for(config)?, options)?;
                    if config.trace_path.is_some() {
                        trace = Some(out.trace);
                    }
                    out.result
                }
                Mode::AsyncThreads => {
                    run_concurrent(&graph, &params, &partition, &async_cfg, ConcurrentTransport::InProcess)?
                }
                _ => run_concurrent(
                    &graph,
                    &params,
                    &partition,
                    &async_cfg,
                    ConcurrentTransport::Tcp { base_port: config.base_port },
                )?,
            };
            let sync = if config.compare_sync { Some(sync_summary(&run_sync_now()?)) } else { None };
            (res.x.clone(), res.converged, sync, Some(async_summary(&res)))
        }
    };

    let global_residual = GoogleOperator::new(&graph, params.clone())?.fixed_point_residual(&x)?;
    let oracle_error = if n <= ORACLE_MAX_N {
        let oracle = dense_oracle(&graph, &params, 1e-9)?;
        Some(x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum())
    } else {
        None
    };
    let speedup = match (&sync, &asynchronous) {
        (Some(s), Some(a)) if a.time_min + a.time_max > 0.0 => Some(s.wall_time / ((a.time_min + a.time_max) / 2.0)),
        _ => None,
    };
    let top = top_k(&x, config.top_k.min(n))
        .into_iter()
        .enumerate()
        .map(|(rank, page)| RankedPage { rank: rank + 1, page, score: x[page] })
        .collect();

    let report = RunReport {
        config: config.echo(),
        mode: config.mode.as_str().into(),
        graph: GraphSummary { pages: n, links: graph.edge_count(), dangling: graph.dangling_count() },
        converged,
        global_residual,
        oracle_error,
        sync,
        asynchronous,
        speedup,
        top_k: top,
        vector_path: config.vector_path.as_ref().map(|p| p.display().to_string()),
    };
    Ok(RunOutput { report, x, trace })
}

/// Runs and writes the report, vector and trace files named in `config`.
pub fn execute(config: &RunConfig) -> Result<RunOutput, RunError> {
    let out = run(config)?;
    if let Some(path) = &config.vector_path {
        write_vector(path, &out.x)?;
    }
    if let (Some(path), Some(trace)) = (&config.trace_path, &out.trace) {
        let file = File::create(path).map_err(io_err(path))?;
        trace.write_to(BufWriter::new(file)).map_err(io_err(path))?;
    }
    if let Some(path) = &config.report_path {
        std::fs::write(path, out.report.to_json()).map_err(io_err(path))?;
    }
    Ok(out)
}
