use std::path::PathBuf;
use std::process::ExitCode;

use asyncrank::kernels::{dense_oracle, GoogleParams, DEFAULT_ALPHA};
use asyncrank::ranking::top_k;
use asyncrank::webgraph::IndexBase;
use clap::{Parser, Subcommand};
use rank_cli::config::{GraphSource, SyntheticSpec};
use rank_cli::run::{load_graph, write_vector};
use rank_cli::{compare_sources, execute, load_config, RunError};

#[derive(Parser)]
#[command(name = "rank", version, about = "Synchronous and asynchronous PageRank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the computation described by a configuration file.
    Run {
        config: PathBuf,
        /// Print the JSON report instead of the tables.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic graph, e.g. `synthetic:n=1000,avg=8,dangling=0.1,seed=42`.
    Gen { spec: String, out: PathBuf },
    /// Compare the top-k rankings of two reports or rank-vector files.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Solve the dense linear system for a small graph.
    Oracle {
        /// Edge-list path or synthetic spec.
        graph: String,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Vertex ids in the file start at 1.
        #[arg(long)]
        one_based: bool,
        #[arg(long)]
        nodes: Option<usize>,
        /// Write the vector here instead of printing the top pages.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

fn graph_source(arg: &str) -> Result<GraphSource, RunError> {
    if arg.starts_with("synthetic") {
        Ok(GraphSource::Synthetic(arg.parse().map_err(RunError::Invalid)?))
    } else {
        Ok(GraphSource::File(arg.into()))
    }
}

fn dispatch(cli: Cli) -> Result<i32, RunError> {
    match cli.command {
        Command::Run { config, json } => {
            let config = load_config(&config)?;
            let out = execute(&config)?;
            if json {
                println!("{}", out.report.to_json());
            } else {
                print!("{}", out.report.render());
            }
            Ok(out.report.exit_code())
        }
        Command::Gen { spec, out } => {
            let spec: SyntheticSpec = spec.parse().map_err(RunError::Invalid)?;
            let graph = load_graph(&GraphSource::Synthetic(spec), IndexBase::Zero, None)?;
            let file = std::fs::File::create(&out).map_err(|source| RunError::Io { path: out.clone(), source })?;
            let header = format!("{spec}\nnodes: {}", graph.n());
            graph
                .write_edge_list(std::io::BufWriter::new(file), Some(&header))
                .map_err(|source| RunError::Io { path: out.clone(), source })?;
            println!("wrote {} pages, {} links to {}", graph.n(), graph.edge_count(), out.display());
            Ok(0)
        }
        Command::Compare { first, second, top_k } => {
            let c = compare_sources(&first, &second, top_k)?;
            println!("top-{top_k} overlap {:.4}, max displacement {}", c.overlap, c.max_displacement);
            Ok(0)
        }
        Command::Oracle { graph, alpha, one_based, nodes, out, top_k: k } => {
            let base = if one_based { IndexBase::One } else { IndexBase::Zero };
            let graph = load_graph(&graph_source(&graph)?, base, nodes)?;
            let params = GoogleParams::uniform(graph.n(), alpha)?;
            let x = dense_oracle(&graph, &params, 1e-9)?;
            match out {
                Some(path) => write_vector(&path, &x)?,
                None => {
                    for (rank, page) in top_k(&x, k.min(x.len())).into_iter().enumerate() {
                        println!("{:>5}  {page:>8}  {:.16e}", rank + 1, x[page]);
                    }
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("rank: {e}");
            ExitCode::from(2)
        }
    }
}
