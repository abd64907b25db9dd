//! Configuration, orchestration and reporting for `rank`.

pub mod config;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use asyncrank::ranking::{compare_rankings, RankComparison};

pub use config::{load_config, parse_config, RunConfig};
pub use report::RunReport;
pub use run::{execute, run, RunError, RunOutput};

/// Loads a rank vector either from a vector file or through the
/// `vector_path` of a JSON report.
pub fn load_rank_source(path: &Path) -> Result<Vec<f64>, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io { path: path.into(), source })?;
    if text.trim_start().starts_with('{') {
        let report = RunReport::from_json(&text).map_err(|e| RunError::Invalid(format!("{}: {e}", path.display())))?;
        let vector = report
            .vector_path
            .ok_or_else(|| RunError::Invalid(format!("{}: report has no vector_path", path.display())))?;
        return run::read_vector(&PathBuf::from(vector));
    }
    run::read_vector(path)
}

pub fn compare_sources(a: &Path, b: &Path, k: usize) -> Result<RankComparison, RunError> {
    let (x, y) = (load_rank_source(a)?, load_rank_source(b)?);
    compare_rankings(&x, &y, k).map_err(|e| RunError::Invalid(e.to_string()))
}
