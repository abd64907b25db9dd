//! Line-oriented run configuration: `key = value`, `#` comments.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Environment variables named `RANK_<KEY>` (key upper-cased) override the
//! file. Relative paths are resolved against the configuration file's
//! directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asyncrank::engine::DEFAULT_MAX_ITERS;
use asyncrank::kernels::{Kernel, DEFAULT_ALPHA};
use asyncrank::webgraph::IndexBase;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("{origin}: invalid value for `{key}`: {msg}")]
    Value { origin: Origin, key: String, msg: String },
}

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Env(String),
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Env(var) => write!(f, "environment variable {var}"),
            Origin::Default => f.write_str("default"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sync,
    AsyncSim,
    AsyncThreads,
    AsyncTcp,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::AsyncSim => "async-sim",
            Mode::AsyncThreads => "async-threads",
            Mode::AsyncTcp => "async-tcp",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sync" => Ok(Mode::Sync),
            "async-sim" => Ok(Mode::AsyncSim),
            "async-threads" => Ok(Mode::AsyncThreads),
            "async-tcp" => Ok(Mode::AsyncTcp),
            _ => Err("expected sync, async-sim, async-threads or async-tcp".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Lockstep,
    Seeded,
    Scripted,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Lockstep => "lockstep",
            ScheduleKind::Seeded => "seeded",
            ScheduleKind::Scripted => "scripted",
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lockstep" => Ok(ScheduleKind::Lockstep),
            "seeded" => Ok(ScheduleKind::Seeded),
            "scripted" => Ok(ScheduleKind::Scripted),
            _ => Err("expected lockstep, seeded or scripted".into()),
        }
    }
}

/// Parameters of a generated graph, written `synthetic:n=..,avg=..,dangling=..,seed=..`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub avg: f64,
    pub dangling: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n: 1000, avg: 8.0, dangling: 0.1, seed: 42 }
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "synthetic:n={},avg={},dangling={},seed={}", self.n, self.avg, self.dangling, self.seed)
    }
}

impl FromStr for SyntheticSpec {
    type Err = String;

    /// Omitted fields keep their defaults.
    fn from_str(s: &str) -> Result<Self, String> {
        let body = s
            .strip_prefix("synthetic:")
            .or_else(|| (s == "synthetic").then_some(""))
            .ok_or("missing `synthetic:` prefix")?;
        let mut spec = SyntheticSpec::default();
        for field in body.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let (k, v) = field.split_once('=').ok_or_else(|| format!("`{field}` is not `name=value`"))?;
            let bad = |_| format!("bad value for {k}: {v:?}");
            match k.trim() {
                "n" => spec.n = v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "avg" => spec.avg = v.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "dangling" => {
                    spec.dangling = v.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                }
                "seed" => spec.seed = v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                other => return Err(format!("unknown synthetic field `{other}`")),
            }
        }
        if spec.n == 0 {
            return Err("n must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&spec.dangling) {
            return Err("dangling must lie in [0, 1]".into());
        }
        if !(spec.avg >= 0.0) || !spec.avg.is_finite() {
            return Err("avg must be a finite non-negative number".into());
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSource::File(p) => write!(f, "{}", p.display()),
            GraphSource::Synthetic(s) => s.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Teleport {
    Uniform,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: GraphSource,
    pub base_index: IndexBase,
    /// Page count for edge-list files; otherwise taken from a `# nodes: N`
    /// header or the largest id.
    pub nodes: Option<usize>,
    pub alpha: f64,
    pub teleport: Teleport,
    pub tolerance: f64,
    pub kernel: Kernel,
    pub mode: Mode,
    pub p: usize,
    pub pc_max_ue: u32,
    pub pc_max_monitor: u32,
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub delay_bound: u32,
    pub drop_rate: f64,
    pub script: Option<PathBuf>,
    pub max_iters: u64,
    pub report_path: Option<PathBuf>,
    pub vector_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    pub base_port: Option<u16>,
    pub top_k: usize,
    /// Also run the synchronous method to report a speedup.
    pub compare_sync: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::Synthetic(SyntheticSpec::default()),
            base_index: IndexBase::Zero,
            nodes: None,
            alpha: DEFAULT_ALPHA,
            teleport: Teleport::Uniform,
            tolerance: 1e-6,
            kernel: Kernel::Power,
            mode: Mode::Sync,
            p: 4,
            pc_max_ue: 1,
            pc_max_monitor: 1,
            schedule: ScheduleKind::Seeded,
            seed: 0,
            delay_bound: 2,
            drop_rate: 0.0,
            script: None,
            max_iters: DEFAULT_MAX_ITERS,
            report_path: None,
            vector_path: None,
            trace_path: None,
            base_port: None,
            top_k: 10,
            compare_sync: true,
        }
    }
}

pub const KEYS: &[&str] = &[
    "graph",
    "base_index",
    "nodes",
    "alpha",
    "teleport",
    "tolerance",
    "kernel",
    "mode",
    "p",
    "pc_max_ue",
    "pc_max_monitor",
    "schedule",
    "seed",
    "delay_bound",
    "drop_rate",
    "script",
    "max_iters",
    "report_path",
    "vector_path",
    "trace_path",
    "base_port",
    "top_k",
    "compare_sync",
];

fn parse_num<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn optional_path(value: &str, base: &Path) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| base.join(value))
}

impl RunConfig {
    /// Sets one key. `base` anchors relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        match key {
            "graph" => {
                self.graph = if value.starts_with("synthetic") {
                    GraphSource::Synthetic(value.parse()?)
                } else {
                    GraphSource::File(base.join(value))
                }
            }
            "base_index" => {
                self.base_index = match value {
                    "0" => IndexBase::Zero,
                    "1" => IndexBase::One,
                    _ => return Err("expected 0 or 1".into()),
                }
            }
            "nodes" => self.nodes = if value == "auto" { None } else { Some(parse_num(value)?) },
            "alpha" => self.alpha = parse_num(value)?,
            "teleport" => {
                self.teleport = if value == "uniform" { Teleport::Uniform } else { Teleport::File(base.join(value)) }
            }
            "tolerance" => self.tolerance = parse_num(value)?,
            "kernel" => {
                self.kernel = match value {
                    "power" => Kernel::Power,
                    "linear" => Kernel::Linear,
                    _ => return Err("expected power or linear".into()),
                }
            }
            "mode" => self.mode = value.parse()?,
            "p" => self.p = parse_num(value)?,
            "pc_max_ue" => self.pc_max_ue = parse_num(value)?,
            "pc_max_monitor" => self.pc_max_monitor = parse_num(value)?,
            "schedule" => self.schedule = value.parse()?,
            "seed" => self.seed = parse_num(value)?,
            "delay_bound" => self.delay_bound = parse_num(value)?,
            "drop_rate" => self.drop_rate = parse_num(value)?,
            "script" => self.script = optional_path(value, base),
            "max_iters" => self.max_iters = parse_num(value)?,
            "report_path" => self.report_path = optional_path(value, base),
            "vector_path" => self.vector_path = optional_path(value, base),
            "trace_path" => self.trace_path = optional_path(value, base),
            "base_port" => self.base_port = if value == "auto" { None } else { Some(parse_num(value)?) },
            "top_k" => self.top_k = parse_num(value)?,
            "compare_sync" => self.compare_sync = parse_bool(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Range checks that need more than one value's syntax.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, msg: String| Err(ConfigError::Value { origin: Origin::Default, key: key.into(), msg });
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha", format!("{} outside (0, 1)", self.alpha));
        }
        if !(self.tolerance > 0.0) {
            return fail("tolerance", format!("{} must be positive", self.tolerance));
        }
        if self.p == 0 {
            return fail("p", "must be at least 1".into());
        }
        if self.pc_max_ue == 0 {
            return fail("pc_max_ue", "must be at least 1".into());
        }
        if self.pc_max_monitor == 0 {
            return fail("pc_max_monitor", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return fail("drop_rate", format!("{} outside [0, 1]", self.drop_rate));
        }
        if self.max_iters == 0 {
            return fail("max_iters", "must be at least 1".into());
        }
        if self.schedule == ScheduleKind::Scripted && self.mode == Mode::AsyncSim && self.script.is_none() {
            return fail("script", "a scripted schedule needs a script file".into());
        }
        Ok(())
    }

    /// Canonical `key = value` form of every setting.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("graph", self.graph.to_string());
        put("base_index", if self.base_index == IndexBase::One { "1" } else { "0" }.into());
        put("nodes", self.nodes.map_or_else(|| "auto".into(), |n| n.to_string()));
        put("alpha", self.alpha.to_string());
        put(
            "teleport",
            match &self.teleport {
                Teleport::Uniform => "uniform".into(),
                Teleport::File(p) => p.display().to_string(),
            },
        );
        put("tolerance", self.tolerance.to_string());
        put("kernel", if self.kernel == Kernel::Power { "power" } else { "linear" }.into());
        put("mode", self.mode.as_str().into());
        put("p", self.p.to_string());
        put("pc_max_ue", self.pc_max_ue.to_string());
        put("pc_max_monitor", self.pc_max_monitor.to_string());
        put("schedule", self.schedule.as_str().into());
        put("seed", self.seed.to_string());
        put("delay_bound", self.delay_bound.to_string());
        put("drop_rate", self.drop_rate.to_string());
        put("script", path(&self.script));
        put("max_iters", self.max_iters.to_string());
        put("report_path", path(&self.report_path));
        put("vector_path", path(&self.vector_path));
        put("trace_path", path(&self.trace_path));
        put("base_port", self.base_port.map_or_else(|| "auto".into(), |p| p.to_string()));
        put("top_k", self.top_k.to_string());
        put("compare_sync", self.compare_sync.to_string());
        m
    }
}

/// Parses configuration text, then applies `overrides` as `(key, value)`
/// pairs tagged with their origin.
pub fn parse_config(
    text: &str,
    base: &Path,
    overrides: impl IntoIterator<Item = (String, String, Origin)>,
) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    let mut seen = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.into() });
        }
        if seen.insert(key.to_string(), line).is_some() {
            return Err(ConfigError::Duplicate { line, key: key.into() });
        }
        config.set(key, value, base).map_err(|msg| ConfigError::Value {
            origin: Origin::Line(line),
            key: key.into(),
            msg,
        })?;
    }
    for (key, value, origin) in overrides {
        config.set(&key, value.trim(), base).map_err(|msg| ConfigError::Value {
            origin: origin.clone(),
            key: key.clone(),
            msg,
        })?;
    }
    config.validate()?;
    Ok(config)
}

/// `RANK_<KEY>` variables among `vars` that name a known key.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String, Origin)> {
    let mut out: Vec<_> = vars
        .into_iter()
        .filter_map(|(var, value)| {
            let key = var.strip_prefix("RANK_")?.to_ascii_lowercase();
            KEYS.contains(&key.as_str()).then_some((key, value, Origin::Env(var)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Reads `path` and applies the process environment.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, env_overrides(std::env::vars()))
}
