//! Config files, CSV outputs and run manifests.
//!
//! Numbers in CSV files are written with 17 significant digits, which
//! round-trips every finite `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::TraceRecord;
use crate::dynamics::{DiffusionMode, InitSpec, SolverParams};
use crate::experiments::{CellSummary, InitRule, RunRecord, SweepResult, SweepSpec};
use crate::game::{GameConfig, GameKind, NashPoint};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Header of `trace.csv`. Consensus columns are `consensus_j_m` for
/// coordinate `j` of player `m`, both one-based, player by player.
pub fn trace_header(dim: usize, players: usize, has_residual: bool) -> String {
    let mut h = String::from("step,t,V");
    for m in 1..=players {
        write!(h, ",V_{m}").unwrap();
    }
    if has_residual {
        h.push_str(",residual");
    }
    for m in 1..=players {
        for j in 1..=dim {
            write!(h, ",consensus_{j}_{m}").unwrap();
        }
    }
    h
}

/// Renders trace records as CSV, header included.
pub fn trace_csv(
    records: &[TraceRecord],
    dim: usize,
    players: usize,
    has_residual: bool,
) -> String {
    let mut out = trace_header(dim, players, has_residual);
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.step, fmt_f64(r.time), fmt_f64(r.v)).unwrap();
        for v in &r.per_player {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        if has_residual {
            write!(out, ",{}", fmt_opt(r.residual)).unwrap();
        }
        for x in r.consensus.as_flat() {
            write!(out, ",{}", fmt_f64(*x)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Header of `sweep_summary.csv`. Rows with `agg = 0` are single runs, rows
/// with `agg = 1` aggregate the seeds of one cell and leave `seed` empty.
pub fn summary_header(spec: &SweepSpec) -> String {
    let mut h = String::from("agg,point");
    for axis in &spec.axes {
        write!(h, ",{}", axis.param.as_str()).unwrap();
    }
    h.push_str(
        ",mode,seed,runs,v0,final_v,q25,q75,residual0,final_residual,first_passage,divergence",
    );
    h
}

/// Renders a sweep as CSV: every run, then one aggregate row per cell.
/// Wall times are left out so that the file depends only on the spec.
pub fn summary_csv(result: &SweepResult, cells: &[CellSummary]) -> String {
    let mut out = summary_header(&result.spec);
    out.push('\n');
    let values = |out: &mut String, vs: &[f64]| {
        for v in vs {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
    };
    for r in &result.runs {
        write!(out, "0,{}", r.point).unwrap();
        values(&mut out, &r.values);
        let fp = r.first_passage.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            ",{},{},1,{},{},{},{},{},{},{},{}",
            r.mode.as_str(),
            r.seed,
            fmt_f64(r.v0),
            fmt_f64(r.final_v),
            fmt_f64(r.final_v),
            fmt_f64(r.final_v),
            fmt_opt(r.residual0),
            fmt_opt(r.final_residual),
            fp,
            u8::from(r.diverged),
        )
        .unwrap();
    }
    for c in cells {
        write!(out, "1,{}", c.point).unwrap();
        values(&mut out, &c.values);
        let residual0 = residual0_median(&result.runs, c);
        writeln!(
            out,
            ",{},,{},{},{},{},{},{},{},{},{}",
            c.mode.as_str(),
            c.runs,
            fmt_f64(c.v0_median),
            fmt_f64(c.median),
            fmt_f64(c.q25),
            fmt_f64(c.q75),
            fmt_opt(residual0),
            fmt_opt(c.residual_median),
            fmt_f64(c.first_passage_median),
            fmt_f64(c.divergence_fraction),
        )
        .unwrap();
    }
    out
}

fn residual0_median(runs: &[RunRecord], cell: &CellSummary) -> Option<f64> {
    let vals: Vec<f64> = runs
        .iter()
        .filter(|r| r.point == cell.point && r.mode == cell.mode)
        .filter_map(|r| r.residual0)
        .collect();
    (!vals.is_empty()).then(|| crate::experiments::median(&vals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Trace every `trace_every` steps; the last step is always traced.
    #[serde(default = "one")]
    pub trace_every: u64,
}

fn one() -> u64 {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { trace_every: 1 }
    }
}

/// Everything a single solve needs, one section per module.
///
/// The initial ensemble is seeded from `(solver.seed, N, d)` and the noise
/// from `solver.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameConfig,
    pub solver: SolverParams,
    pub init: InitRule,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Defaults matching the benchmark setups: the quadratic games start
    /// around `x* + (-2, 1, 0, 3)` with variance 5 when `M = 4`, Cournot games
    /// around a `[-1, 1]` shift of `x*` with variance 10.
    pub fn defaults(game: GameConfig) -> Self {
        let sigma = 0.1;
        let solver = SolverParams {
            lambda: (1e4 + sigma * sigma) / 2.0,
            sigma,
            alpha: 1e7,
            dt: 1e-4,
            steps: 100,
            particles: 40,
            mode: DiffusionMode::Anisotropic,
            seed: 0,
        };
        let init = match game.kind {
            GameKind::Cournot => InitRule {
                variance: 10.0,
                offset: None,
                shift: 1.0,
            },
            _ => InitRule {
                variance: 5.0,
                offset: (game.players == 4 && game.dim == 1).then(|| vec![-2.0, 1.0, 0.0, 3.0]),
                shift: 0.0,
            },
        };
        Self {
            game,
            solver,
            init,
            output: OutputConfig::default(),
        }
    }

    pub fn resolve_init(
        &self,
        nash: &NashPoint,
    ) -> Result<InitSpec, crate::experiments::ExperimentError> {
        let seed =
            crate::experiments::init_seed(self.solver.seed, self.solver.particles, self.game.dim);
        self.init.resolve(nash, seed)
    }
}

/// Assumptions recorded in every manifest.
pub const ASSUMPTIONS: [&str; 3] = [
    "initial variance v means covariance v * I",
    "noise increments have variance dt per coordinate",
    "K steps produce K + 1 records, the initial state included",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub created_unix: u64,
    pub config: RunConfig,
    pub init: InitSpec,
    pub nash: NashPoint,
    pub warnings: Vec<String>,
    pub assumptions: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, init: &InitSpec, nash: &NashPoint) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            created_unix: now_unix(),
            config: config.clone(),
            init: init.clone(),
            nash: nash.clone(),
            warnings: config.solver.warnings(),
            assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub version: String,
    pub created_unix: u64,
    pub spec: SweepSpec,
    pub threads: usize,
    pub runs: usize,
    pub diverged: usize,
    pub warnings: Vec<String>,
    pub assumptions: Vec<String>,
}

impl SweepManifest {
    pub fn new(result: &SweepResult, threads: usize) -> Self {
        let mut warnings: Vec<String> = Vec::new();
        let outside = result
            .spec
            .grid()
            .iter()
            .filter(|p| {
                !result
                    .spec
                    .resolve(p, result.spec.modes[0])
                    .0
                    .warnings()
                    .is_empty()
            })
            .count();
        if outside > 0 {
            warnings.push(format!("{outside} grid points have 2 lambda <= sigma^2"));
        }
        Self {
            version: crate::VERSION.to_string(),
            created_unix: now_unix(),
            spec: result.spec.clone(),
            threads,
            runs: result.runs.len(),
            diverged: result.runs.iter().filter(|r| r.diverged).count(),
            warnings,
            assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, message: impl ToString) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn is_json(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

/// Parses a config from TOML text or from a JSON manifest's embedded
/// section `key`.
fn parse_config<T: serde::de::DeserializeOwned>(
    path: &Path,
    text: &str,
    key: &str,
) -> Result<T, IoError> {
    if is_json(text) {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
        let section = value
            .get_mut(key)
            .map(serde_json::Value::take)
            .ok_or_else(|| parse_err(path, format!("manifest has no {key:?} section")))?;
        serde_json::from_value(section).map_err(|e| parse_err(path, e))
    } else {
        toml::from_str(text).map_err(|e| parse_err(path, e))
    }
}

/// Reads a solve config from TOML or from a solve manifest.
pub fn load_run_config(path: &Path) -> Result<RunConfig, IoError> {
    parse_config(path, &read(path)?, "config")
}

/// Reads a sweep spec from TOML or from a sweep manifest.
pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec, IoError> {
    parse_config(path, &read(path)?, "spec")
}

/// Writes `contents` to `dir/name`, creating `dir`.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| IoError::File {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, IoError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
