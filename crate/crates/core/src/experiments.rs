//! Declarative parameter sweeps over the benchmark games. The `paper` preset
//! runs the full grids; `desk` keeps every physical constant and shrinks
//! only grid sizes, particle counts and seed counts.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{residual_norm, variance, TraceRecord};
use crate::dynamics::{
    run, DiffusionMode, DynamicsError, InitSpec, Recorder, Snapshot, SolverParams,
};
use crate::game::{CournotGameSpec, GameConfig, GameError, GameInstance, NashPoint, Profile};
use crate::rng::{keyed_rng, mix, Domain};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown case {0:?} (expected a1, a2, a3, a4, b1, b2 or b3)")]
    UnknownCase(String),
    #[error("seed list is empty")]
    EmptySeeds,
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    #[serde(rename = "a1_alpha", alias = "a1")]
    A1Alpha,
    #[serde(rename = "a2_lambda", alias = "a2")]
    A2Lambda,
    #[serde(rename = "a3_n", alias = "a3")]
    A3N,
    #[serde(rename = "a4_lambda_sigma", alias = "a4")]
    A4LambdaSigma,
    #[serde(rename = "b1_aniso_iso", alias = "b1")]
    B1AnisoIso,
    #[serde(rename = "b2_n_dim", alias = "b2")]
    B2NDim,
    #[serde(rename = "b3_alpha_dim", alias = "b3")]
    B3AlphaDim,
}

impl CaseId {
    pub const ALL: [CaseId; 7] = [
        Self::A1Alpha,
        Self::A2Lambda,
        Self::A3N,
        Self::A4LambdaSigma,
        Self::B1AnisoIso,
        Self::B2NDim,
        Self::B3AlphaDim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::A1Alpha => "a1_alpha",
            Self::A2Lambda => "a2_lambda",
            Self::A3N => "a3_n",
            Self::A4LambdaSigma => "a4_lambda_sigma",
            Self::B1AnisoIso => "b1_aniso_iso",
            Self::B2NDim => "b2_n_dim",
            Self::B3AlphaDim => "b3_alpha_dim",
        }
    }

    pub fn short(self) -> &'static str {
        &self.as_str()[..2]
    }
}

impl std::str::FromStr for CaseId {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s || c.short() == s)
            .ok_or_else(|| ExperimentError::UnknownCase(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Paper => "paper",
            Self::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(format!("unknown preset {other:?} (expected paper or desk)")),
        }
    }
}

/// Parameter an axis sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisParam {
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "lambda")]
    Lambda,
    /// `u` in `lambda = (u + sigma^2) / 2`.
    #[serde(rename = "u")]
    LambdaShift,
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "n")]
    Particles,
    #[serde(rename = "d")]
    Dim,
}

impl AxisParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Lambda => "lambda",
            Self::LambdaShift => "u",
            Self::Sigma => "sigma",
            Self::Particles => "n",
            Self::Dim => "d",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Self::Particles | Self::Dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: AxisParam,
    pub scale: Scale,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(param: AxisParam, scale: Scale, min: f64, max: f64, count: usize) -> Self {
        Self {
            param,
            scale,
            min,
            max,
            count,
        }
    }

    /// Grid values, endpoints included; integer parameters are rounded.
    pub fn values(&self) -> Vec<f64> {
        let raw = |k: usize| -> f64 {
            if self.count == 1 {
                return self.min;
            }
            let s = k as f64 / (self.count - 1) as f64;
            match self.scale {
                Scale::Linear => self.min + (self.max - self.min) * s,
                Scale::Log => {
                    let (lo, hi) = (self.min.log10(), self.max.log10());
                    10f64.powf(lo + (hi - lo) * s)
                }
            }
        };
        (0..self.count)
            .map(|k| {
                if self.param.is_integer() {
                    raw(k).round()
                } else {
                    raw(k)
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.count == 0 {
            return bad(format!("axis {} has no points", self.param.as_str()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return bad(format!(
                "axis {} has range [{}, {}]",
                self.param.as_str(),
                self.min,
                self.max
            ));
        }
        if self.scale == Scale::Log && !(self.min > 0.0) {
            return bad(format!(
                "log axis {} needs a positive minimum",
                self.param.as_str()
            ));
        }
        if self.param.is_integer() && self.min < 1.0 {
            return bad(format!(
                "axis {} must stay at or above 1",
                self.param.as_str()
            ));
        }
        Ok(())
    }
}

/// Gaussian initial law around `x* + offset + u`, with `u` uniform on
/// `[-shift, shift]^{d x M}` drawn per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitRule {
    /// Covariance is `variance * I`.
    pub variance: f64,
    /// Player-major `d x M` offset; `None` means zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default)]
    pub shift: f64,
}

impl InitRule {
    /// Initial law for one run.
    pub fn resolve(&self, nash: &NashPoint, seed: u64) -> Result<InitSpec, ExperimentError> {
        let mut center = nash.as_flat().to_vec();
        if let Some(offset) = &self.offset {
            if offset.len() != center.len() {
                return Err(ExperimentError::InvalidSpec(format!(
                    "init offset has {} entries, expected {}",
                    offset.len(),
                    center.len()
                )));
            }
            center.iter_mut().zip(offset).for_each(|(c, o)| *c += o);
        }
        if self.shift > 0.0 {
            let mut rng = keyed_rng(seed, Domain::InitShift);
            for c in &mut center {
                *c += rng.random_range(-self.shift..=self.shift);
            }
        }
        Ok(InitSpec {
            center: Profile::from_flat(nash.dim(), nash.players(), center)?,
            variance: self.variance,
            seed,
        })
    }
}

/// One experiment: a grid of parameter values, diffusion modes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub case: CaseId,
    pub preset: Preset,
    pub game: GameConfig,
    /// Fixed parameters; axes override their own field and `seed` is
    /// replaced per run.
    pub base: SolverParams,
    pub axes: Vec<Axis>,
    pub modes: Vec<DiffusionMode>,
    pub init: InitRule,
    pub seeds: Vec<u64>,
    /// Keep a full trace for every run.
    #[serde(default)]
    pub trace: bool,
}

const DESK_MAX_AXIS: usize = 12;
const DESK_MAX_PARTICLES: usize = 2000;
const DESK_MAX_SEEDS: usize = 5;

pub fn build_case(case: CaseId, preset: Preset) -> SweepSpec {
    let desk = preset == Preset::Desk;
    let count = |paper: usize| {
        if desk {
            paper.min(DESK_MAX_AXIS)
        } else {
            paper
        }
    };
    let particles = |paper: usize| {
        if desk {
            paper.min(DESK_MAX_PARTICLES)
        } else {
            paper
        }
    };
    let seeds = |paper: usize, desk_count: usize| -> Vec<u64> {
        let k = if desk { desk_count.min(DESK_MAX_SEEDS) } else { paper };
        (0..k as u64).collect()
    };
    let sigma = 0.1;
    let high_lambda = (1e4 + sigma * sigma) / 2.0;
    let quadratic = |axes: Vec<Axis>, n: usize| SweepSpec {
        case,
        preset,
        game: GameConfig::quadratic_perturbed(4),
        base: SolverParams {
            lambda: high_lambda,
            sigma,
            alpha: 1e7,
            dt: 1e-4,
            steps: 100,
            particles: n,
            mode: DiffusionMode::Anisotropic,
            seed: 0,
        },
        axes,
        modes: vec![DiffusionMode::Anisotropic],
        init: InitRule {
            variance: 5.0,
            offset: Some(vec![-2.0, 1.0, 0.0, 3.0]),
            shift: 0.0,
        },
        seeds: seeds(1, 5),
        trace: false,
    };
    let cournot = |axes: Vec<Axis>,
                   base: SolverParams,
                   modes: Vec<DiffusionMode>,
                   seed_list: Vec<u64>| SweepSpec {
        case,
        preset,
        game: GameConfig::cournot(5, 4, 0),
        base,
        axes,
        modes,
        init: InitRule {
            variance: 10.0,
            offset: None,
            shift: 1.0,
        },
        seeds: seed_list,
        trace: false,
    };
    let short_run = SolverParams {
        lambda: high_lambda,
        sigma,
        alpha: 1e10,
        dt: 1e-4,
        steps: 15,
        particles: 1000,
        mode: DiffusionMode::Anisotropic,
        seed: 0,
    };
    let dims = Axis::new(AxisParam::Dim, Scale::Linear, 2.0, 20.0, count(19));
    match case {
        CaseId::A1Alpha => quadratic(
            vec![Axis::new(
                AxisParam::Alpha,
                Scale::Log,
                1e-6,
                1e7,
                count(500),
            )],
            40,
        ),
        CaseId::A2Lambda => quadratic(
            vec![Axis::new(
                AxisParam::LambdaShift,
                Scale::Log,
                1e2,
                1e4,
                count(500),
            )],
            40,
        ),
        CaseId::A3N => quadratic(
            vec![Axis::new(
                AxisParam::Particles,
                Scale::Linear,
                4.0,
                particles(4000) as f64,
                count(500),
            )],
            40,
        ),
        CaseId::A4LambdaSigma => {
            let grid = if desk { 10 } else { 100 };
            let mut axes = vec![
                Axis::new(AxisParam::Lambda, Scale::Log, 1e-1, 10f64.powf(2.5), grid),
                Axis::new(AxisParam::Sigma, Scale::Log, 1e-1, 10f64.powf(1.2), grid),
            ];
            if !desk {
                axes.push(Axis::new(AxisParam::Particles, Scale::Log, 10.0, 1000.0, 3));
            }
            let mut spec = quadratic(axes, 100);
            spec.base.dt = 1e-2;
            spec.base.steps = if desk { 100 } else { 10 };
            spec
        }
        CaseId::B1AnisoIso => cournot(
            vec![Axis::new(AxisParam::Lambda, Scale::Linear, 5.5, 50.5, 2)],
            SolverParams {
                lambda: 5.5,
                sigma: 1.0,
                alpha: 1e10,
                dt: 1e-3,
                steps: 1000,
                particles: particles(10_000),
                mode: DiffusionMode::Anisotropic,
                seed: 0,
            },
            vec![DiffusionMode::Anisotropic, DiffusionMode::Isotropic],
            seeds(20, 5),
        ),
        CaseId::B2NDim => cournot(
            vec![
                dims,
                Axis::new(AxisParam::Particles, Scale::Log, 2.0, 500.0, count(20)),
            ],
            short_run,
            vec![DiffusionMode::Anisotropic],
            seeds(1, 1),
        ),
        CaseId::B3AlphaDim => cournot(
            vec![
                dims,
                Axis::new(AxisParam::Alpha, Scale::Log, 1e1, 1e10, count(100)),
            ],
            short_run,
            vec![DiffusionMode::Anisotropic],
            seeds(1, 1),
        ),
    }
}

/// One point of the parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::EmptySeeds);
        }
        if self.modes.is_empty() {
            return Err(ExperimentError::InvalidSpec("no diffusion modes".into()));
        }
        for (k, axis) in self.axes.iter().enumerate() {
            axis.validate()?;
            if self.axes[..k].iter().any(|a| a.param == axis.param) {
                return Err(ExperimentError::InvalidSpec(format!(
                    "axis {} repeated",
                    axis.param.as_str()
                )));
            }
        }
        let has = |p| self.axes.iter().any(|a| a.param == p);
        if has(AxisParam::Lambda) && has(AxisParam::LambdaShift) {
            return Err(ExperimentError::InvalidSpec(
                "lambda and u axes are exclusive".into(),
            ));
        }
        self.base.validate()?;
        Ok(())
    }

    /// Number of points along each axis.
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    /// Grid points in row-major order (first axis slowest).
    pub fn grid(&self) -> Vec<GridPoint> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let total: usize = self.shape().iter().product();
        (0..total)
            .map(|index| {
                let mut rest = index;
                let mut point = vec![0.0; values.len()];
                for (k, axis_values) in values.iter().enumerate().rev() {
                    point[k] = axis_values[rest % axis_values.len()];
                    rest /= axis_values.len();
                }
                GridPoint {
                    index,
                    values: point,
                }
            })
            .collect()
    }

    /// Solver parameters and game config at a grid point.
    pub fn resolve(&self, point: &GridPoint, mode: DiffusionMode) -> (SolverParams, GameConfig) {
        let mut params = SolverParams { mode, ..self.base };
        let mut game = self.game.clone();
        let mut shift = None;
        for (axis, &v) in self.axes.iter().zip(&point.values) {
            match axis.param {
                AxisParam::Alpha => params.alpha = v,
                AxisParam::Lambda => params.lambda = v,
                AxisParam::LambdaShift => shift = Some(v),
                AxisParam::Sigma => params.sigma = v,
                AxisParam::Particles => params.particles = v as usize,
                AxisParam::Dim => game.dim = v as usize,
            }
        }
        if let Some(u) = shift {
            params.lambda = (u + params.sigma * params.sigma) / 2.0;
        }
        (params, game)
    }
}

/// Outcome of one run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: usize,
    pub values: Vec<f64>,
    pub mode: DiffusionMode,
    pub seed: u64,
    pub v0: f64,
    /// `+inf` for diverged runs.
    pub final_v: f64,
    pub residual0: Option<f64>,
    pub final_residual: Option<f64>,
    /// First step with `V <= V(0) / 100`.
    pub first_passage: Option<u64>,
    pub diverged: bool,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub runs: Vec<RunRecord>,
}

/// Result of a single solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Per-step `V`, starting at the initial state. Ends early on divergence.
    pub v_series: Vec<f64>,
    /// Recorded trace rows, with a sentinel row on divergence.
    pub records: Vec<TraceRecord>,
    pub first_consensus: Profile,
    pub last_consensus: Profile,
    pub residual0: Option<f64>,
    pub final_residual: Option<f64>,
    pub divergence: Option<DynamicsError>,
}

impl SolveOutcome {
    pub fn v0(&self) -> f64 {
        self.v_series[0]
    }

    pub fn final_v(&self) -> f64 {
        if self.divergence.is_some() {
            f64::INFINITY
        } else {
            *self
                .v_series
                .last()
                .expect("initial state is always recorded")
        }
    }

    pub fn first_passage(&self, factor: f64) -> Option<u64> {
        let threshold = self.v0() * factor;
        self.v_series
            .iter()
            .position(|&v| v <= threshold)
            .map(|k| k as u64)
    }

    /// `(t, V)` pairs, for decay fits.
    pub fn time_series(&self, dt: f64) -> Vec<(f64, f64)> {
        self.v_series
            .iter()
            .enumerate()
            .map(|(k, &v)| (k as f64 * dt, v))
            .collect()
    }
}

struct RunRecorder<'a> {
    nash: &'a NashPoint,
    cournot: Option<&'a CournotGameSpec>,
    trace_every: Option<u64>,
    last_step: u64,
    v: Vec<f64>,
    records: Vec<TraceRecord>,
    first: Option<Profile>,
    last: Option<Profile>,
}

impl Recorder for RunRecorder<'_> {
    fn record(&mut self, s: &Snapshot<'_>) {
        let k = s.step();
        match self.trace_every {
            Some(every) if k.is_multiple_of(every) || k == self.last_step => {
                let rec = TraceRecord::from_snapshot(s, self.nash, self.cournot);
                self.v.push(rec.v);
                self.records.push(rec);
            }
            _ => self.v.push(variance(s.ensemble, self.nash).0),
        }
        if self.first.is_none() {
            self.first = Some(s.consensus.clone());
        }
        self.last = Some(s.consensus.clone());
    }
}

/// Runs one solve, tracing every `trace_every` steps when given. Divergence
/// is reported in the outcome; other failures are errors.
pub fn solve(
    instance: &GameInstance,
    params: &SolverParams,
    init: &InitSpec,
    trace_every: Option<u64>,
) -> Result<SolveOutcome, DynamicsError> {
    let mut rec = RunRecorder {
        nash: &instance.nash,
        cournot: instance.cournot.as_ref(),
        trace_every: trace_every.map(|e| e.max(1)),
        last_step: params.steps as u64,
        v: Vec::with_capacity(params.steps + 1),
        records: Vec::new(),
        first: None,
        last: None,
    };
    let divergence = match run(instance.game.as_ref(), params, init, &mut rec) {
        Ok(_) => None,
        Err(e) if e.is_divergence() && rec.first.is_some() => Some(e),
        Err(e) => return Err(e),
    };
    if let Some(e) = &divergence {
        if trace_every.is_some() {
            let step = match e {
                DynamicsError::Diverged { step, .. }
                | DynamicsError::NonFiniteCost { step, .. } => *step,
                _ => rec.v.len() as u64,
            };
            rec.records.push(TraceRecord::diverged(
                step,
                step as f64 * params.dt,
                instance.nash.dim(),
                instance.nash.players(),
                instance.cournot.is_some(),
            ));
        }
    }
    let first = rec.first.expect("initial state recorded");
    let last = rec.last.expect("initial state recorded");
    let residual = |p: &Profile| instance.cournot.as_ref().map(|spec| residual_norm(spec, p));
    Ok(SolveOutcome {
        residual0: residual(&first),
        final_residual: if divergence.is_some() {
            instance.cournot.as_ref().map(|_| f64::INFINITY)
        } else {
            residual(&last)
        },
        v_series: rec.v,
        records: rec.records,
        first_consensus: first,
        last_consensus: last,
        divergence,
    })
}

/// Seed of the initial ensemble: depends only on the sweep seed and the
/// ensemble shape, so runs that can share a starting point do.
pub fn init_seed(seed: u64, particles: usize, dim: usize) -> u64 {
    mix(&[seed, particles as u64, dim as u64])
}

/// Seed of the diffusion noise of one run.
pub fn noise_seed(seed: u64, point: usize, mode: usize) -> u64 {
    mix(&[seed, point as u64, mode as u64, Domain::Noise as u64])
}

pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<SweepResult, ExperimentError> {
    run_sweep_with(spec, threads, |cfg: &GameConfig| cfg.instantiate())
}

/// Like [`run_sweep`] with a custom game factory, called once per distinct
/// resolved game config.
pub fn run_sweep_with<F>(
    spec: &SweepSpec,
    threads: usize,
    factory: F,
) -> Result<SweepResult, ExperimentError>
where
    F: Fn(&GameConfig) -> Result<GameInstance, GameError>,
{
    spec.validate()?;
    let grid = spec.grid();
    let mut jobs = Vec::new();
    let mut instances: Vec<(GameConfig, GameInstance)> = Vec::new();
    for point in &grid {
        for (mode_index, &mode) in spec.modes.iter().enumerate() {
            let (params, game) = spec.resolve(point, mode);
            params.validate()?;
            let slot = match instances.iter().position(|(cfg, _)| *cfg == game) {
                Some(slot) => slot,
                None => {
                    let instance = factory(&game)?;
                    instances.push((game.clone(), instance));
                    instances.len() - 1
                }
            };
            for &seed in &spec.seeds {
                jobs.push((point, mode_index, params, slot, seed));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let runs: Result<Vec<RunRecord>, ExperimentError> = pool.install(|| {
        jobs.par_iter()
            .map(|&(point, mode_index, params, slot, seed)| {
                let (game_cfg, instance) = &instances[slot];
                let params = SolverParams {
                    seed: noise_seed(seed, point.index, mode_index),
                    ..params
                };
                let init = spec.init.resolve(
                    &instance.nash,
                    init_seed(seed, params.particles, game_cfg.dim),
                )?;
                let start = Instant::now();
                let out = solve(instance, &params, &init, spec.trace.then_some(1))?;
                let wall_time = start.elapsed().as_secs_f64();
                Ok(RunRecord {
                    point: point.index,
                    values: point.values.clone(),
                    mode: params.mode,
                    seed,
                    v0: out.v0(),
                    final_v: out.final_v(),
                    residual0: out.residual0,
                    final_residual: out.final_residual,
                    first_passage: out.first_passage(FIRST_PASSAGE_FACTOR),
                    diverged: out.divergence.is_some(),
                    wall_time,
                    trace: spec.trace.then_some(out.records),
                })
            })
            .collect()
    });
    Ok(SweepResult {
        spec: spec.clone(),
        runs: runs?,
    })
}

/// First-passage threshold relative to `V(0)`.
pub const FIRST_PASSAGE_FACTOR: f64 = 1e-2;

/// Per-cell statistics over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub point: usize,
    pub values: Vec<f64>,
    pub mode: DiffusionMode,
    pub runs: usize,
    pub v0_median: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub residual_median: Option<f64>,
    /// Median first-passage step, `+inf` when most runs never pass.
    pub first_passage_median: f64,
    pub divergence_fraction: f64,
}

/// Linear-interpolation quantile of `values`, which must be non-empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (sorted[pos.floor() as usize], sorted[pos.ceil() as usize]);
    let frac = pos - pos.floor();
    if frac == 0.0 || lo == hi {
        lo
    } else {
        lo + (hi - lo) * frac
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Cells in grid order, modes in spec order.
pub fn aggregate(result: &SweepResult) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for run in &result.runs {
        let mode_index = result
            .spec
            .modes
            .iter()
            .position(|&m| m == run.mode)
            .unwrap_or(0);
        cells.entry((run.point, mode_index)).or_default().push(run);
    }
    cells
        .into_values()
        .map(|runs| {
            let finals: Vec<f64> = runs.iter().map(|r| r.final_v).collect();
            let v0: Vec<f64> = runs.iter().map(|r| r.v0).collect();
            let residuals: Vec<f64> = runs.iter().filter_map(|r| r.final_residual).collect();
            let passage: Vec<f64> = runs
                .iter()
                .map(|r| r.first_passage.map_or(f64::INFINITY, |k| k as f64))
                .collect();
            CellSummary {
                point: runs[0].point,
                values: runs[0].values.clone(),
                mode: runs[0].mode,
                runs: runs.len(),
                v0_median: median(&v0),
                median: median(&finals),
                q25: quantile(&finals, 0.25),
                q75: quantile(&finals, 0.75),
                residual_median: (!residuals.is_empty()).then(|| median(&residuals)),
                first_passage_median: median(&passage),
                divergence_fraction: runs.iter().filter(|r| r.diverged).count() as f64
                    / runs.len() as f64,
            }
        })
        .collect()
}
