//! Particle ensemble and its Euler–Maruyama time stepping.
//!
//! One iteration computes every player's consensus point from the same
//! snapshot, then moves each particle by
//! `X <- X - lambda (X - x_alpha) dt + sigma D(X - x_alpha) dB`
//! where `D` is `diag(.)` (anisotropic) or the Euclidean norm (isotropic).
//! Player costs are evaluated against the *means* of the other players.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{consensus_into, pairwise_sum, ConsensusScratch};
use crate::game::{Game, Profile};
use crate::rng::{CounterStreams, Domain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("step {step}: cost of player {player}, particle {particle} is not finite")]
    NonFiniteCost {
        step: u64,
        player: usize,
        particle: usize,
    },
    #[error("step {step}: position of player {player}, particle {particle} is not finite")]
    Diverged {
        step: u64,
        player: usize,
        particle: usize,
    },
}

impl DynamicsError {
    /// Whether the error signals a blown-up trajectory rather than a usage error.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Self::NonFiniteCost { .. } | Self::Diverged { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffusionMode {
    #[serde(rename = "aniso", alias = "anisotropic")]
    Anisotropic,
    #[serde(rename = "iso", alias = "isotropic")]
    Isotropic,
}

impl DiffusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Anisotropic => "aniso",
            Self::Isotropic => "iso",
        }
    }
}

impl std::str::FromStr for DiffusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aniso" | "anisotropic" => Ok(Self::Anisotropic),
            "iso" | "isotropic" => Ok(Self::Isotropic),
            other => Err(format!(
                "unknown diffusion mode {other:?} (expected aniso or iso)"
            )),
        }
    }
}

/// Solver parameters. `steps` is the number of iterations `K`; the horizon
/// is `T = K dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub steps: usize,
    pub particles: usize,
    pub mode: DiffusionMode,
    /// Seed of the diffusion noise.
    pub seed: u64,
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: String| Err(DynamicsError::InvalidParams(msg));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Warnings about parameter choices outside the convergence theory.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if 2.0 * self.lambda <= self.sigma * self.sigma {
            out.push(format!(
                "2 lambda - sigma^2 = {} <= 0: outside the convergent regime",
                2.0 * self.lambda - self.sigma * self.sigma
            ));
        }
        out
    }
}

/// Gaussian initial law: each player's particles are i.i.d.
/// `Normal(center_m, variance * I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub center: Profile,
    pub variance: f64,
    /// Seed of the initial draw, independent of the noise seed.
    pub seed: u64,
}

/// Positions `X^{m,i}` of `M` players with `N` particles each.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    players: usize,
    particles: usize,
    dim: usize,
    positions: Vec<f64>,
    step: u64,
    dt: f64,
}

impl Ensemble {
    /// `positions[(m * N + i) * d + j]` is coordinate `j` of particle `i` of player `m`.
    pub fn from_positions(
        players: usize,
        particles: usize,
        dim: usize,
        positions: Vec<f64>,
        dt: f64,
    ) -> Result<Self, DynamicsError> {
        if players == 0
            || particles == 0
            || dim == 0
            || positions.len() != players * particles * dim
        {
            return Err(DynamicsError::Shape(format!(
                "{} positions for {players} players x {particles} particles x dimension {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Shape("positions must be finite".into()));
        }
        Ok(Self {
            players,
            particles,
            dim,
            positions,
            step: 0,
            dt,
        })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// All particles of player `m`, point-major.
    pub fn player(&self, m: usize) -> &[f64] {
        let len = self.particles * self.dim;
        &self.positions[m * len..(m + 1) * len]
    }

    pub fn particle(&self, m: usize, i: usize) -> &[f64] {
        let start = (m * self.particles + i) * self.dim;
        &self.positions[start..start + self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
}

pub fn init_ensemble(init: &InitSpec, params: &SolverParams) -> Result<Ensemble, DynamicsError> {
    if !(init.variance > 0.0 && init.variance.is_finite()) {
        return Err(DynamicsError::InvalidParams(format!(
            "initial variance must be positive, got {}",
            init.variance
        )));
    }
    let (players, dim, particles) = (init.center.players(), init.center.dim(), params.particles);
    let streams = CounterStreams::new(init.seed, Domain::Init);
    let std = init.variance.sqrt();
    let mut positions = vec![0.0; players * particles * dim];
    positions
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(idx, x)| {
            let (m, i) = (idx / particles, idx % particles);
            let mut rng = streams.stream(0, m, i);
            for (xj, cj) in x.iter_mut().zip(init.center.player(m)) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *xj = cj + std * z;
            }
        });
    Ensemble::from_positions(players, particles, dim, positions, params.dt)
}

/// Per-player particle means `M_m = (1/N) sum_i X^{m,i}`.
pub fn player_means(e: &Ensemble) -> Profile {
    let mut data = Vec::with_capacity(e.players * e.dim);
    let mut buf = Vec::with_capacity(e.particles);
    for m in 0..e.players {
        let xs = e.player(m);
        for j in 0..e.dim {
            buf.clear();
            buf.extend(xs.chunks_exact(e.dim).map(|x| x[j]));
            data.push(pairwise_sum(&buf) / e.particles as f64);
        }
    }
    Profile::from_flat(e.dim, e.players, data).expect("ensemble shape is valid")
}

/// Particles per noise block. Increments are drawn sequentially within a
/// block, from a stream keyed by `(step, player, block)`.
pub const NOISE_BLOCK: usize = 256;

/// Largest dimension whose blocks fit in one counter window.
pub const MAX_NOISE_DIM: usize = 1024;

/// Source of Brownian increments `dB`.
pub trait NoiseSource: Sync {
    /// Fills `out` with the increments of `out.len() / dim` consecutive
    /// particles of `player`, starting at particle `first`, which is a
    /// multiple of [`NOISE_BLOCK`].
    fn fill(&self, step: u64, player: usize, first: usize, dim: usize, dt: f64, out: &mut [f64]);
}

/// Counter-keyed Gaussian increments with variance `dt` per coordinate.
#[derive(Debug, Clone)]
pub struct CounterNoise {
    streams: CounterStreams,
}

impl CounterNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            streams: CounterStreams::new(seed, Domain::Noise),
        }
    }
}

impl NoiseSource for CounterNoise {
    fn fill(&self, step: u64, player: usize, first: usize, _dim: usize, dt: f64, out: &mut [f64]) {
        let mut rng = self.streams.stream(step, player, first / NOISE_BLOCK);
        let scale = dt.sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = scale * z;
        }
    }
}

/// Deterministic per-particle increments from a closure, for tests.
pub struct InjectedNoise<F>(pub F);

impl<F> NoiseSource for InjectedNoise<F>
where
    F: Fn(u64, usize, usize, &mut [f64]) + Sync,
{
    fn fill(&self, step: u64, player: usize, first: usize, dim: usize, _dt: f64, out: &mut [f64]) {
        for (k, db) in out.chunks_exact_mut(dim).enumerate() {
            (self.0)(step, player, first + k, db)
        }
    }
}

/// Consensus points of all players for the current snapshot, with costs
/// evaluated at `(X^{m,i}; M^{-m})`.
pub fn compute_consensus(
    e: &Ensemble,
    game: &dyn Game,
    alpha: f64,
) -> Result<Profile, DynamicsError> {
    if game.num_players() != e.players || game.dim() != e.dim {
        return Err(DynamicsError::Shape(format!(
            "game has {} players in dimension {}, ensemble has {} in dimension {}",
            game.num_players(),
            game.dim(),
            e.players,
            e.dim
        )));
    }
    let means = player_means(e);
    let per_player: Vec<Result<Vec<f64>, DynamicsError>> = (0..e.players)
        .into_par_iter()
        .map(|m| {
            let others = means.others(m);
            let xs = e.player(m);
            let costs: Vec<f64> = xs
                .par_chunks(e.dim)
                .with_min_len(256)
                .map(|x| game.cost(m, x, &others))
                .collect();
            if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
                return Err(DynamicsError::NonFiniteCost {
                    step: e.step,
                    player: m,
                    particle: i,
                });
            }
            let mut out = vec![0.0; e.dim];
            consensus_into(
                xs,
                &costs,
                e.dim,
                alpha,
                &mut ConsensusScratch::default(),
                &mut out,
            );
            Ok(out)
        })
        .collect();
    let mut data = Vec::with_capacity(e.players * e.dim);
    for r in per_player {
        data.extend(r?);
    }
    Ok(Profile::from_flat(e.dim, e.players, data).expect("consensus shape is valid"))
}

/// Moves every particle one Euler–Maruyama step towards `consensus`.
pub fn advance(
    e: &mut Ensemble,
    consensus: &Profile,
    params: &SolverParams,
    noise: &dyn NoiseSource,
) -> Result<(), DynamicsError> {
    if consensus.players() != e.players || consensus.dim() != e.dim {
        return Err(DynamicsError::Shape(
            "consensus profile does not match ensemble".into(),
        ));
    }
    let (dim, particles, step) = (e.dim, e.particles, e.step);
    let (lambda, sigma, dt, mode) = (params.lambda, params.sigma, params.dt, params.mode);
    let failed = e
        .positions
        .par_chunks_mut(dim * particles)
        .enumerate()
        .filter_map(|(m, xs)| {
            let target = consensus.player(m);
            xs.par_chunks_mut(dim * NOISE_BLOCK)
                .enumerate()
                .filter_map(|(b, block)| {
                    let mut db = vec![0.0; block.len()];
                    noise.fill(step, m, b * NOISE_BLOCK, dim, dt, &mut db);
                    let mut first_bad = None;
                    for (k, (x, dbk)) in block
                        .chunks_exact_mut(dim)
                        .zip(db.chunks_exact(dim))
                        .enumerate()
                    {
                        let norm = match mode {
                            DiffusionMode::Isotropic => x
                                .iter()
                                .zip(target)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                .sqrt(),
                            DiffusionMode::Anisotropic => 0.0,
                        };
                        for ((xj, tj), dbj) in x.iter_mut().zip(target).zip(dbk) {
                            let diff = *xj - tj;
                            let scale = match mode {
                                DiffusionMode::Anisotropic => diff,
                                DiffusionMode::Isotropic => norm,
                            };
                            *xj += -lambda * diff * dt + sigma * scale * dbj;
                        }
                        if first_bad.is_none() && x.iter().any(|v| !v.is_finite()) {
                            first_bad = Some(m * particles + b * NOISE_BLOCK + k);
                        }
                    }
                    first_bad
                })
                .min()
        })
        .min();
    e.step += 1;
    match failed {
        Some(idx) => Err(DynamicsError::Diverged {
            step: e.step,
            player: idx / particles,
            particle: idx % particles,
        }),
        None => Ok(()),
    }
}

/// One full iteration: consensus from the pre-update snapshot, then the
/// particle update. Returns the consensus used.
pub fn step(
    e: &mut Ensemble,
    game: &dyn Game,
    params: &SolverParams,
    noise: &dyn NoiseSource,
) -> Result<Profile, DynamicsError> {
    let consensus = compute_consensus(e, game, params.alpha)?;
    advance(e, &consensus, params, noise)?;
    Ok(consensus)
}

/// State handed to a [`Recorder`]: the ensemble after `step` iterations and
/// the consensus points of that same snapshot.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub ensemble: &'a Ensemble,
    pub consensus: &'a Profile,
}

impl Snapshot<'_> {
    pub fn step(&self) -> u64 {
        self.ensemble.step
    }

    pub fn time(&self) -> f64 {
        self.ensemble.time()
    }
}

pub trait Recorder {
    fn record(&mut self, snapshot: &Snapshot<'_>);
}

impl<F: FnMut(&Snapshot<'_>)> Recorder for F {
    fn record(&mut self, snapshot: &Snapshot<'_>) {
        self(snapshot)
    }
}

/// Runs `params.steps` iterations from `init`, calling `recorder` on the
/// initial state and after every step. Uses counter-keyed noise seeded by
/// `params.seed`.
pub fn run(
    game: &dyn Game,
    params: &SolverParams,
    init: &InitSpec,
    recorder: &mut dyn Recorder,
) -> Result<Ensemble, DynamicsError> {
    run_with_noise(
        game,
        params,
        init,
        recorder,
        &CounterNoise::new(params.seed),
    )
}

pub fn run_with_noise(
    game: &dyn Game,
    params: &SolverParams,
    init: &InitSpec,
    recorder: &mut dyn Recorder,
    noise: &dyn NoiseSource,
) -> Result<Ensemble, DynamicsError> {
    params.validate()?;
    if init.center.players() != game.num_players() || init.center.dim() != game.dim() {
        return Err(DynamicsError::Shape(format!(
            "initial center is {} x {}, game is {} x {}",
            init.center.dim(),
            init.center.players(),
            game.dim(),
            game.num_players()
        )));
    }
    if game.dim() > MAX_NOISE_DIM {
        return Err(DynamicsError::Shape(format!(
            "dimension {} exceeds {MAX_NOISE_DIM}",
            game.dim()
        )));
    }
    let mut e = init_ensemble(init, params)?;
    let mut consensus = compute_consensus(&e, game, params.alpha)?;
    recorder.record(&Snapshot {
        ensemble: &e,
        consensus: &consensus,
    });
    for _ in 0..params.steps {
        advance(&mut e, &consensus, params, noise)?;
        consensus = compute_consensus(&e, game, params.alpha)?;
        recorder.record(&Snapshot {
            ensemble: &e,
            consensus: &consensus,
        });
    }
    Ok(e)
}
