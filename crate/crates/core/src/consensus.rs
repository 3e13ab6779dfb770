//! Laplace-weighted consensus points and Laplace-principle diagnostics.
//!
//! Weights are always computed in min-shifted form `exp(-alpha (E_i - E*))`,
//! so the largest weight is exactly one and nothing overflows for any
//! `alpha`. All sums over particles use pairwise summation in index order,
//! which keeps results independent of how the caller schedules work.

use thiserror::Error;

use crate::game::{AssumptionParams, Game, GameError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("sample is empty")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cost of particle {0} is not finite")]
    NonFiniteCost(usize),
    #[error("alpha must be nonnegative and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("the Laplace value is undefined for alpha = 0")]
    ZeroAlpha,
    #[error("the ball B_r(x) holds no sample points")]
    EmptyBall,
    #[error("q = {q} exceeds E_inf / 2 = {half}")]
    QTooLarge { q: f64, half: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Empirical measure of one player's particles together with their costs.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    positions: &'a [f64],
    costs: &'a [f64],
    dim: usize,
    alpha: f64,
}

impl<'a> WeightedSample<'a> {
    /// `positions` holds `N` points of dimension `dim`, point-major.
    pub fn new(
        positions: &'a [f64],
        costs: &'a [f64],
        dim: usize,
        alpha: f64,
    ) -> Result<Self, ConsensusError> {
        if costs.is_empty() {
            return Err(ConsensusError::Empty);
        }
        if dim == 0 || positions.len() != costs.len() * dim {
            return Err(ConsensusError::Shape(format!(
                "{} positions of dimension {dim} for {} costs",
                positions.len(),
                costs.len()
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(ConsensusError::InvalidAlpha(alpha));
        }
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(ConsensusError::NonFiniteCost(i));
        }
        Ok(Self {
            positions,
            costs,
            dim,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn costs(&self) -> &[f64] {
        self.costs
    }

    fn min_cost(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Sum of `values` by recursive halving, in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

fn shifted_weights_into(costs: &[f64], alpha: f64, out: &mut Vec<f64>) {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    out.clear();
    out.extend(costs.iter().map(|&c| (-alpha * (c - min)).exp()));
}

/// `W_i = exp(-alpha (E_i - E*))` with `E* = min_i E_i`.
pub fn weights(s: &WeightedSample<'_>) -> Vec<f64> {
    let mut w = Vec::with_capacity(s.len());
    shifted_weights_into(s.costs, s.alpha, &mut w);
    w
}

/// Reusable buffers for repeated consensus computations.
#[derive(Debug, Default, Clone)]
pub struct ConsensusScratch {
    weights: Vec<f64>,
    terms: Vec<f64>,
}

/// Weighted mean `sum W_i X_i / sum W_i` written into `out`; the caller
/// guarantees shapes and finite costs.
pub(crate) fn consensus_into(
    positions: &[f64],
    costs: &[f64],
    dim: usize,
    alpha: f64,
    scratch: &mut ConsensusScratch,
    out: &mut [f64],
) {
    shifted_weights_into(costs, alpha, &mut scratch.weights);
    let total = pairwise_sum(&scratch.weights);
    // Offsets from the best particle, so a collapsed sample maps to itself exactly.
    let best = scratch.weights.iter().position(|&w| w == 1.0).unwrap_or(0);
    let anchor = &positions[best * dim..(best + 1) * dim];
    for (j, slot) in out.iter_mut().enumerate() {
        scratch.terms.clear();
        scratch.terms.extend(
            scratch
                .weights
                .iter()
                .zip(positions.chunks_exact(dim))
                .map(|(w, x)| w * (x[j] - anchor[j])),
        );
        *slot = anchor[j] + pairwise_sum(&scratch.terms) / total;
    }
}

/// Consensus point of the sample: the `exp(-alpha E)`-weighted mean.
pub fn consensus_point(s: &WeightedSample<'_>) -> Vec<f64> {
    let mut out = vec![0.0; s.dim];
    consensus_into(
        s.positions,
        s.costs,
        s.dim,
        s.alpha,
        &mut ConsensusScratch::default(),
        &mut out,
    );
    out
}

/// `-(1/alpha) log((1/N) sum exp(-alpha E_i))`, evaluated in shifted form.
pub fn laplace_value(s: &WeightedSample<'_>) -> Result<f64, ConsensusError> {
    if s.alpha == 0.0 {
        return Err(ConsensusError::ZeroAlpha);
    }
    let min = s.min_cost();
    let w = weights(s);
    let mean = pairwise_sum(&w) / s.len() as f64;
    Ok(min - mean.ln() / s.alpha)
}

/// `laplace_value - min_i E_i`, which lies in `[0, log(N) / alpha]`.
pub fn laplace_gap(s: &WeightedSample<'_>) -> Result<f64, ConsensusError> {
    if s.alpha == 0.0 {
        return Err(ConsensusError::ZeroAlpha);
    }
    let w = weights(s);
    let mean = pairwise_sum(&w) / s.len() as f64;
    Ok((-mean.ln() / s.alpha).max(0.0))
}

/// Default grid size for [`discrepancy_sup`].
pub const DEFAULT_DISCREPANCY_GRID: usize = 10_000;

/// Grid approximation of `sup_{|x - xbar| <= r} |E_m(x; y) - E_m(xbar; y)|`
/// around the game's reference best response `xbar`. One-dimensional games
/// only.
pub fn discrepancy_sup(
    game: &dyn Game,
    m: usize,
    others: &[f64],
    r: f64,
    grid_n: usize,
) -> Result<f64, ConsensusError> {
    if game.dim() != 1 {
        return Err(
            GameError::Unsupported("discrepancy_sup needs a one-dimensional game".into()).into(),
        );
    }
    if !(r > 0.0) || grid_n < 2 {
        return Err(ConsensusError::InvalidArgument(format!(
            "need r > 0 and grid_n >= 2, got r = {r}, grid_n = {grid_n}"
        )));
    }
    let center = game
        .reference_response(m, others)
        .ok_or_else(|| GameError::Unsupported("game has no reference best response".into()))?[0];
    let base = crate::game::eval_cost(game, m, &[center], others)?;
    let mut sup = 0.0_f64;
    for j in 0..grid_n {
        let x = center - r + 2.0 * r * j as f64 / (grid_n - 1) as f64;
        let e = crate::game::eval_cost(game, m, &[x], others)?;
        sup = sup.max((e - base).abs());
    }
    Ok(sup)
}

/// Largest `s` in `(0, r_max]` with `discrepancy_sup(s) <= q`, by bisection.
/// Assumes the discrepancy is nondecreasing in the radius.
pub fn ball_radius(
    game: &dyn Game,
    m: usize,
    others: &[f64],
    q: f64,
    r_max: f64,
    grid_n: usize,
) -> Result<f64, ConsensusError> {
    if discrepancy_sup(game, m, others, r_max, grid_n)? <= q {
        return Ok(r_max);
    }
    let (mut lo, mut hi) = (0.0, r_max);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if discrepancy_sup(game, m, others, mid, grid_n)? <= q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo > 0.0 {
        Ok(lo)
    } else {
        Err(ConsensusError::InvalidArgument(format!(
            "no radius achieves discrepancy <= {q}"
        )))
    }
}

/// Both sides of the quantitative Laplace bound for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates `|xbar - X_alpha| <= (2q)^nu / eta + exp(-alpha q) / rho(B_r(xbar)) * mean |x - xbar|`
/// on an empirical measure. `B_r` is the sup-norm ball; distances are Euclidean.
pub fn quantitative_laplace_check(
    s: &WeightedSample<'_>,
    x_bar: &[f64],
    q: f64,
    r: f64,
    params: &AssumptionParams,
) -> Result<LaplaceBound, ConsensusError> {
    if x_bar.len() != s.dim {
        return Err(ConsensusError::Shape(format!(
            "reference point has dimension {}, sample has {}",
            x_bar.len(),
            s.dim
        )));
    }
    if !(q > 0.0) || !(r > 0.0) {
        return Err(ConsensusError::InvalidArgument(format!(
            "need q, r > 0, got q = {q}, r = {r}"
        )));
    }
    if q > params.e_inf / 2.0 {
        return Err(ConsensusError::QTooLarge {
            q,
            half: params.e_inf / 2.0,
        });
    }
    let n = s.len();
    let mut inside = 0usize;
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let p = s.point(i);
        let sup = p
            .iter()
            .zip(x_bar)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        if sup <= r {
            inside += 1;
        }
        distances.push(euclidean(p, x_bar));
    }
    if inside == 0 {
        return Err(ConsensusError::EmptyBall);
    }
    let mass = inside as f64 / n as f64;
    let mean_distance = pairwise_sum(&distances) / n as f64;
    let consensus = consensus_point(s);
    let lhs = euclidean(&consensus, x_bar);
    let rhs = (2.0 * q).powf(params.nu) / params.eta + (-s.alpha * q).exp() * mean_distance / mass;
    Ok(LaplaceBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
