//! Numerical self-tests run by `nash-cbo check`.
//!
//! Each suite returns a report holding the measured statistic next to the
//! threshold it is judged against, so callers can print or assert on it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::consensus::{
    ball_radius, consensus_point, laplace_gap, quantitative_laplace_check, ConsensusError,
    WeightedSample, DEFAULT_DISCREPANCY_GRID,
};
use crate::diagnostics::lemma_rhs;
use crate::dynamics::{DiffusionMode, DynamicsError, SolverParams};
use crate::experiments::{solve, InitRule};
use crate::game::{
    best_response_quadratic, cournot_gradient, price, synthesize_cournot, AssumptionParams,
    CournotGame, Game, GameConfig, PerturbedQuadraticGame, Profile, QuadraticGame,
    QuadraticGameSpec,
};
use crate::rng::{keyed_rng, mix, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Laplace,
    QuantitativeLaplace,
    Gradient,
    ConsensusOracle,
    Lemma,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Self::Laplace,
        Self::QuantitativeLaplace,
        Self::Gradient,
        Self::ConsensusOracle,
        Self::Lemma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Laplace => "laplace",
            Self::QuantitativeLaplace => "quantitative-laplace",
            Self::Gradient => "gradient",
            Self::ConsensusOracle => "consensus-oracle",
            Self::Lemma => "lemma",
        }
    }

    pub fn is_statistical(self) -> bool {
        self == Self::Lemma
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|x| x.as_str()).collect();
                format!("unknown check {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Flips the sign of the analytic Cournot gradient, to confirm the
    /// gradient suite catches it.
    pub flip_gradient_sign: bool,
}

pub fn run_checks(only: Option<Suite>, opts: &CheckOptions) -> Vec<CheckOutcome> {
    Suite::ALL
        .into_iter()
        .filter(|s| only.is_none_or(|o| o == *s))
        .map(|s| run_suite(s, opts))
        .collect()
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> CheckOutcome {
    let (passed, detail) = match suite {
        Suite::Laplace => match laplace_gap_check(200, opts.seed) {
            Ok(r) => (
                r.all_within_log_bound && r.gap_at_max_alpha <= 1e-5,
                format!(
                    "gap at alpha=1e6 {:.3e} (<= 1e-5), log(N)/alpha bound {}",
                    r.gap_at_max_alpha,
                    if r.all_within_log_bound {
                        "held"
                    } else {
                        "violated"
                    }
                ),
            ),
            Err(e) => (false, e.to_string()),
        },
        Suite::QuantitativeLaplace => {
            match quantitative_laplace_batch(100, 200, &[1.0, 1e2, 1e4], opts.seed) {
                Ok(r) => (
                    r.holds == r.cases,
                    format!("{}/{} cases hold", r.holds, r.cases),
                ),
                Err(e) => (false, e.to_string()),
            }
        }
        Suite::Gradient => {
            let r = gradient_check(10, 100, opts.seed, opts.flip_gradient_sign);
            (
                r.max_rel_err <= 1e-6,
                format!(
                    "max relative error {:.3e} (<= 1e-6) over {} points",
                    r.max_rel_err, r.points
                ),
            )
        }
        Suite::ConsensusOracle => {
            let r = consensus_oracle_check(1000, opts.seed);
            (
                r.max_rel_err <= 1e-12 && r.shift_max_change == 0.0,
                format!(
                    "max relative error {:.3e} (<= 1e-12), max change under cost shift {:e} (== 0)",
                    r.max_rel_err, r.shift_max_change
                ),
            )
        }
        Suite::Lemma => match lemma_check(&LemmaCheckConfig::default(), opts.seed) {
            Ok(r) => (
                r.fraction >= 0.95,
                format!(
                    "{:.1}% of {} step-player pairs within 3 standard errors (>= 95%)",
                    100.0 * r.fraction,
                    r.evaluated
                ),
            ),
            Err(e) => (false, e.to_string()),
        },
    };
    CheckOutcome {
        suite,
        passed,
        detail,
    }
}

fn rng_for(seed: u64, tag: u64) -> rand_chacha::ChaCha8Rng {
    keyed_rng(mix(&[seed, tag]), Domain::Check)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceGapReport {
    /// `(alpha, gap)` for `alpha = 1, 10, ..., 1e6`.
    pub gaps: Vec<(f64, f64)>,
    pub gap_at_max_alpha: f64,
    pub all_within_log_bound: bool,
}

/// Laplace gap of a fixed sample of the perturbed quadratic game's first
/// player, across `alpha = 10^0 .. 10^6`.
pub fn laplace_gap_check(n: usize, seed: u64) -> Result<LaplaceGapReport, ConsensusError> {
    let game = PerturbedQuadraticGame::new(QuadraticGameSpec::benchmark(4))?;
    let others = game.nash().others(0);
    let mut rng = rng_for(seed, 1);
    let x: Vec<f64> = (0..n)
        .map(|_| game.nash().player(0)[0] + rng.random_range(-3.0..3.0))
        .collect();
    let costs: Vec<f64> = x.iter().map(|&xi| game.cost(0, &[xi], &others)).collect();
    let mut gaps = Vec::new();
    for k in 0..=6 {
        let alpha = 10f64.powi(k);
        gaps.push((
            alpha,
            laplace_gap(&WeightedSample::new(&x, &costs, 1, alpha)?)?,
        ));
    }
    let bound = (n as f64).ln();
    Ok(LaplaceGapReport {
        all_within_log_bound: gaps.iter().all(|&(a, g)| g >= 0.0 && g <= bound / a),
        gap_at_max_alpha: gaps[gaps.len() - 1].1,
        gaps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceBatchReport {
    pub cases: usize,
    pub holds: usize,
    /// Smallest `rhs - lhs` seen.
    pub worst_margin: f64,
}

/// Neighbor rank used to pick `q`: the ball `B_r` then holds about this
/// many sample points.
const BALL_RANK: usize = 10;

/// Quantitative Laplace inequality on random empirical measures of the
/// quadratic game. For `E = (a^2 / 2)(x - xbar)^2` the assumptions hold with
/// `nu = 1/2`, `eta = a / sqrt 2` and `E_inf = a^2 R0^2 / 2`; `q` is
/// the discrepancy at the `BALL_RANK`-th nearest sample and `r` comes from
/// [`ball_radius`].
pub fn quantitative_laplace_batch(
    measures: usize,
    n: usize,
    alphas: &[f64],
    seed: u64,
) -> Result<LaplaceBatchReport, ConsensusError> {
    let spec = QuadraticGameSpec::benchmark(4);
    let game = QuadraticGame::new(spec.clone());
    let mut rng = rng_for(seed, 2);
    let (mut cases, mut holds, mut worst) = (0, 0, f64::INFINITY);
    for _ in 0..measures {
        let m = rng.random_range(0..4);
        let others: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x_bar = best_response_quadratic(&spec, m, &others);
        let spread: f64 = rng.random_range(0.05..2.0);
        let offset: f64 = rng.random_range(-spread..spread);
        let x: Vec<f64> = (0..n)
            .map(|_| x_bar + offset + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let costs: Vec<f64> = x.iter().map(|&xi| game.cost(m, &[xi], &others)).collect();

        let a = spec.a()[m];
        let mut dist: Vec<f64> = x.iter().map(|xi| (xi - x_bar).abs()).collect();
        dist.sort_by(f64::total_cmp);
        let r0 = 10.0 * (spread + offset.abs());
        let q = 0.5 * a * a * dist[BALL_RANK - 1].powi(2);
        let r = ball_radius(&game, m, &others, q, r0, DEFAULT_DISCREPANCY_GRID)?;
        let params = AssumptionParams::new(
            a / 2f64.sqrt(),
            0.5,
            0.5 * a * a * r0 * r0,
            r0,
            costs
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE),
            3f64.sqrt() / a,
        )?;
        for &alpha in alphas {
            let sample = WeightedSample::new(&x, &costs, 1, alpha)?;
            let bound = quantitative_laplace_check(&sample, &[x_bar], q, r, &params)?;
            cases += 1;
            holds += usize::from(bound.holds);
            worst = worst.min(bound.rhs - bound.lhs);
        }
    }
    Ok(LaplaceBatchReport {
        cases,
        holds,
        worst_margin: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub points: usize,
    pub max_rel_err: f64,
}

/// Analytic Cournot gradient against central differences of the cost at
/// random points where no price is clamped. The error is normwise,
/// `|fd - g|_inf / |g|_inf`.
pub fn gradient_check(
    instances: usize,
    points: usize,
    seed: u64,
    flip_sign: bool,
) -> GradientReport {
    let mut rng = rng_for(seed, 3);
    let mut max_rel_err = 0.0_f64;
    let mut evaluated = 0;
    for k in 0..instances {
        let dim = 1 + k % 10;
        let players = 2 + k % 3;
        let (spec, _) = synthesize_cournot(dim, players, mix(&[seed, k as u64]))
            .expect("default Cournot synthesis has positive costs");
        let game = CournotGame::new(spec.clone());
        let per_instance = points.div_ceil(instances).min(points - evaluated);
        let mut done = 0;
        while done < per_instance {
            let data = (0..dim * players)
                .map(|_| rng.random_range(0.0..20.0))
                .collect();
            let x = Profile::from_flat(dim, players, data).expect("shape");
            if price(&spec, &x).iter().any(|&p| p <= 0.0) {
                continue;
            }
            let m = rng.random_range(0..players);
            let mut g = cournot_gradient(&spec, &x, m);
            if flip_sign {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            let others = x.others(m);
            let h = 1e-3;
            let mut err = 0.0_f64;
            for j in 0..dim {
                let mut plus = x.player(m).to_vec();
                let mut minus = plus.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (game.cost(m, &plus, &others) - game.cost(m, &minus, &others)) / (2.0 * h);
                err = err.max((fd - g[j]).abs());
            }
            let scale = g.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            max_rel_err = max_rel_err.max(err / scale);
            done += 1;
        }
        evaluated += done;
    }
    GradientReport {
        points: evaluated,
        max_rel_err,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOracleReport {
    pub instances: usize,
    pub max_rel_err: f64,
    /// Largest coordinate change of the consensus point after shifting
    /// every cost by the same constant.
    pub shift_max_change: f64,
}

/// Stable consensus against unshifted direct summation on small random
/// instances with `alpha * (max E - min E) <= 30`.
///
/// Shift invariance is exact only when the shifted costs are themselves
/// exactly representable, so the shift test draws costs and shifts on a
/// dyadic grid of step 2^-10, with shifts up to 2^30 in magnitude.
pub fn consensus_oracle_check(instances: usize, seed: u64) -> ConsensusOracleReport {
    let mut rng = rng_for(seed, 4);
    let (mut max_rel_err, mut shift_max_change) = (0.0_f64, 0.0_f64);
    for _ in 0..instances {
        let n = rng.random_range(1..=50);
        let dim = rng.random_range(1..=4);
        let x: Vec<f64> = (0..n * dim)
            .map(|_| rng.random_range(-10.0..10.0))
            .collect();
        let alpha = 10f64.powf(rng.random_range(-3.0..6.0));
        let range = rng.random_range(0.0..30.0) / alpha;
        let costs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=range)).collect();
        let stable =
            consensus_point(&WeightedSample::new(&x, &costs, dim, alpha).expect("valid sample"));
        let w: Vec<f64> = costs.iter().map(|c| (-alpha * c).exp()).collect();
        let total: f64 = w.iter().sum();
        for j in 0..dim {
            let naive = (0..n).map(|i| w[i] * x[i * dim + j]).sum::<f64>() / total;
            let scale = x
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()))
                .max(f64::MIN_POSITIVE);
            max_rel_err = max_rel_err.max((stable[j] - naive).abs() / scale);
        }

        let unit = 2f64.powi(-10);
        let dyadic: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..1 << 15) as f64 * unit)
            .collect();
        let shift = rng.random_range(-(1i64 << 40)..(1i64 << 40)) as f64 * unit;
        let shifted: Vec<f64> = dyadic.iter().map(|c| c + shift).collect();
        let a = 10f64.powf(rng.random_range(-3.0..1.0));
        let before =
            consensus_point(&WeightedSample::new(&x, &dyadic, dim, a).expect("valid sample"));
        let after =
            consensus_point(&WeightedSample::new(&x, &shifted, dim, a).expect("valid sample"));
        for (p, q) in before.iter().zip(&after) {
            shift_max_change = shift_max_change.max((p - q).abs());
        }
    }
    ConsensusOracleReport {
        instances,
        max_rel_err,
        shift_max_change,
    }
}

/// Setup of the statistical check of the variance inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheckConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub steps: usize,
    pub particles: usize,
    pub seeds: usize,
}

impl Default for LemmaCheckConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: 1.0,
            alpha: 1e7,
            dt: 1e-2,
            steps: 200,
            particles: 10_000,
            seeds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub evaluated: usize,
    pub within: usize,
    pub fraction: f64,
}

/// On the convex quadratic game with four players, compares the centred
/// finite difference of each `V^m` with the inequality's right-hand side
/// evaluated on the same trace. A step-player pair passes when the seed
/// mean of `fd - rhs` is at most three standard errors.
pub fn lemma_check(cfg: &LemmaCheckConfig, seed: u64) -> Result<LemmaReport, DynamicsError> {
    let instance = GameConfig::quadratic(4)
        .instantiate()
        .expect("benchmark game");
    let rule = InitRule {
        variance: 5.0,
        offset: Some(vec![-2.0, 1.0, 0.0, 3.0]),
        shift: 0.0,
    };
    let players = instance.nash.players();
    let inner = cfg.steps.saturating_sub(1);
    // diffs[s][(k - 1) * M + m]
    let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds as u64 {
        let params = SolverParams {
            lambda: cfg.lambda,
            sigma: cfg.sigma,
            alpha: cfg.alpha,
            dt: cfg.dt,
            steps: cfg.steps,
            particles: cfg.particles,
            mode: DiffusionMode::Anisotropic,
            seed: mix(&[seed, s, Domain::Noise as u64]),
        };
        let init = rule
            .resolve(&instance.nash, mix(&[seed, s, Domain::Init as u64]))
            .expect("offset matches the benchmark");
        let out = solve(&instance, &params, &init, Some(1))?;
        if let Some(e) = out.divergence {
            return Err(e);
        }
        let r = &out.records;
        let mut row = Vec::with_capacity(inner * players);
        for k in 1..cfg.steps {
            for m in 0..players {
                let fd = (r[k + 1].per_player[m] - r[k - 1].per_player[m]) / (2.0 * cfg.dt);
                let rhs = lemma_rhs(
                    r[k].per_player[m],
                    r[k].consensus_distance[m],
                    cfg.lambda,
                    cfg.sigma,
                );
                row.push(fd - rhs);
            }
        }
        diffs.push(row);
    }
    let n = diffs.len() as f64;
    let mut within = 0;
    for j in 0..inner * players {
        let mean = diffs.iter().map(|d| d[j]).sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        if mean <= 3.0 * (var / n).sqrt() {
            within += 1;
        }
    }
    let evaluated = inner * players;
    Ok(LemmaReport {
        evaluated,
        within,
        fraction: within as f64 / evaluated.max(1) as f64,
    })
}
