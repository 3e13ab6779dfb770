//! Convergence functionals measured on ensembles and the theory-side
//! constants they are compared against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{euclidean, pairwise_sum};
use crate::dynamics::{Ensemble, Recorder, Snapshot};
use crate::game::{cournot_gradient, CournotGameSpec, NashPoint, Profile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("requires 2 lambda > sigma^2 (got 2 lambda - sigma^2 = {0})")]
    NotContractive(f64),
    #[error("requires V(0) >= 2 eps > 0 (got V(0) = {v0}, eps = {eps})")]
    AccuracyTooLoose { v0: f64, eps: f64 },
    #[error("sigma must be positive")]
    ZeroSigma,
    #[error("fit window holds {0} usable points, need at least 2")]
    TooFewPoints(usize),
    #[error("variance {value} at t = {t} is not positive and finite")]
    NonPositiveVariance { t: f64, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Per-player variances `V^m = (1/N) sum_i |X^{m,i} - x*_m|^2` and their sum `V`.
pub fn variance(e: &Ensemble, nash: &NashPoint) -> (f64, Vec<f64>) {
    assert_eq!(
        (nash.players(), nash.dim()),
        (e.players(), e.dim()),
        "NE shape mismatch"
    );
    let mut buf = Vec::with_capacity(e.particles());
    let per_player: Vec<f64> = (0..e.players())
        .map(|m| {
            let target = nash.player(m);
            buf.clear();
            buf.extend(e.player(m).chunks_exact(e.dim()).map(|x| {
                x.iter()
                    .zip(target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            }));
            pairwise_sum(&buf) / e.particles() as f64
        })
        .collect();
    (per_player.iter().sum(), per_player)
}

/// Euclidean norm of the stacked first-order residuals `(dE_m/dx_m)_m`.
pub fn residual_norm(spec: &CournotGameSpec, x: &Profile) -> f64 {
    (0..spec.players())
        .flat_map(|m| cournot_gradient(spec, x, m))
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Product bump `prod_m prod_k exp(1 - r^2 / (r^2 - (x_m - x*_m)_k^2))`,
/// zero outside the product sup-norm ball of radius `r` around `x*`.
pub fn mollifier(x: &Profile, nash: &NashPoint, r: f64) -> f64 {
    assert!(r > 0.0, "mollifier radius must be positive");
    let r2 = r * r;
    let mut exponent = 0.0;
    for (xv, sv) in x.as_flat().iter().zip(nash.as_flat()) {
        let d2 = (xv - sv) * (xv - sv);
        if d2 >= r2 {
            return 0.0;
        }
        exponent += 1.0 - r2 / (r2 - d2);
    }
    exponent.exp()
}

/// Decay rate `(2 lambda - sigma^2) / 2` guaranteed for `V` up to `T_eps`.
pub fn predicted_rate(lambda: f64, sigma: f64) -> f64 {
    (2.0 * lambda - sigma * sigma) / 2.0
}

/// `T_eps = 2 / (2 lambda - sigma^2) log(V(0) / eps)`.
pub fn t_epsilon(v0: f64, eps: f64, lambda: f64, sigma: f64) -> Result<f64, DiagnosticsError> {
    let gap = 2.0 * lambda - sigma * sigma;
    if !(gap > 0.0) {
        return Err(DiagnosticsError::NotContractive(gap));
    }
    if !(eps > 0.0 && v0 >= 2.0 * eps) {
        return Err(DiagnosticsError::AccuracyTooLoose { v0, eps });
    }
    Ok(2.0 / gap * (v0 / eps).ln())
}

/// `c3 = min{(2 lambda - sigma^2) / (8 sqrt(M) (lambda + sigma^2)), sqrt((2 lambda - sigma^2) / (4 M sigma^2))}`.
pub fn c3_constant(lambda: f64, sigma: f64, players: usize) -> Result<f64, DiagnosticsError> {
    let gap = 2.0 * lambda - sigma * sigma;
    if !(gap > 0.0) {
        return Err(DiagnosticsError::NotContractive(gap));
    }
    if sigma == 0.0 {
        return Err(DiagnosticsError::ZeroSigma);
    }
    let m = players as f64;
    let first = gap / (8.0 * m.sqrt() * (lambda + sigma * sigma));
    let second = (gap / (4.0 * m * sigma * sigma)).sqrt();
    Ok(first.min(second))
}

/// Whether a best-response Lipschitz constant satisfies `c1 <= c3 / 4`.
pub fn c1_condition_holds(
    c1: f64,
    lambda: f64,
    sigma: f64,
    players: usize,
) -> Result<bool, DiagnosticsError> {
    Ok(c1 <= 0.25 * c3_constant(lambda, sigma, players)?)
}

/// Right-hand side of the differential inequality for `V^m`:
/// `-(2 lambda - sigma^2) V + 2 (lambda + sigma^2) sqrt(V) dist + sigma^2 dist^2`.
pub fn lemma_rhs(v_m: f64, dist: f64, lambda: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    -(2.0 * lambda - s2) * v_m + 2.0 * (lambda + s2) * v_m.sqrt() * dist + s2 * dist * dist
}

/// Least-squares fit of `log V` against `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Negated slope, in 1 / time.
    pub rate: f64,
    /// Fitted `log V` at `t = 0`.
    pub intercept: f64,
    pub t0: f64,
    pub t1: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Which part of a trace to fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitWindow {
    /// Every point with `t0 <= t <= t1`.
    Range { t0: f64, t1: f64 },
    /// `[0.2 T, 0.8 T]`, keeping only points above the accuracy floor.
    Default,
    /// The leading stretch of the trace before it first reaches the
    /// accuracy floor.
    PreFloor,
}

/// Level at which a trace is considered stagnated: a decade above its
/// minimum when the trace decayed by more than two decades overall, else 0.
pub fn accuracy_floor(trace: &[(f64, f64)]) -> f64 {
    let Some(&(_, first)) = trace.first() else {
        return 0.0;
    };
    let min = trace.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if min > 0.0 && first / min > 100.0 {
        10.0 * min
    } else {
        0.0
    }
}

pub fn fit_decay_rate(
    trace: &[(f64, f64)],
    window: FitWindow,
) -> Result<DecayFit, DiagnosticsError> {
    let selected: Vec<(f64, f64)> = match window {
        FitWindow::Range { t0, t1 } => {
            if !(t0 <= t1) {
                return Err(DiagnosticsError::InvalidArgument(format!(
                    "empty window [{t0}, {t1}]"
                )));
            }
            trace
                .iter()
                .copied()
                .filter(|p| p.0 >= t0 && p.0 <= t1)
                .collect()
        }
        FitWindow::Default => {
            let horizon = trace.last().map_or(0.0, |p| p.0);
            let floor = accuracy_floor(trace);
            trace
                .iter()
                .copied()
                .filter(|p| p.0 >= 0.2 * horizon && p.0 <= 0.8 * horizon && p.1 > floor)
                .collect()
        }
        FitWindow::PreFloor => {
            let floor = accuracy_floor(trace);
            trace.iter().copied().take_while(|p| p.1 > floor).collect()
        }
    };
    if let Some(&(t, value)) = selected.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(DiagnosticsError::NonPositiveVariance { t, value });
    }
    if selected.len() < 2 {
        return Err(DiagnosticsError::TooFewPoints(selected.len()));
    }
    let n = selected.len() as f64;
    let mean_t = selected.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = selected.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in &selected {
        let (dx, dy) = (t - mean_t, v.ln() - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(DiagnosticsError::InvalidArgument(
            "window has a single time value".into(),
        ));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(DecayFit {
        rate: -slope,
        intercept: mean_y - slope * mean_t,
        t0: selected[0].0,
        t1: selected[selected.len() - 1].0,
        r_squared,
        points: selected.len(),
    })
}

/// First step at which `V <= threshold`.
pub fn first_passage_step(records: &[TraceRecord], threshold: f64) -> Option<u64> {
    records.iter().find(|r| r.v <= threshold).map(|r| r.step)
}

/// Diagnostics of one recorded snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub time: f64,
    pub v: f64,
    pub per_player: Vec<f64>,
    pub residual: Option<f64>,
    pub consensus: Profile,
    /// `|x*_m - X_alpha^m|` per player.
    pub consensus_distance: Vec<f64>,
}

impl TraceRecord {
    pub fn from_snapshot(
        s: &Snapshot<'_>,
        nash: &NashPoint,
        cournot: Option<&CournotGameSpec>,
    ) -> Self {
        let (v, per_player) = variance(s.ensemble, nash);
        let consensus_distance = (0..nash.players())
            .map(|m| euclidean(s.consensus.player(m), nash.player(m)))
            .collect();
        Self {
            step: s.step(),
            time: s.time(),
            v,
            per_player,
            residual: cournot.map(|spec| residual_norm(spec, s.consensus)),
            consensus: s.consensus.clone(),
            consensus_distance,
        }
    }

    /// Placeholder row for a run that blew up at `step`.
    pub fn diverged(step: u64, time: f64, dim: usize, players: usize, has_residual: bool) -> Self {
        Self {
            step,
            time,
            v: f64::INFINITY,
            per_player: vec![f64::INFINITY; players],
            residual: has_residual.then_some(f64::INFINITY),
            consensus: Profile::from_flat(dim, players, vec![f64::NAN; dim * players])
                .expect("positive shape"),
            consensus_distance: vec![f64::NAN; players],
        }
    }
}

/// Recorder that keeps a [`TraceRecord`] every `every` steps, plus the
/// initial and final states.
pub struct TraceRecorder<'a> {
    nash: &'a NashPoint,
    cournot: Option<&'a CournotGameSpec>,
    every: u64,
    last_step: u64,
    records: Vec<TraceRecord>,
}

impl<'a> TraceRecorder<'a> {
    pub fn new(
        nash: &'a NashPoint,
        cournot: Option<&'a CournotGameSpec>,
        every: u64,
        last_step: u64,
    ) -> Self {
        Self {
            nash,
            cournot,
            every: every.max(1),
            last_step,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

impl Recorder for TraceRecorder<'_> {
    fn record(&mut self, snapshot: &Snapshot<'_>) {
        let k = snapshot.step();
        if k.is_multiple_of(self.every) || k == self.last_step {
            self.records.push(TraceRecord::from_snapshot(
                snapshot,
                self.nash,
                self.cournot,
            ));
        }
    }
}

/// `(t, V)` pairs of a trace, for decay fits.
pub fn time_series(records: &[TraceRecord]) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.time, r.v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::synthesize_cournot;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ensemble(players: usize, particles: usize, dim: usize, x: Vec<f64>) -> Ensemble {
        Ensemble::from_positions(players, particles, dim, x, 0.1).unwrap()
    }

    #[test]
    fn variance_examples() {
        let nash = Profile::from_flat(1, 2, vec![1.0, -1.0]).unwrap();
        assert_eq!(
            variance(&ensemble(2, 2, 1, vec![1.0, 1.0, -1.0, -1.0]), &nash).0,
            0.0
        );
        let (v, per) = variance(&ensemble(2, 1, 1, vec![4.0, 3.0]), &nash);
        assert_eq!(per, vec![9.0, 16.0]);
        assert_eq!(v, 25.0);
        let single = Profile::from_flat(1, 1, vec![0.0]).unwrap();
        assert_eq!(variance(&ensemble(1, 2, 1, vec![1.0, 3.0]), &single).0, 5.0);
    }

    #[test]
    fn residual_of_synthesized_instance() {
        let (spec, nash) = synthesize_cournot(5, 4, 2).unwrap();
        assert!(residual_norm(&spec, &nash) <= 1e-10);
        let huge = Profile::from_flat(5, 4, vec![1e7; 20]).unwrap();
        let frob = spec
            .costs()
            .as_flat()
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(residual_norm(&spec, &huge), frob, max_relative = 1e-14);
    }

    #[test]
    fn residual_is_first_order_in_the_offset() {
        let (spec, nash) = synthesize_cournot(3, 3, 8).unwrap();
        let n = nash.as_flat().len();
        let stacked = |x: &Profile| -> Vec<f64> {
            (0..spec.players())
                .flat_map(|m| cournot_gradient(&spec, x, m))
                .collect()
        };
        // Finite-difference Jacobian of the stacked gradient at x*.
        let h = 1e-5;
        let mut jac = vec![0.0; n * n];
        for col in 0..n {
            let mut plus = nash.as_flat().to_vec();
            let mut minus = plus.clone();
            plus[col] += h;
            minus[col] -= h;
            let gp = stacked(&Profile::from_flat(3, 3, plus).unwrap());
            let gm = stacked(&Profile::from_flat(3, 3, minus).unwrap());
            for row in 0..n {
                jac[row * n + col] = (gp[row] - gm[row]) / (2.0 * h);
            }
        }
        let delta: Vec<f64> = (0..n)
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * 1e-4 / (n as f64).sqrt())
            .collect();
        let predicted = (0..n)
            .map(|row| {
                (0..n)
                    .map(|c| jac[row * n + c] * delta[c])
                    .sum::<f64>()
                    .powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let shifted: Vec<f64> = nash
            .as_flat()
            .iter()
            .zip(&delta)
            .map(|(a, b)| a + b)
            .collect();
        let actual = residual_norm(&spec, &Profile::from_flat(3, 3, shifted).unwrap());
        assert!(
            (actual - predicted).abs() <= 0.1 * predicted,
            "{actual} vs {predicted}"
        );
    }

    #[test]
    fn mollifier_examples() {
        let nash = Profile::from_flat(1, 1, vec![2.0]).unwrap();
        assert_eq!(mollifier(&nash, &nash, 0.5), 1.0);
        let at = |v: f64| Profile::from_flat(1, 1, vec![v]).unwrap();
        assert_eq!(mollifier(&at(2.5), &nash, 0.5), 0.0);
        assert_eq!(mollifier(&at(0.0), &nash, 0.5), 0.0);
        assert_relative_eq!(
            mollifier(&at(2.25), &nash, 0.5),
            (-1.0f64 / 3.0).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(mollifier(&at(2.25), &nash, 0.5), 0.716531, epsilon = 1e-6);
    }

    #[test]
    fn theory_constants() {
        assert_eq!(predicted_rate(1.0, 0.0), 1.0);
        assert_eq!(predicted_rate(5.5, 1.0), 5.0);
        assert_eq!(predicted_rate(0.5, 1.0), 0.0);

        let eps = 0.3;
        assert_relative_eq!(
            t_epsilon(std::f64::consts::E * eps, eps, 1.0, 1.0).unwrap(),
            2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            t_epsilon(1.0, 0.5, 1.0, 1.0).unwrap(),
            2.0 * 2f64.ln(),
            max_relative = 1e-14
        );
        assert!(t_epsilon(1.0, 0.6, 1.0, 1.0).is_err());
        assert!(t_epsilon(1.0, 0.1, 0.5, 1.0).is_err());

        assert_relative_eq!(
            c3_constant(1.0, 1.0, 1).unwrap(),
            0.0625,
            max_relative = 1e-15
        );
        let mut last = f64::INFINITY;
        for m in 1..10 {
            let c = c3_constant(1.0, 1.0, m).unwrap();
            assert!(c < last);
            last = c;
        }
        assert!(c3_constant(0.5 + 1e-12, 1.0, 4).unwrap() < 1e-5);
        assert_eq!(c3_constant(1.0, 0.0, 4), Err(DiagnosticsError::ZeroSigma));
        assert!(c1_condition_holds(0.01, 1.0, 1.0, 1).unwrap());
        assert!(!c1_condition_holds(0.02, 1.0, 1.0, 1).unwrap());

        assert_eq!(lemma_rhs(0.0, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(lemma_rhs(1.0, 0.0, 2.0, 1.5), -(4.0 - 2.25));
        assert_eq!(lemma_rhs(4.0, 3.0, 1.0, 1.0), 29.0);
    }

    fn exact(rate: f64, scale: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, scale * (-rate * t).exp())
            })
            .collect()
    }

    #[test]
    fn fits_exact_data() {
        let fit =
            fit_decay_rate(&exact(3.0, 1.0, 10), FitWindow::Range { t0: 0.0, t1: 1.0 }).unwrap();
        assert!((fit.rate - 3.0).abs() <= 1e-9);
        let flat = fit_decay_rate(&exact(0.0, 2.0, 10), FitWindow::Default).unwrap();
        assert_eq!(flat.rate, 0.0);
        let fit = fit_decay_rate(&exact(2.0, 5.0, 10), FitWindow::Default).unwrap();
        assert!((fit.rate - 2.0).abs() <= 1e-9);
        assert!((fit.intercept - 5f64.ln()).abs() <= 1e-9);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn fit_windows_exclude_the_floor() {
        let mut trace = exact(10.0, 1.0, 20);
        trace.extend((20..40).map(|i| (i as f64 * 0.1, 1e-12)));
        let fit = fit_decay_rate(&trace, FitWindow::PreFloor).unwrap();
        assert!((fit.rate - 10.0).abs() <= 1e-9);
        assert_eq!(fit.points, 20);
        let bad = vec![(0.0, 1.0), (0.1, 0.0), (0.2, 0.5)];
        assert!(matches!(
            fit_decay_rate(&bad, FitWindow::Range { t0: 0.0, t1: 1.0 }),
            Err(DiagnosticsError::NonPositiveVariance { .. })
        ));
        let diverged = vec![(0.0, 1.0), (0.1, f64::INFINITY)];
        assert!(fit_decay_rate(&diverged, FitWindow::Range { t0: 0.0, t1: 1.0 }).is_err());
        assert_eq!(
            fit_decay_rate(&[(0.0, 1.0)], FitWindow::Range { t0: 0.0, t1: 1.0 }),
            Err(DiagnosticsError::TooFewPoints(1))
        );
    }

    proptest! {
        #[test]
        fn mollifier_is_a_bump(
            offsets in prop::collection::vec(-2.0..2.0f64, 6),
            r in 0.1..3.0f64,
        ) {
            let nash = Profile::from_flat(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]).unwrap();
            let x: Vec<f64> = nash.as_flat().iter().zip(&offsets).map(|(a, b)| a + b).collect();
            let v = mollifier(&Profile::from_flat(3, 2, x).unwrap(), &nash, r);
            prop_assert!((0.0..=1.0).contains(&v));
            if offsets.iter().any(|o| o.abs() >= r) {
                prop_assert_eq!(v, 0.0);
            }
        }

        #[test]
        fn variance_ignores_particle_order(
            x in prop::collection::vec(-5.0..5.0f64, 12),
            rot in 0usize..6,
        ) {
            let nash = Profile::from_flat(1, 2, vec![0.3, -0.7]).unwrap();
            let (a, b) = x.split_at(6);
            let mut a2 = a.to_vec();
            a2.rotate_left(rot);
            let mut b2 = b.to_vec();
            b2.reverse();
            let v1 = variance(&ensemble(2, 6, 1, x.clone()), &nash);
            let v2 = variance(&ensemble(2, 6, 1, [a2, b2].concat()), &nash);
            for (p, q) in v1.1.iter().zip(&v2.1) {
                prop_assert!((p - q).abs() <= 1e-13 * p.max(1.0));
            }
        }
    }
}
