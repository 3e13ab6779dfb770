use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Game, GameError, NashPoint, Profile};
use crate::rng::{keyed_rng, Domain};

/// Nonlinear Cournot oligopoly with `d` goods and `M` agents.
///
/// Price of good `h` is `max{a - b l_h . (x_1 + ... + x_M), 0}^beta` and agent
/// `m` pays `E_m = x_m . (c_m - p(x))`. Production costs are per agent: column
/// `m` of `c` belongs to agent `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CournotGameSpec {
    dim: usize,
    players: usize,
    beta: f64,
    a: f64,
    b: f64,
    /// Row-major `d x d` coupling matrix; row `h` is `l_h`.
    coupling: Vec<f64>,
    costs: Profile,
}

impl CournotGameSpec {
    pub fn new(
        beta: f64,
        a: f64,
        b: f64,
        coupling: Vec<f64>,
        costs: Profile,
    ) -> Result<Self, GameError> {
        let (dim, players) = (costs.dim(), costs.players());
        if !(beta > 0.0 && a > 0.0 && b > 0.0) {
            return Err(GameError::InvalidSpec(format!(
                "beta, a, b must be positive (got {beta}, {a}, {b})"
            )));
        }
        if coupling.len() != dim * dim {
            return Err(GameError::Shape(format!(
                "coupling matrix needs {} entries, got {}",
                dim * dim,
                coupling.len()
            )));
        }
        if coupling.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(GameError::InvalidSpec(
                "coupling rows must be nonnegative".into(),
            ));
        }
        for agent in 0..players {
            for (good, &value) in costs.player(agent).iter().enumerate() {
                if !(value > 0.0) {
                    return Err(GameError::NonPositiveCost { good, agent, value });
                }
            }
        }
        Ok(Self {
            dim,
            players,
            beta,
            a,
            b,
            coupling,
            costs,
        })
    }

    /// `L = 3 I + 1 1^T`.
    pub fn default_coupling(dim: usize) -> Vec<f64> {
        let mut l = vec![1.0; dim * dim];
        for h in 0..dim {
            l[h * dim + h] = 4.0;
        }
        l
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    pub fn costs(&self) -> &Profile {
        &self.costs
    }

    /// `z = L s`.
    fn couple(&self, total: &[f64]) -> Vec<f64> {
        self.coupling
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(total).map(|(l, s)| l * s).sum())
            .collect()
    }

    /// `phi_h(z) = max{a - b z_h, 0}^beta`.
    fn phi(&self, z: f64) -> f64 {
        let base = (self.a - self.b * z).max(0.0);
        if base == 0.0 {
            0.0
        } else {
            base.powf(self.beta)
        }
    }

    /// `d phi_h / d z_h`, taking the one-sided value 0 at clamped coordinates.
    fn dphi(&self, z: f64) -> f64 {
        let base = self.a - self.b * z;
        if base <= 0.0 {
            0.0
        } else {
            -self.b * self.beta * base.powf(self.beta - 1.0)
        }
    }

    fn prices_from_total(&self, total: &[f64]) -> Vec<f64> {
        self.couple(total)
            .into_iter()
            .map(|z| self.phi(z))
            .collect()
    }

    /// `c_m - phi(z) - L^T Dphi(z) x_m` for coupled total `z`.
    fn gradient_from_total(&self, total: &[f64], own: &[f64], m: usize) -> Vec<f64> {
        let z = self.couple(total);
        let scaled: Vec<f64> = z
            .iter()
            .zip(own)
            .map(|(&zh, &xh)| self.dphi(zh) * xh)
            .collect();
        let c = self.costs.player(m);
        (0..self.dim)
            .map(|k| {
                let lt: f64 = (0..self.dim)
                    .map(|h| self.coupling[h * self.dim + k] * scaled[h])
                    .sum();
                c[k] - self.phi(z[k]) - lt
            })
            .collect()
    }

    fn check_profile(&self, x: &Profile) {
        assert_eq!(
            (x.dim(), x.players()),
            (self.dim, self.players),
            "profile shape does not match the Cournot game"
        );
    }
}

/// Price vector `p(x)`.
pub fn price(spec: &CournotGameSpec, x: &Profile) -> Vec<f64> {
    spec.check_profile(x);
    spec.prices_from_total(&x.total())
}

/// Analytic `d E_m / d x_m` at profile `x`.
pub fn cournot_gradient(spec: &CournotGameSpec, x: &Profile, m: usize) -> Vec<f64> {
    spec.check_profile(x);
    spec.gradient_from_total(&x.total(), x.player(m), m)
}

/// Draws an equilibrium uniformly from `[0, 10]^{d x M}` and solves the
/// first-order conditions for the per-agent production costs, with
/// `beta = 2`, `a = 100`, `b = 1e-3` and `L = 3 I + 1 1^T`.
pub fn synthesize_cournot(
    dim: usize,
    players: usize,
    seed: u64,
) -> Result<(CournotGameSpec, NashPoint), GameError> {
    if dim == 0 || players == 0 {
        return Err(GameError::InvalidSpec(
            "dimension and player count must be positive".into(),
        ));
    }
    let mut rng = keyed_rng(seed, Domain::Instance);
    let data = (0..dim * players)
        .map(|_| rng.random_range(0.0..10.0))
        .collect();
    let nash = Profile::from_flat(dim, players, data)?;
    let spec = cournot_from_equilibrium(
        2.0,
        1e2,
        1e-3,
        CournotGameSpec::default_coupling(dim),
        &nash,
    )?;
    Ok((spec, nash))
}

/// Production costs that make `nash` a critical point of every agent's cost:
/// `c_m = phi(L s*) + L^T Dphi(L s*) x*_m`.
pub(crate) fn cournot_from_equilibrium(
    beta: f64,
    a: f64,
    b: f64,
    coupling: Vec<f64>,
    nash: &Profile,
) -> Result<CournotGameSpec, GameError> {
    let (dim, players) = (nash.dim(), nash.players());
    // With zero costs the gradient is exactly `-c_m`.
    let probe = CournotGameSpec {
        dim,
        players,
        beta,
        a,
        b,
        coupling: coupling.clone(),
        costs: Profile::zeros(dim, players),
    };
    let total = nash.total();
    let mut costs = Vec::with_capacity(dim * players);
    for m in 0..players {
        let g = probe.gradient_from_total(&total, nash.player(m), m);
        costs.extend(g.into_iter().map(|v| -v));
    }
    let costs = Profile::from_flat(dim, players, costs)?;
    CournotGameSpec::new(beta, a, b, coupling, costs)
}

/// Cost oracle for a Cournot instance.
#[derive(Debug, Clone)]
pub struct CournotGame {
    spec: CournotGameSpec,
}

impl CournotGame {
    pub fn new(spec: CournotGameSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &CournotGameSpec {
        &self.spec
    }
}

impl Game for CournotGame {
    fn num_players(&self) -> usize {
        self.spec.players
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn cost(&self, m: usize, own: &[f64], others: &[f64]) -> f64 {
        let d = self.spec.dim;
        let mut total = own.to_vec();
        for chunk in others.chunks_exact(d) {
            for (t, v) in total.iter_mut().zip(chunk) {
                *t += v;
            }
        }
        let p = self.spec.prices_from_total(&total);
        let c = self.spec.costs.player(m);
        own.iter()
            .zip(c)
            .zip(&p)
            .map(|((x, c), p)| x * (c - p))
            .sum()
    }
}
