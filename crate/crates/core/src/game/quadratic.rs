use serde::{Deserialize, Serialize};

use super::{Game, GameError, NashPoint, Profile};

/// One-dimensional quadratic game
/// `E_m(x_m; x_-m) = 1/2 (a_m x_m - sum_{i != m} x_i - b_m)^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticGameSpec {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl QuadraticGameSpec {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, GameError> {
        let m = a.len();
        if m == 0 || b.len() != m {
            return Err(GameError::Shape(format!(
                "a and b must have the same positive length, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        if let Some((i, &ai)) = a.iter().enumerate().find(|(_, &ai)| !(ai > m as f64)) {
            return Err(GameError::InvalidSpec(format!(
                "a[{i}] = {ai} must exceed the number of players {m}"
            )));
        }
        if b.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
            return Err(GameError::InvalidSpec("coefficients must be finite".into()));
        }
        Ok(Self { a, b })
    }

    /// Default benchmark coefficients `a_m = M + m`, `b_m = m` (one-based `m`).
    pub fn benchmark(players: usize) -> Self {
        let a = (1..=players).map(|m| (players + m) as f64).collect();
        let b = (1..=players).map(|m| m as f64).collect();
        Self { a, b }
    }

    pub fn players(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Inner residual `a_m x_m - sum_{i != m} x_i - b_m`.
    pub fn inner(&self, m: usize, own: f64, others: &[f64]) -> f64 {
        self.a[m] * own - others.iter().sum::<f64>() - self.b[m]
    }

    pub fn cost(&self, m: usize, own: f64, others: &[f64]) -> f64 {
        let r = self.inner(m, own, others);
        0.5 * r * r
    }

    /// First-order residuals `a_m x_m - sum_{i != m} x_i - b_m` at a profile.
    pub fn first_order_residuals(&self, x: &Profile) -> Vec<f64> {
        (0..self.players())
            .map(|m| self.inner(m, x.player(m)[0], &x.others(m)))
            .collect()
    }
}

/// Closed-form best response `(sum_i y_i + b_m) / a_m`.
pub fn best_response_quadratic(spec: &QuadraticGameSpec, m: usize, others: &[f64]) -> f64 {
    (others.iter().sum::<f64>() + spec.b[m]) / spec.a[m]
}

/// Unique equilibrium of the quadratic game: solves `a_m x_m - sum_{i != m} x_i = b_m`.
pub fn quadratic_nash(spec: &QuadraticGameSpec) -> Result<NashPoint, GameError> {
    let n = spec.players();
    let mut mat = vec![-1.0; n * n];
    for m in 0..n {
        mat[m * n + m] = spec.a[m];
    }
    let x = solve_dense(n, mat, spec.b.clone())?;
    Profile::from_flat(1, n, x)
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
fn solve_dense(n: usize, mut mat: Vec<f64>, mut rhs: Vec<f64>) -> Result<Vec<f64>, GameError> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| mat[i * n + col].abs().total_cmp(&mat[j * n + col].abs()))
            .unwrap_or(col);
        if mat[pivot * n + col].abs() < 1e-300 {
            return Err(GameError::Singular);
        }
        if pivot != col {
            for k in 0..n {
                mat.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        let diag = mat[col * n + col];
        for row in col + 1..n {
            let factor = mat[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                mat[row * n + k] -= factor * mat[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| mat[row * n + k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / mat[row * n + row];
    }
    Ok(x)
}

/// Oscillatory perturbation `R(t) = 10 (1 - cos(10 t)) + t^2`.
pub fn perturbation_r(t: f64) -> f64 {
    10.0 * (1.0 - (10.0 * t).cos()) + t * t
}

/// The unperturbed (convex) quadratic game.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    spec: QuadraticGameSpec,
}

impl QuadraticGame {
    pub fn new(spec: QuadraticGameSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &QuadraticGameSpec {
        &self.spec
    }
}

impl Game for QuadraticGame {
    fn num_players(&self) -> usize {
        self.spec.players()
    }

    fn dim(&self) -> usize {
        1
    }

    fn cost(&self, m: usize, own: &[f64], others: &[f64]) -> f64 {
        self.spec.cost(m, own[0], others)
    }

    fn reference_response(&self, m: usize, others: &[f64]) -> Option<Vec<f64>> {
        Some(vec![best_response_quadratic(&self.spec, m, others)])
    }
}

/// Quadratic game with the non-convex perturbation `R(x_m - x*_m)` added to
/// every player's cost. The equilibrium is unchanged.
#[derive(Debug, Clone)]
pub struct PerturbedQuadraticGame {
    base: QuadraticGameSpec,
    nash: NashPoint,
}

impl PerturbedQuadraticGame {
    pub fn new(base: QuadraticGameSpec) -> Result<Self, GameError> {
        let nash = quadratic_nash(&base)?;
        let worst = base
            .first_order_residuals(&nash)
            .into_iter()
            .fold(0.0_f64, |acc, r| acc.max(r.abs()));
        if worst > 1e-10 {
            return Err(GameError::InvalidSpec(format!(
                "equilibrium residual {worst:e} exceeds 1e-10"
            )));
        }
        Ok(Self { base, nash })
    }

    pub fn base(&self) -> &QuadraticGameSpec {
        &self.base
    }

    pub fn nash(&self) -> &NashPoint {
        &self.nash
    }
}

impl Game for PerturbedQuadraticGame {
    fn num_players(&self) -> usize {
        self.base.players()
    }

    fn dim(&self) -> usize {
        1
    }

    fn cost(&self, m: usize, own: &[f64], others: &[f64]) -> f64 {
        self.base.cost(m, own[0], others) + perturbation_r(own[0] - self.nash.player(m)[0])
    }

    fn reference_response(&self, m: usize, others: &[f64]) -> Option<Vec<f64>> {
        Some(vec![best_response_quadratic(&self.base, m, others)])
    }
}
