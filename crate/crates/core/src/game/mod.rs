//! Multiplayer games: the cost-oracle abstraction used by the solver and the
//! two benchmark families (perturbed quadratic games and Cournot oligopolies).
//!
//! Player indices are zero-based throughout the crate. The strategies of the
//! "other" players are always passed as one flat slice holding the remaining
//! `M - 1` strategies in increasing player order, each of length `d`.

mod cournot;
mod quadratic;
mod setup;

pub use cournot::{cournot_gradient, price, synthesize_cournot, CournotGame, CournotGameSpec};
pub use quadratic::{
    best_response_quadratic, perturbation_r, quadratic_nash, PerturbedQuadraticGame, QuadraticGame,
    QuadraticGameSpec,
};
pub use setup::{GameConfig, GameInstance, GameKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("player {player} cost is not finite at own = {own:?}, others = {others:?}")]
    NonFiniteCost {
        player: usize,
        own: Vec<f64>,
        others: Vec<f64>,
    },
    #[error("player index {player} out of range for a {players}-player game")]
    PlayerOutOfRange { player: usize, players: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid game specification: {0}")]
    InvalidSpec(String),
    #[error("equilibrium system is singular")]
    Singular,
    #[error("synthesized production cost c[{good}][{agent}] = {value} is not positive")]
    NonPositiveCost {
        good: usize,
        agent: usize,
        value: f64,
    },
    #[error("operation not supported for this game: {0}")]
    Unsupported(String),
}

/// Deterministic cost oracle of an `M`-player game over `R^d` strategies.
pub trait Game: Send + Sync {
    fn num_players(&self) -> usize;

    fn dim(&self) -> usize;

    /// `E_m(own; others)`. Implementations may assume correct shapes; use
    /// [`eval_cost`] for the checked entry point.
    fn cost(&self, m: usize, own: &[f64], others: &[f64]) -> f64;

    /// Closed-form best response of the game's quadratic core, when the game
    /// has one. Used by grid-based discrepancy diagnostics.
    fn reference_response(&self, _m: usize, _others: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Checked cost evaluation: validates shapes and rejects non-finite results.
pub fn eval_cost(game: &dyn Game, m: usize, own: &[f64], others: &[f64]) -> Result<f64, GameError> {
    let (players, d) = (game.num_players(), game.dim());
    if m >= players {
        return Err(GameError::PlayerOutOfRange { player: m, players });
    }
    if own.len() != d || others.len() != (players - 1) * d {
        return Err(GameError::Shape(format!(
            "expected own of length {d} and others of length {}, got {} and {}",
            (players - 1) * d,
            own.len(),
            others.len()
        )));
    }
    let value = game.cost(m, own, others);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GameError::NonFiniteCost {
            player: m,
            own: own.to_vec(),
            others: others.to_vec(),
        })
    }
}

/// A `d x M` strategy profile stored player by player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    dim: usize,
    players: usize,
    data: Vec<f64>,
}

/// An equilibrium profile `x* = (x*_1, ..., x*_M)`.
pub type NashPoint = Profile;

impl Profile {
    pub fn zeros(dim: usize, players: usize) -> Self {
        Self {
            dim,
            players,
            data: vec![0.0; dim * players],
        }
    }

    /// Builds a profile from player-major data (`data[m * dim + k]`).
    pub fn from_flat(dim: usize, players: usize, data: Vec<f64>) -> Result<Self, GameError> {
        if dim == 0 || players == 0 || data.len() != dim * players {
            return Err(GameError::Shape(format!(
                "profile of {players} players in dimension {dim} needs {} entries, got {}",
                dim * players,
                data.len()
            )));
        }
        Ok(Self { dim, players, data })
    }

    pub fn from_players(columns: &[Vec<f64>]) -> Result<Self, GameError> {
        let dim = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != dim) {
            return Err(GameError::Shape("ragged player strategies".into()));
        }
        Self::from_flat(dim, columns.len(), columns.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn player(&self, m: usize) -> &[f64] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn player_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Strategies of every player except `m`, concatenated in player order.
    pub fn others(&self, m: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len() - self.dim);
        out.extend_from_slice(&self.data[..m * self.dim]);
        out.extend_from_slice(&self.data[(m + 1) * self.dim..]);
        out
    }

    /// Sum of all players' strategies, `x_1 + ... + x_M`.
    pub fn total(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for chunk in self.data.chunks_exact(self.dim) {
            for (s, v) in sum.iter_mut().zip(chunk) {
                *s += v;
            }
        }
        sum
    }
}

/// Constants of the standing assumptions on the cost functions. Only used by
/// test harnesses and the quantitative Laplace check; nothing here is
/// enforced on the games themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    /// Inverse-continuity scale.
    pub eta: f64,
    /// Inverse-continuity exponent.
    pub nu: f64,
    /// Lower bound of the cost gap outside the `R0` ball.
    pub e_inf: f64,
    pub r0: f64,
    /// Bound on `|E_m|`.
    pub c_bar: f64,
    /// Lipschitz constant of the best-response map.
    pub c1: f64,
}

impl AssumptionParams {
    pub fn new(
        eta: f64,
        nu: f64,
        e_inf: f64,
        r0: f64,
        c_bar: f64,
        c1: f64,
    ) -> Result<Self, GameError> {
        let p = Self {
            eta,
            nu,
            e_inf,
            r0,
            c_bar,
            c1,
        };
        let named = [
            ("eta", eta),
            ("nu", nu),
            ("e_inf", e_inf),
            ("r0", r0),
            ("c_bar", c_bar),
            ("c1", c1),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GameError::InvalidSpec(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn others_skips_the_player() {
        let p = Profile::from_players(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(p.others(0), vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.others(1), vec![1.0, 2.0, 5.0, 6.0]);
        assert_eq!(p.others(2), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.total(), vec![9.0, 12.0]);
    }

    #[test]
    fn eval_cost_checks_shapes_and_finiteness() {
        let game = QuadraticGame::new(QuadraticGameSpec::new(vec![5.0; 4], vec![0.0; 4]).unwrap());
        assert!(matches!(
            eval_cost(&game, 4, &[0.0], &[0.0; 3]),
            Err(GameError::PlayerOutOfRange { .. })
        ));
        assert!(matches!(
            eval_cost(&game, 0, &[0.0], &[0.0; 2]),
            Err(GameError::Shape(_))
        ));
        let err = eval_cost(&game, 1, &[1e300], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, GameError::NonFiniteCost { player: 1, .. }));
    }

    #[test]
    fn assumption_params_must_be_positive() {
        assert!(AssumptionParams::new(1.0, 0.5, 1.0, 1.0, 1.0, 0.1).is_ok());
        assert!(AssumptionParams::new(1.0, 0.0, 1.0, 1.0, 1.0, 0.1).is_err());
        assert!(AssumptionParams::new(-1.0, 0.5, 1.0, 1.0, 1.0, 0.1).is_err());
    }
}
