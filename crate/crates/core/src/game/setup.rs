use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    quadratic_nash, synthesize_cournot, CournotGame, CournotGameSpec, Game, GameError, NashPoint,
    PerturbedQuadraticGame, QuadraticGame, QuadraticGameSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    QuadraticPerturbed,
    Quadratic,
    Cournot,
}

impl GameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::QuadraticPerturbed => "quadratic_perturbed",
            Self::Quadratic => "quadratic",
            Self::Cournot => "cournot",
        }
    }
}

impl std::str::FromStr for GameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quadratic_perturbed" => Ok(Self::QuadraticPerturbed),
            "quadratic" => Ok(Self::Quadratic),
            "cournot" => Ok(Self::Cournot),
            other => Err(format!(
                "unknown game {other:?} (expected quadratic_perturbed, quadratic or cournot)"
            )),
        }
    }
}

/// Everything needed to rebuild a game instance.
///
/// Quadratic games default to `a_m = M + m`, `b_m = m` (one-based `m`) when
/// `a` and `b` are not given. Cournot instances are synthesized from
/// `instance_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub kind: GameKind,
    pub players: usize,
    pub dim: usize,
    #[serde(default)]
    pub instance_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

impl GameConfig {
    pub fn quadratic_perturbed(players: usize) -> Self {
        Self {
            kind: GameKind::QuadraticPerturbed,
            players,
            dim: 1,
            instance_seed: 0,
            a: None,
            b: None,
        }
    }

    pub fn quadratic(players: usize) -> Self {
        Self {
            kind: GameKind::Quadratic,
            ..Self::quadratic_perturbed(players)
        }
    }

    pub fn cournot(dim: usize, players: usize, instance_seed: u64) -> Self {
        Self {
            kind: GameKind::Cournot,
            players,
            dim,
            instance_seed,
            a: None,
            b: None,
        }
    }

    fn quadratic_spec(&self) -> Result<QuadraticGameSpec, GameError> {
        if self.dim != 1 {
            return Err(GameError::Unsupported(format!(
                "quadratic games have d = 1, got d = {}",
                self.dim
            )));
        }
        match (&self.a, &self.b) {
            (None, None) => Ok(QuadraticGameSpec::benchmark(self.players)),
            (Some(a), Some(b)) if a.len() == self.players => {
                QuadraticGameSpec::new(a.clone(), b.clone())
            }
            (Some(a), Some(_)) => Err(GameError::Shape(format!(
                "{} coefficients given for {} players",
                a.len(),
                self.players
            ))),
            _ => Err(GameError::InvalidSpec(
                "give both a and b or neither".into(),
            )),
        }
    }

    pub fn instantiate(&self) -> Result<GameInstance, GameError> {
        if self.players == 0 || self.dim == 0 {
            return Err(GameError::InvalidSpec(
                "players and dim must be positive".into(),
            ));
        }
        if self.kind != GameKind::Cournot && self.instance_seed != 0 {
            return Err(GameError::InvalidSpec(
                "instance_seed applies to cournot games only".into(),
            ));
        }
        match self.kind {
            GameKind::Quadratic => {
                let spec = self.quadratic_spec()?;
                let nash = quadratic_nash(&spec)?;
                Ok(GameInstance {
                    game: Arc::new(QuadraticGame::new(spec)),
                    nash,
                    cournot: None,
                })
            }
            GameKind::QuadraticPerturbed => {
                let game = PerturbedQuadraticGame::new(self.quadratic_spec()?)?;
                let nash = game.nash().clone();
                Ok(GameInstance {
                    game: Arc::new(game),
                    nash,
                    cournot: None,
                })
            }
            GameKind::Cournot => {
                if self.a.is_some() || self.b.is_some() {
                    return Err(GameError::InvalidSpec(
                        "a and b apply to quadratic games only".into(),
                    ));
                }
                let (spec, nash) = synthesize_cournot(self.dim, self.players, self.instance_seed)?;
                Ok(GameInstance {
                    game: Arc::new(CournotGame::new(spec.clone())),
                    nash,
                    cournot: Some(spec),
                })
            }
        }
    }
}

/// A ready-to-run game with its known equilibrium.
#[derive(Clone)]
pub struct GameInstance {
    pub game: Arc<dyn Game>,
    pub nash: NashPoint,
    /// Present for Cournot games, which report a first-order residual.
    pub cournot: Option<CournotGameSpec>,
}
