//! Consensus-based zeroth-order solver for Nash equilibria of non-convex
//! multiplayer games.
//!
//! `M` players each steer a cloud of `N` particles in `R^d`. Every step, each
//! player's particles are weighted by `exp(-alpha E_m)` against the other
//! players' mean strategies, the weighted mean becomes that player's
//! consensus point, and all particles drift towards it while diffusing with
//! noise proportional to their distance from it.
//!
//! Modules, bottom-up: [`game`] (cost oracles and benchmark games),
//! [`consensus`], [`dynamics`], [`diagnostics`], [`experiments`] (parameter
//! sweeps) and [`io`] (config files, CSV and manifests). [`checks`] bundles
//! the numerical self-tests behind `nash-cbo check`.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod consensus;
pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod game;
pub mod io;
pub mod rng;

/// Version string recorded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
