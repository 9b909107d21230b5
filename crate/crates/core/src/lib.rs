//! Informative path planning for AUV bathymetric surveys.
//!
//! The crate simulates a multibeam-equipped AUV over a synthetic or loaded
//! seabed, regresses the bathymetry online with a sparse variational GP that
//! treats beam positions as uncertain inputs, and plans the next survey leg with
//! two stacked Bayesian-optimization layers:
//!
//! 1. a flat-UCT tree search whose expansions are batches of `q` viewpoints
//!    maximizing a reparameterized batch UCB (`planner::tree`),
//! 2. a 1-D exact-GP optimization over the Dubins arrival heading maximizing the
//!    acquisition integrated over the sonar swath (`planner::heading`).
//!
//! Lawn-mower and myopic baselines plus the map-RMSE-versus-distance evaluator
//! live in [`baselines`] and [`eval`]; [`harness`] wires everything into
//! reproducible missions.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod planner;
pub mod sensor;
pub mod svgp;
pub mod terrain;
pub mod vehicle;

pub use error::{Error, Result};
pub use geometry::{Point2, Rect};
