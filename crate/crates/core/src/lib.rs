//! Smooth fictitious play (SFP) in population network games.
//!
//! Four views of the same learning process are provided:
//!
//! * [`abm`]: the agent-based simulation, one weight vector per agent;
//! * [`pde`]: the continuity equation for the belief density of binary populations;
//! * [`moments`]: mean/variance dynamics under a second-order moment closure;
//! * [`dynamics`]: the homogeneous (point-mass) belief ODE.
//!
//! [`equilibrium`] computes quantal response equilibria and the Lyapunov
//! functions used to certify convergence, and [`experiments`] wires it all
//! into reproducible runs with CSV and SVG output.

pub mod abm;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod game;
pub mod moments;
pub mod pde;
pub mod svg;

pub use dynamics::{SfpParams, Trajectory};
pub use error::{Result, SfpError};
pub use game::{BeliefProfile, MixedStrategy, PopulationNetworkGame, StrategyProfile};
