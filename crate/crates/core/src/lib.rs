//! Toolkit for simulating and analyzing networks of agents that cooperatively
//! minimize a sum of convex functions. Each agent holds a local iterate, mixes
//! it with neighbor iterates through a doubly stochastic weight matrix, takes a
//! (possibly noisy) subgradient step against its private objective component,
//! and projects back onto a shared constraint set. All rounds are synchronous.
//!
//! The crate is organized around that loop:
//!
//! - [`topology`]: time-varying communication graphs and window connectivity
//! - [`mixing`]: weight rules, products of weight matrices, geometric
//!   consensus-rate certificates
//! - [`problem`]: constraint sets, convex objective components, projections,
//!   subgradient norm bounds, and a brute-force reference solver
//! - [`stochastic`]: gradient noise models, stepsize schedules, simulation-based
//!   gradient estimators, and scalar sequence checks
//! - [`engine`]: the simulation loop itself, per-iteration traces, Monte Carlo
//!   aggregation, and runtime invariant monitors
//! - [`bounds`]: a-priori disagreement and optimality-gap bounds, finite-time
//!   error curves, stopping rules, and bound-versus-empirical comparisons
//!
//! Every random draw is keyed by an explicit tuple of identifiers (see [`rng`]),
//! so any two runs with the same configuration and seed produce byte-identical
//! traces.

pub mod bounds;
pub mod engine;
pub mod linalg;
pub mod mixing;
pub mod problem;
pub mod rng;
pub mod stochastic;
pub mod topology;
