//! Equilibrium and mechanism-design solvers for a two-class crowdsourcing
//! game: a requester posts rewards and quality requirements, workers of
//! high or low capability pick at most one task each.
//!
//! - [`ne`]: continuum Nash equilibrium and its verifier.
//! - [`mech_opt`]: the requester's optimal mechanism under full rationality.
//! - [`che`]: cognitive-hierarchy outcomes and reward search under them.
//! - [`oracles`]: brute-force references used by the tests.

pub mod che;
pub mod error;
pub mod mech_opt;
pub mod model;
pub mod ne;
pub mod oracles;
mod roots;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{
    eligible_tasks, requester_profit, worker_payoff, LogUtility, Mechanism, Population, SolverConfig, Task,
    TaskCatalog, TaskSet, UtilityModel,
};
