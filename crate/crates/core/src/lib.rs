//! Numerical laboratory for partially observed optimal control of
//! forward-backward stochastic systems with random jumps.
//!
//! The library simulates scalar forward-backward stochastic differential
//! equations driven by two Brownian motions and two finite-activity Poisson
//! random measures, solves the backward components by least-squares Monte
//! Carlo, changes measure between the physical and the reference probability,
//! checks stochastic-maximum-principle inequalities by spike variations and
//! adjoint systems, solves the associated linear-quadratic control problem in
//! closed loop, and runs the nonlinear filter for jump-observation systems.
//!
//! Everything is scalar-state (`f64`) and grid-based. Monte Carlo work is
//! parallelised over paths with per-path counter-based RNG substreams so all
//! results are reproducible bit-for-bit regardless of thread count.

pub mod adjoint;
pub mod drivers;
pub mod error;
pub mod filtering;
pub mod forward;
pub mod girsanov;
pub mod grid;
pub mod hamiltonian;
pub mod lq;
pub mod marks;
pub mod norms;
pub mod order;
pub mod picard;
pub mod pide;
pub mod problem;
pub mod regression;
pub mod rng;
pub mod spike;
pub mod stats;
pub mod variation;

mod backward;
mod diff;

pub use backward::{multi_design, poly_design, BackwardBundle, BsdepEngine, LoadingView};
pub use error::{Error, Result};
