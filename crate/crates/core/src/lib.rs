//! Optimal execution of large orders on automated market makers with
//! transient price impact.
//!
//! * [`amm`]: pool invariants, swap formulas, price dynamics and schedules.
//! * [`kernels`]: sums of exponential resilience kernels and a power-law fitter.
//! * [`closed_form`]: static optimal schedules on a constant-product pool.
//! * [`dp`]: closed-loop and open-loop dynamic programming solvers.
//! * [`grid`]: numerical solver for a two-layer concentrated-liquidity pool.

pub mod amm;
pub mod closed_form;
pub mod dp;
pub mod error;
pub mod grid;
pub mod kernels;

pub use amm::{ExecutionProblem, MarketDynamics, MomentPower, PoolV2, PoolV3TwoLayer, Schedule};
pub use error::{Error, Result};
pub use kernels::{fit_power_law, FitOptions, FitResult, KernelSet, PowerLawTarget};
