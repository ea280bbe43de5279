//! Grid resolution studies: grid schedules on the mean path against the
//! closed-loop schedule (equal layers) or a high-resolution grid run.

use amm_exec_core::dp::{backward_closed_loop, forward_simulate, mean_price_path};
use amm_exec_core::grid::{evaluate_policy, solve_backward, GridConfig};
use amm_exec_core::{PoolV2, PoolV3TwoLayer, Schedule};
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, ValidPool};
use crate::error::CliError;
use crate::run::resolve_kernels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub price_points: usize,
    pub inventory_points: usize,
    pub impact_points: usize,
    /// Mean absolute trade difference, in units of the order.
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

/// Errors of each grid's mean-path schedule against the reference. With
/// equal layers the reference is the closed-loop schedule, otherwise the
/// grid solve at `reference`. Grids are solved one after another to bound
/// memory.
pub fn consistency_check(
    cfg: &ScenarioConfig,
    grids: &[GridConfig],
    reference: GridConfig,
) -> Result<(Vec<CheckRow>, Schedule), CliError> {
    let v = cfg.validate()?;
    let (kernels, _) = resolve_kernels(cfg)?;
    let path = mean_price_path(&v.dynamics, &v.problem);
    let pool = match v.pool {
        ValidPool::V3(pool) => pool,
        ValidPool::V2(pool) => PoolV3TwoLayer::degenerate(pool, v.dynamics.f0)?,
    };
    let grid_schedule = |grid: &GridConfig| -> Result<Schedule, CliError> {
        let solved = solve_backward(grid, &v.dynamics, &v.problem, &kernels, &pool)?;
        Ok(evaluate_policy(&solved, &path)?.schedule)
    };
    let target = if pool.upper() == pool.lower() {
        let coefficients = backward_closed_loop(&v.dynamics, &kernels, &v.problem, &PoolV2::new(pool.upper())?)?;
        forward_simulate(&coefficients, &path)?
    } else {
        grid_schedule(&reference)?
    };
    let scale = v.problem.order_size.abs();
    let rows = grids
        .iter()
        .map(|grid| {
            let schedule = grid_schedule(grid)?;
            let errors: Vec<f64> = schedule.trades.iter().zip(&target.trades).map(|(a, b)| (a - b).abs() / scale).collect();
            tracing::info!(?grid, "resolution check done");
            Ok(CheckRow {
                price_points: grid.price_points,
                inventory_points: grid.inventory_points,
                impact_points: grid.impact_points,
                mean_abs_error: errors.iter().sum::<f64>() / errors.len() as f64,
                max_abs_error: errors.iter().cloned().fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok((rows, target))
}
