//! Runs one scenario with the configured solver.

use std::time::Instant;

use amm_exec_core::closed_form::solve_general;
use amm_exec_core::dp::{backward_closed_loop, backward_open_loop, replay_schedule, simulate_closed_loop, TradeRecord};
use amm_exec_core::grid::{evaluate_policy, solve_backward, ValueGrid};
use amm_exec_core::{fit_power_law, FitOptions, KernelSet, PoolV2, PoolV3TwoLayer, PowerLawTarget, Schedule};
use serde::{Deserialize, Serialize};

use crate::config::{KernelConfig, ScenarioConfig, SolverKind, ValidPool, Validated};
use crate::error::CliError;

/// Kernels used by a run, with the fit residual when they were fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
    pub fit_rms: Option<f64>,
}

/// Deterministic run summary; wall-clock times live in [`Timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub solver: String,
    pub kernels: KernelReport,
    pub volume_error: f64,
    /// Sum of cash flows along the evaluated path.
    pub path_proceeds: f64,
    pub grid: Option<GridReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub price_points: usize,
    pub inventory_points: usize,
    pub impact_points: usize,
    pub width: f64,
    pub nodes_per_step: usize,
    /// Candidates whose next impact fell beyond the impact grid, per step.
    pub clamped_candidates: Vec<u64>,
    /// Optimal decisions whose next impact fell beyond the impact grid, per step.
    pub clamped_decisions: Vec<u64>,
    /// Path steps priced outside the price grid.
    pub price_clamps: usize,
    /// Path steps whose impact state fell beyond the impact grid.
    pub impact_clamps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    /// `(step, seconds, expectation seconds)` for grid runs.
    pub grid_steps: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub schedule: Schedule,
    pub records: Vec<TradeRecord>,
    pub times: Vec<f64>,
    pub order_size: f64,
    pub diagnostics: Diagnostics,
    pub timing: Timing,
    pub grid: Option<ValueGrid>,
}

/// Builds the kernel set, fitting the power law when requested.
pub fn resolve_kernels(cfg: &ScenarioConfig) -> Result<(KernelSet, Option<f64>), CliError> {
    match &cfg.kernels {
        KernelConfig::Explicit { weights, rates } => Ok((KernelSet::new(weights.clone(), rates.clone())?, None)),
        KernelConfig::PowerLaw { alpha, beta, count } => {
            let target = PowerLawTarget::new(*alpha, *beta, cfg.problem.horizon)?;
            let options = FitOptions { seed: cfg.seed, ..FitOptions::default() };
            let fit = fit_power_law(&target, count - 1, &options)?;
            Ok((fit.kernels, Some(fit.rms)))
        }
    }
}

/// Solves the scenario and evaluates the result on the configured path.
/// `warm` replaces the grid solve with a previously solved value grid.
pub fn run_scenario(cfg: &ScenarioConfig, warm: Option<ValueGrid>) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    let v = cfg.validate()?;
    let (kernels, fit_rms) = resolve_kernels(cfg)?;
    let mut grid_report = None;
    let mut grid_steps = Vec::new();
    let mut grid = None;
    let records = match cfg.solver {
        SolverKind::ClosedForm => {
            let pool = v2_pool(&v, cfg.solver)?;
            let schedule = solve_general(&v.dynamics, &kernels, &v.problem, &pool)?.schedule;
            replay_schedule(&schedule, &v.path, &kernels, &v.problem, &pool)?
        }
        SolverKind::DpOpen => {
            let pool = v2_pool(&v, cfg.solver)?;
            let schedule = backward_open_loop(&v.dynamics, &kernels, &v.problem, &pool)?.schedule();
            replay_schedule(&schedule, &v.path, &kernels, &v.problem, &pool)?
        }
        SolverKind::DpClosed => {
            let pool = v2_pool(&v, cfg.solver)?;
            let coefficients = backward_closed_loop(&v.dynamics, &kernels, &v.problem, &pool)?;
            simulate_closed_loop(&coefficients, &v.path)?
        }
        SolverKind::Grid => {
            let pool = match v.pool {
                ValidPool::V3(pool) => pool,
                ValidPool::V2(pool) => PoolV3TwoLayer::degenerate(pool, v.dynamics.f0)?,
            };
            let solved = match warm {
                Some(g) => {
                    if *g.config() != v.grid {
                        tracing::warn!(loaded = ?g.config(), configured = ?v.grid, "using the loaded grid resolution");
                    }
                    g
                }
                None => solve_backward(&v.grid, &v.dynamics, &v.problem, &kernels, &pool)?,
            };
            let policy = evaluate_policy(&solved, &v.path)?;
            let d = solved.diagnostics();
            let config = solved.config();
            grid_report = Some(GridReport {
                price_points: config.price_points,
                inventory_points: config.inventory_points,
                impact_points: config.impact_points,
                width: config.width,
                nodes_per_step: d.nodes_per_step,
                clamped_candidates: d.steps.iter().map(|s| s.clamped_candidates).collect(),
                clamped_decisions: d.steps.iter().map(|s| s.clamped_decisions).collect(),
                price_clamps: policy.price_clamps,
                impact_clamps: policy.impact_clamps,
            });
            grid_steps = d.steps.iter().map(|s| (s.step, s.seconds, s.expectation_seconds)).collect();
            grid = Some(solved);
            policy.records
        }
    };
    let schedule = Schedule::new(records.iter().map(|r| r.trade).collect());
    let diagnostics = Diagnostics {
        solver: cfg.solver.name().to_string(),
        kernels: KernelReport { weights: kernels.weights().to_vec(), rates: kernels.rates().to_vec(), fit_rms },
        volume_error: schedule.volume_error(v.problem.order_size),
        path_proceeds: records.iter().map(|r| r.cash_flow).sum(),
        grid: grid_report,
    };
    tracing::info!(solver = cfg.solver.name(), seconds = started.elapsed().as_secs_f64(), "scenario solved");
    Ok(RunOutput {
        times: (0..=v.problem.steps).map(|n| v.problem.time(n)).collect(),
        order_size: v.problem.order_size,
        schedule,
        records,
        diagnostics,
        timing: Timing { total_seconds: started.elapsed().as_secs_f64(), grid_steps },
        grid,
    })
}

fn v2_pool(v: &Validated, solver: SolverKind) -> Result<PoolV2, CliError> {
    match v.pool {
        ValidPool::V2(pool) => Ok(pool),
        ValidPool::V3(_) => Err(CliError::Validation(vec![crate::error::FieldError::new(
            "solver",
            format!("{} needs a constant-product pool", solver.name()),
        )])),
    }
}
