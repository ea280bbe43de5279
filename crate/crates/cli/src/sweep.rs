//! One-parameter sensitivity sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::{KernelConfig, PoolConfig, ScenarioConfig};
use crate::error::{CliError, FieldError};
use crate::output::SeriesRow;
use crate::run::{run_scenario, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Sigma,
    Rho,
    Beta,
    Omega0,
    Steps,
    Liquidity,
    LowerLiquidity,
    SpreadBps,
}

impl FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "sigma" => SweepParameter::Sigma,
            "rho" => SweepParameter::Rho,
            "beta" => SweepParameter::Beta,
            "omega0" => SweepParameter::Omega0,
            "N" => SweepParameter::Steps,
            "L" => SweepParameter::Liquidity,
            "L1" => SweepParameter::LowerLiquidity,
            "s_bar" => SweepParameter::SpreadBps,
            _ => return Err(format!("unknown sweep parameter `{s}`; expected sigma, rho, beta, omega0, N, L, L1 or s_bar")),
        })
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::Sigma => "sigma",
            SweepParameter::Rho => "rho",
            SweepParameter::Beta => "beta",
            SweepParameter::Omega0 => "omega0",
            SweepParameter::Steps => "N",
            SweepParameter::Liquidity => "L",
            SweepParameter::LowerLiquidity => "L1",
            SweepParameter::SpreadBps => "s_bar",
        })
    }
}

/// Copy of `cfg` with `parameter` set to `value`.
pub fn apply(cfg: &ScenarioConfig, parameter: SweepParameter, value: f64) -> Result<ScenarioConfig, CliError> {
    let mut out = cfg.clone();
    let reject = |message: &str| Err(CliError::Validation(vec![FieldError::new(format!("sweep.{parameter}"), message)]));
    match parameter {
        SweepParameter::Sigma => out.dynamics.sigma = value,
        SweepParameter::Rho => match &mut out.kernels {
            KernelConfig::Explicit { rates, .. } if rates.len() == 1 => rates[0] = value,
            _ => return reject("needs a single explicit kernel"),
        },
        SweepParameter::Beta => match &mut out.kernels {
            KernelConfig::PowerLaw { beta, .. } => *beta = value,
            _ => return reject("needs power-law kernels"),
        },
        SweepParameter::Omega0 => match &mut out.kernels {
            KernelConfig::Explicit { weights, .. } if weights.len() == 2 => *weights = vec![value, 1.0 - value],
            _ => return reject("needs two explicit kernels"),
        },
        SweepParameter::Steps => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return reject("step counts must be positive integers");
            }
            out.problem.steps = value as usize;
        }
        SweepParameter::Liquidity => match &mut out.pool {
            PoolConfig::V2 { liquidity } => *liquidity = value,
            PoolConfig::V3 { upper, .. } => *upper = value,
        },
        SweepParameter::LowerLiquidity => match &mut out.pool {
            PoolConfig::V3 { lower, .. } => *lower = value,
            _ => return reject("needs a two-layer pool"),
        },
        SweepParameter::SpreadBps => match &mut out.pool {
            PoolConfig::V3 { spread_bps, .. } => *spread_bps = value,
            _ => return reject("needs a two-layer pool"),
        },
    }
    Ok(out)
}

/// Runs every value in parallel; results keep the order of `values`.
pub fn sweep(cfg: &ScenarioConfig, parameter: SweepParameter, values: &[f64]) -> Result<Vec<RunOutput>, CliError> {
    let configs = values.iter().map(|&v| apply(cfg, parameter, v)).collect::<Result<Vec<_>, _>>()?;
    configs.par_iter().map(|c| run_scenario(c, None)).collect()
}

/// Long-format table with a trade series and an inventory series per value.
/// Inventory points are the holdings before each trade.
pub fn sweep_table(parameter: SweepParameter, values: &[f64], runs: &[RunOutput]) -> Vec<SeriesRow> {
    let mut rows = Vec::new();
    for (value, run) in values.iter().zip(runs) {
        let label = format!("{parameter}={value}");
        for (t, d) in run.times.iter().zip(&run.schedule.trades) {
            rows.push(SeriesRow { series: format!("trade|{label}"), x: *t, y: *d });
        }
        for (t, x) in run.times.iter().zip(run.schedule.inventory_before(run.order_size)) {
            rows.push(SeriesRow { series: format!("inventory|{label}"), x: *t, y: x });
        }
    }
    rows
}
