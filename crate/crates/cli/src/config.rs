//! Scenario configuration: a TOML file with one section per model block.
//! Every field has a default, so an empty file describes scenario 1.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use amm_exec_core::dp::{bumped_path, mean_price_path, stress_path, Direction};
use amm_exec_core::grid::GridConfig;
use amm_exec_core::{ExecutionProblem, KernelSet, MarketDynamics, PoolV2, PoolV3TwoLayer};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, FieldError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub problem: ProblemConfig,
    pub dynamics: DynamicsConfig,
    pub pool: PoolConfig,
    pub kernels: KernelConfig,
    pub solver: SolverKind,
    pub grid: GridSection,
    pub path: PathSpec,
    pub seed: u64,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: f64,
    pub steps: usize,
    pub order_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub f0: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolConfig {
    V2 {
        liquidity: f64,
    },
    /// Threshold `p_bar = f0 (1 + spread_bps / 1e4)`.
    V3 {
        upper: f64,
        lower: f64,
        spread_bps: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Explicit {
        weights: Vec<f64>,
        rates: Vec<f64>,
    },
    /// `(1 + alpha t)^-beta` fitted by `count` exponentials on `[0, T]`.
    PowerLaw {
        alpha: f64,
        beta: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Static optimal schedule on a constant-product pool.
    ClosedForm,
    /// Closed-loop dynamic programming feedback policy.
    DpClosed,
    /// Open-loop dynamic programming schedule.
    DpOpen,
    /// Grid solver for the two-layer pool.
    Grid,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::ClosedForm => "closed_form",
            SolverKind::DpClosed => "dp_closed",
            SolverKind::DpOpen => "dp_open",
            SolverKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub price_points: usize,
    pub inventory_points: usize,
    pub impact_points: usize,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Value grid dump written by grid runs.
    pub grid_dump: Option<DumpFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    Bincode,
    Json,
}

/// Price path the schedule is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSpec {
    Named(NamedPath),
    Explicit(Vec<f64>),
}

/// `mean`, `up`, `down` (three-sigma paths) or `bump:<n>:<+|->`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NamedPath {
    Mean,
    Up,
    Down,
    Bump(usize, Direction),
}

impl FromStr for NamedPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(NamedPath::Mean),
            "up" => Ok(NamedPath::Up),
            "down" => Ok(NamedPath::Down),
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                let bad = || format!("unknown path `{s}`; expected mean, up, down or bump:<n>:<+|->");
                if parts.len() != 3 || parts[0] != "bump" {
                    return Err(bad());
                }
                let n = parts[1].parse().map_err(|_| bad())?;
                let direction = match parts[2] {
                    "+" => Direction::Up,
                    "-" => Direction::Down,
                    _ => return Err(bad()),
                };
                Ok(NamedPath::Bump(n, direction))
            }
        }
    }
}

impl TryFrom<String> for NamedPath {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<NamedPath> for String {
    fn from(p: NamedPath) -> String {
        p.to_string()
    }
}

impl fmt::Display for NamedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NamedPath::Mean => write!(f, "mean"),
            NamedPath::Up => write!(f, "up"),
            NamedPath::Down => write!(f, "down"),
            NamedPath::Bump(n, Direction::Up) => write!(f, "bump:{n}:+"),
            NamedPath::Bump(n, Direction::Down) => write!(f, "bump:{n}:-"),
        }
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 10, order_size: 1.0 }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { f0: 1.0, mu: 0.0, sigma: 0.3 }
    }
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig::V2 { liquidity: 1000.0 }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::Explicit { weights: vec![1.0], rates: vec![3.0] }
    }
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::ClosedForm
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridConfig::fine().into()
    }
}

impl From<GridConfig> for GridSection {
    fn from(g: GridConfig) -> Self {
        Self {
            price_points: g.price_points,
            inventory_points: g.inventory_points,
            impact_points: g.impact_points,
            width: g.width,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), grid_dump: None }
    }
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec::Named(NamedPath::Mean)
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            dynamics: DynamicsConfig::default(),
            pool: PoolConfig::default(),
            kernels: KernelConfig::default(),
            solver: SolverKind::default(),
            grid: GridSection::default(),
            path: PathSpec::default(),
            seed: 0,
            output: OutputConfig::default(),
        }
    }
}

/// Built-in parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// One kernel with rate 3.
    S1,
    /// Power law `alpha = 10`, `beta = 0.8` fitted by two exponentials.
    S2,
    /// Weights (0.99, 0.01) on rates (0, 5).
    S3,
    /// Two-layer pool `L0 = 1000`, `L1 = 500`, threshold 25 bps below `f0`, grid solver.
    V3,
}

impl Preset {
    pub fn config(self) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        match self {
            Preset::S1 => {}
            Preset::S2 => cfg.kernels = KernelConfig::PowerLaw { alpha: 10.0, beta: 0.8, count: 2 },
            Preset::S3 => cfg.kernels = KernelConfig::Explicit { weights: vec![0.99, 0.01], rates: vec![0.0, 5.0] },
            Preset::V3 => {
                cfg.pool = PoolConfig::V3 { upper: 1000.0, lower: 500.0, spread_bps: -25.0 };
                cfg.solver = SolverKind::Grid;
                cfg.grid = GridConfig::coarse().into();
            }
        }
        cfg
    }
}

/// Model objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Validated {
    pub problem: ExecutionProblem,
    pub dynamics: MarketDynamics,
    pub pool: ValidPool,
    pub grid: GridConfig,
    pub path: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum ValidPool {
    V2(PoolV2),
    V3(PoolV3TwoLayer),
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_else(|| "file".into());
            CliError::Validation(vec![FieldError::new(field, e.message().to_string())])
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always representable in TOML")
    }

    /// Checks every field and builds the model objects, reporting all
    /// violations at once.
    pub fn validate(&self) -> Result<Validated, CliError> {
        let mut errors = Vec::new();
        let mut check = |field: &str, ok: bool, message: String| {
            if !ok {
                errors.push(FieldError::new(field, message));
            }
        };
        let p = &self.problem;
        check("problem.horizon", p.horizon > 0.0 && p.horizon.is_finite(), format!("must be positive, got {}", p.horizon));
        check("problem.steps", p.steps >= 1, "must be at least 1".into());
        check("problem.order_size", p.order_size.is_finite(), format!("must be finite, got {}", p.order_size));
        let d = &self.dynamics;
        check("dynamics.f0", d.f0 > 0.0 && d.f0.is_finite(), format!("must be positive, got {}", d.f0));
        check("dynamics.mu", d.mu.is_finite(), format!("must be finite, got {}", d.mu));
        check("dynamics.sigma", d.sigma >= 0.0 && d.sigma.is_finite(), format!("must be nonnegative, got {}", d.sigma));
        match self.pool {
            PoolConfig::V2 { liquidity } => {
                check("pool.liquidity", liquidity > 0.0 && liquidity.is_finite(), format!("must be positive, got {liquidity}"))
            }
            PoolConfig::V3 { upper, lower, spread_bps } => {
                check("pool.upper", upper > 0.0 && upper.is_finite(), format!("must be positive, got {upper}"));
                check("pool.lower", lower > 0.0 && lower.is_finite(), format!("must be positive, got {lower}"));
                check(
                    "pool.spread_bps",
                    spread_bps > -1e4 && spread_bps.is_finite(),
                    format!("must exceed -10000 so the threshold stays positive, got {spread_bps}"),
                );
                check("solver", self.solver == SolverKind::Grid, "a two-layer pool requires the grid solver".into());
            }
        }
        match &self.kernels {
            KernelConfig::Explicit { weights, rates } => {
                if let Err(e) = KernelSet::new(weights.clone(), rates.clone()) {
                    check("kernels", false, e.to_string());
                }
            }
            KernelConfig::PowerLaw { alpha, beta, count } => {
                check("kernels.alpha", *alpha > 0.0 && alpha.is_finite(), format!("must be positive, got {alpha}"));
                check("kernels.beta", *beta > 0.0 && beta.is_finite(), format!("must be positive, got {beta}"));
                check("kernels.count", *count >= 1, "must be at least 1".into());
            }
        }
        if self.solver == SolverKind::Grid {
            check("dynamics.mu", d.mu == 0.0, format!("the grid solver requires zero drift, got {}", d.mu));
            if let Err(e) = self.grid_config().validate() {
                check("grid", false, e.to_string());
            }
        }
        match &self.path {
            PathSpec::Named(NamedPath::Bump(n, _)) => {
                check("path", *n <= p.steps, format!("bump index {n} exceeds the number of steps {}", p.steps))
            }
            PathSpec::Named(_) => {}
            PathSpec::Explicit(values) => {
                check(
                    "path",
                    values.len() == p.steps + 1,
                    format!("explicit path needs {} prices, got {}", p.steps + 1, values.len()),
                );
                check(
                    "path",
                    values.iter().all(|v| *v > 0.0 && v.is_finite()),
                    "explicit path prices must be positive".into(),
                );
            }
        }
        if !errors.is_empty() {
            return Err(CliError::Validation(errors));
        }

        let invalid = |e: amm_exec_core::Error| CliError::Validation(vec![FieldError::new("config", e.to_string())]);
        let problem = ExecutionProblem::new(p.horizon, p.steps, p.order_size).map_err(invalid)?;
        let dynamics = MarketDynamics::new(d.f0, d.mu, d.sigma).map_err(invalid)?;
        let pool = match self.pool {
            PoolConfig::V2 { liquidity } => ValidPool::V2(PoolV2::new(liquidity).map_err(invalid)?),
            PoolConfig::V3 { upper, lower, spread_bps } => {
                ValidPool::V3(PoolV3TwoLayer::from_spread_bps(upper, lower, d.f0, spread_bps).map_err(invalid)?)
            }
        };
        let path = match &self.path {
            PathSpec::Named(NamedPath::Mean) => mean_price_path(&dynamics, &problem),
            PathSpec::Named(NamedPath::Up) => stress_path(&dynamics, &problem, Direction::Up),
            PathSpec::Named(NamedPath::Down) => stress_path(&dynamics, &problem, Direction::Down),
            PathSpec::Named(NamedPath::Bump(n, dir)) => bumped_path(&dynamics, &problem, *n, *dir).map_err(invalid)?,
            PathSpec::Explicit(values) => values.clone(),
        };
        Ok(Validated { problem, dynamics, pool, grid: self.grid_config(), path })
    }

    pub fn grid_config(&self) -> GridConfig {
        let g = &self.grid;
        GridConfig { price_points: g.price_points, inventory_points: g.inventory_points, impact_points: g.impact_points, width: g.width }
    }

    pub fn set_grid(&mut self, grid: GridConfig) {
        self.grid = grid.into();
    }
}

/// Parses `Kf,Kx,Ki,z`.
pub fn parse_grid(s: &str) -> Result<GridConfig, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected Kf,Kx,Ki,z, got `{s}`"));
    }
    let size = |i: usize| parts[i].parse::<usize>().map_err(|e| format!("bad grid size `{}`: {e}", parts[i]));
    let width = parts[3].parse::<f64>().map_err(|e| format!("bad grid width `{}`: {e}", parts[3]))?;
    Ok(GridConfig { price_points: size(0)?, inventory_points: size(1)?, impact_points: size(2)?, width })
}
