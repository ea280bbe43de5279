//! Grid-based backward induction for a two-layer concentrated-liquidity pool.
//!
//! The fundamental price lives on a fixed log-spaced grid centred on the mean
//! terminal log-price, inventory on `k xi / K_x`, and each impact component on
//! a uniform grid scaled by the largest single-trade impact. Conditional
//! expectations use Gaussian cell probabilities between log-price midpoints.

mod solver;
mod two_layer;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::amm::{ExecutionProblem, MarketDynamics, PoolV3TwoLayer};
use crate::error::{Error, Result};
use crate::kernels::KernelSet;

pub use solver::{evaluate_policy, solve_backward, PolicyPath, SolveDiagnostics, StepDiagnostics, ValueGrid};
pub use two_layer::{cashflow_v3, delta_bar, impact_update_v3, SpotState};

/// Grid sizes and the price-grid half-width in terminal standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub price_points: usize,
    pub inventory_points: usize,
    pub impact_points: usize,
    pub width: f64,
}

impl GridConfig {
    pub fn new(price_points: usize, inventory_points: usize, impact_points: usize, width: f64) -> Result<Self> {
        let cfg = Self { price_points, inventory_points, impact_points, width };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `(K_f, K_x, K_I) = (500, 250, 500)`, `z = 3`.
    pub fn fine() -> Self {
        Self { price_points: 500, inventory_points: 250, impact_points: 500, width: 3.0 }
    }

    /// `(K_f, K_x, K_I) = (250, 250, 50)`, `z = 3`.
    pub fn coarse() -> Self {
        Self { price_points: 250, inventory_points: 250, impact_points: 50, width: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.price_points < 2 || self.inventory_points < 2 || self.impact_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid sizes must be at least 2, got K_f={}, K_x={}, K_I={}",
                self.price_points, self.inventory_points, self.impact_points
            )));
        }
        if self.inventory_points > u16::MAX as usize {
            return Err(Error::InvalidGrid(format!("K_x must not exceed {}", u16::MAX)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidGrid(format!("grid width z must be positive, got {}", self.width)));
        }
        Ok(())
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::fine()
    }
}

/// Price, inventory and impact grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    /// `Y^(k) = m_T + z sigma_T (2k - K_f) / K_f`.
    pub log_prices: Vec<f64>,
    pub prices: Vec<f64>,
    /// Log-price midpoints `(Y^(k) + Y^(k+1)) / 2`, `k = 0..K_f`.
    pub midpoints: Vec<f64>,
    pub inventory: Vec<f64>,
    /// Grid step of each impact component; node `k` sits at `k * step`.
    pub impact_steps: Vec<f64>,
    pub impact_points: usize,
}

impl Grids {
    pub fn price_step(&self) -> f64 {
        self.log_prices[1] - self.log_prices[0]
    }

    /// Lower boundary of cell `q` for `q = 0..=K_f + 1`; the outer cells
    /// extend to infinity.
    pub fn boundary(&self, q: usize) -> f64 {
        match q {
            0 => f64::NEG_INFINITY,
            q if q > self.midpoints.len() => f64::INFINITY,
            q => self.midpoints[q - 1],
        }
    }

    pub fn impact_value(&self, component: usize, index: usize) -> f64 {
        self.impact_steps[component] * index as f64
    }

    /// Index of the price node closest in log-price, and whether `price` lies
    /// outside the grid.
    pub fn nearest_price(&self, price: f64) -> (usize, bool) {
        let last = self.prices.len() - 1;
        let pos = (price.ln() - self.log_prices[0]) / self.price_step();
        let outside = pos < -0.5 || pos > last as f64 + 0.5;
        (pos.round().clamp(0.0, last as f64) as usize, outside)
    }
}

/// Builds the fixed grids. The impact step for component `j` is
/// `e^{-rho_j dt} 2 xi sqrt(f^(K_f)) / (L1 K_I)`.
pub fn build_grids(
    cfg: &GridConfig,
    dynamics: &MarketDynamics,
    problem: &ExecutionProblem,
    kernels: &KernelSet,
    pool: &PoolV3TwoLayer,
) -> Result<Grids> {
    cfg.validate()?;
    if !(dynamics.sigma > 0.0) {
        return Err(Error::DegenerateGrid("price grid requires sigma > 0".into()));
    }
    let kf = cfg.price_points;
    let horizon = problem.horizon;
    let centre = dynamics.f0.ln() + (dynamics.mu - 0.5 * dynamics.sigma * dynamics.sigma) * horizon;
    let spread = cfg.width * dynamics.sigma * horizon.sqrt();
    let log_prices: Vec<f64> =
        (0..=kf).map(|k| centre + spread * (2.0 * k as f64 - kf as f64) / kf as f64).collect();
    let prices: Vec<f64> = log_prices.iter().map(|y| y.exp()).collect();
    let midpoints = log_prices.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let kx = cfg.inventory_points;
    let inventory = (0..=kx).map(|k| k as f64 * problem.order_size / kx as f64).collect();
    let scale = 2.0 * problem.order_size * prices[kf].sqrt() / (pool.lower() * cfg.impact_points as f64);
    let impact_steps = kernels.decays(problem.dt()).iter().map(|d| d * scale).collect();
    Ok(Grids { log_prices, prices, midpoints, inventory, impact_steps, impact_points: cfg.impact_points })
}

/// Row-stochastic matrix of one-step price transitions between grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    weights: Vec<f64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.weights[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.weights[from * self.size..(from + 1) * self.size]
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// `omega_{k->q} = Phi((y^(q+) - mu_k)/s) - Phi((y^(q-) - mu_k)/s)` with
/// `mu_k = Y^(k) + (mu - sigma^2/2) dt` and `s = sigma sqrt(dt)`.
pub fn build_transitions(
    dynamics: &MarketDynamics,
    problem: &ExecutionProblem,
    grids: &Grids,
) -> Result<TransitionMatrix> {
    let dt = problem.dt();
    let s = dynamics.sigma * dt.sqrt();
    if !(s > 0.0) {
        return Err(Error::DegenerateGrid("transition width sigma * sqrt(dt) is zero".into()));
    }
    let standard = Normal::standard();
    let size = grids.prices.len();
    let drift = (dynamics.mu - 0.5 * dynamics.sigma * dynamics.sigma) * dt;
    let mut weights = Vec::with_capacity(size * size);
    for k in 0..size {
        let centre = grids.log_prices[k] + drift;
        // difference upper tails where they are more accurate than lower ones
        for q in 0..size {
            let (lo, hi) = (grids.boundary(q), grids.boundary(q + 1));
            let w = if lo - centre > 0.0 {
                standard.sf((lo - centre) / s) - standard.sf((hi - centre) / s)
            } else {
                standard.cdf((hi - centre) / s) - standard.cdf((lo - centre) / s)
            };
            weights.push(w.max(0.0));
        }
        let row = &mut weights[k * size..];
        let total: f64 = row.iter().sum();
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    Ok(TransitionMatrix { size, weights })
}
