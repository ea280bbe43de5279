//! Constant-product pool mechanics, fundamental price dynamics and the shared
//! problem and schedule types.
//!
//! Pool state is carried as `(L, p)` only. Reserves follow from
//! `q_a = L / sqrt(p)` and `q_b = L * sqrt(p)` whenever they are needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio `delta * sqrt(p) / L` above which the first-order expansion is
/// flagged as inaccurate.
pub const EXPANSION_WARN_RATIO: f64 = 0.1;
/// Ratio above which the first-order expansion is rejected outright.
pub const EXPANSION_MAX_RATIO: f64 = 0.5;

fn positive(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Uniswap v2 style pool with constant liquidity `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolV2 {
    liquidity: f64,
}

impl PoolV2 {
    pub fn new(liquidity: f64) -> Result<Self> {
        Ok(Self { liquidity: positive("liquidity", liquidity)? })
    }

    pub fn liquidity(&self) -> f64 {
        self.liquidity
    }

    /// Reserves `(q_a, q_b)` implied by the spot price.
    pub fn reserves(&self, spot: f64) -> Result<(f64, f64)> {
        let sqrt_p = positive("spot price", spot)?.sqrt();
        Ok((self.liquidity / sqrt_p, self.liquidity * sqrt_p))
    }

    /// Exact amount of token b received for selling `delta_a` of token a.
    pub fn swap_out_exact(&self, spot: f64, delta_a: f64) -> Result<f64> {
        let spot = positive("spot price", spot)?;
        if !(delta_a.is_finite() && delta_a >= 0.0) {
            return Err(Error::domain(format!("sell amount must be nonnegative, got {delta_a}")));
        }
        Ok(delta_a * spot / (1.0 + delta_a * spot.sqrt() / self.liquidity))
    }

    /// Exact post-swap spot price.
    pub fn post_swap_price_exact(&self, spot: f64, delta_a: f64) -> Result<f64> {
        let spot = positive("spot price", spot)?;
        let r = 1.0 + delta_a * spot.sqrt() / self.liquidity;
        if r <= 0.0 {
            return Err(Error::domain("trade drains the token-b reserve"));
        }
        Ok(spot / (r * r))
    }

    fn expansion_ratio(&self, spot: f64, delta_a: f64) -> Result<f64> {
        let spot = positive("spot price", spot)?;
        let ratio = delta_a * spot.sqrt() / self.liquidity;
        if ratio.abs() >= EXPANSION_MAX_RATIO {
            return Err(Error::ExpansionInvalid { ratio });
        }
        Ok(ratio)
    }

    fn checked(ratio: f64, approx: f64) -> Result<f64> {
        if ratio.abs() > EXPANSION_WARN_RATIO {
            Err(Error::ExpansionWarning { ratio, approx })
        } else {
            Ok(approx)
        }
    }

    /// First-order execution price `p (1 - delta sqrt(p) / L)`.
    pub fn exec_price_first_order(&self, spot: f64, delta_a: f64) -> Result<f64> {
        let ratio = self.expansion_ratio(spot, delta_a)?;
        Self::checked(ratio, spot * (1.0 - ratio))
    }

    /// First-order post-swap price `p (1 - 2 delta sqrt(p) / L)`.
    pub fn post_swap_price_first_order(&self, spot: f64, delta_a: f64) -> Result<f64> {
        let ratio = self.expansion_ratio(spot, delta_a)?;
        Self::checked(ratio, spot * (1.0 - 2.0 * ratio))
    }
}

/// Two-layer concentrated liquidity: `upper` above the threshold price,
/// `lower` at or below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolV3TwoLayer {
    upper: f64,
    lower: f64,
    threshold: f64,
}

impl PoolV3TwoLayer {
    pub fn new(upper: f64, lower: f64, threshold: f64) -> Result<Self> {
        Ok(Self {
            upper: positive("upper liquidity", upper)?,
            lower: positive("lower liquidity", lower)?,
            threshold: positive("threshold price", threshold)?,
        })
    }

    /// Threshold placed at `f0 * (1 + spread_bps / 1e4)`.
    pub fn from_spread_bps(upper: f64, lower: f64, f0: f64, spread_bps: f64) -> Result<Self> {
        Self::new(upper, lower, f0 * (1.0 + spread_bps * 1e-4))
    }

    /// Both layers equal to the v2 liquidity.
    pub fn degenerate(pool: PoolV2, threshold: f64) -> Result<Self> {
        Self::new(pool.liquidity(), pool.liquidity(), threshold)
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Geometric Brownian motion for the fundamental price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketDynamics {
    pub f0: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Powers for which closed-form lognormal moments are provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentPower {
    Half,
    One,
    ThreeHalves,
}

impl MomentPower {
    pub fn exponent(self) -> f64 {
        match self {
            MomentPower::Half => 0.5,
            MomentPower::One => 1.0,
            MomentPower::ThreeHalves => 1.5,
        }
    }
}

impl TryFrom<f64> for MomentPower {
    type Error = Error;

    fn try_from(power: f64) -> Result<Self> {
        if power == 0.5 {
            Ok(MomentPower::Half)
        } else if power == 1.0 {
            Ok(MomentPower::One)
        } else if power == 1.5 {
            Ok(MomentPower::ThreeHalves)
        } else {
            Err(Error::domain(format!("unsupported moment power {power}")))
        }
    }
}

impl MarketDynamics {
    pub fn new(f0: f64, mu: f64, sigma: f64) -> Result<Self> {
        positive("initial price", f0)?;
        if !mu.is_finite() {
            return Err(Error::domain("drift must be finite"));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::domain(format!("volatility must be nonnegative, got {sigma}")));
        }
        Ok(Self { f0, mu, sigma })
    }

    /// Growth rate `c` in `E[f_t^q] = f0^q e^{c t}`.
    pub fn moment_rate(&self, power: MomentPower) -> f64 {
        match power {
            MomentPower::One => self.mu,
            MomentPower::Half => 0.5 * self.mu - self.sigma * self.sigma / 8.0,
            MomentPower::ThreeHalves => 1.5 * self.mu + 3.0 * self.sigma * self.sigma / 8.0,
        }
    }

    /// `E[f_n^q]` at step `n`.
    pub fn moment(&self, power: MomentPower, n_steps: usize, dt: f64) -> f64 {
        let t = n_steps as f64 * dt;
        self.f0.powf(power.exponent()) * (self.moment_rate(power) * t).exp()
    }

    /// `E[f_a sqrt(f_b)]` with the full power on the later index.
    pub fn cross_moment(&self, m: usize, n: usize, dt: f64) -> f64 {
        let (late, early) = if m >= n { (m, n) } else { (n, m) };
        let exponent = self.mu * (late as f64 + 0.5 * early as f64) * dt
            + 3.0 * self.sigma * self.sigma / 8.0 * early as f64 * dt;
        self.f0 * self.f0.sqrt() * exponent.exp()
    }
}

/// Horizon `T` split into `N` equal steps; trades happen at `t_0..t_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionProblem {
    pub horizon: f64,
    pub steps: usize,
    pub order_size: f64,
}

impl ExecutionProblem {
    pub fn new(horizon: f64, steps: usize, order_size: f64) -> Result<Self> {
        positive("horizon", horizon)?;
        if steps == 0 {
            return Err(Error::domain("at least one step is required"));
        }
        if !order_size.is_finite() {
            return Err(Error::domain("order size must be finite"));
        }
        Ok(Self { horizon, steps, order_size })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_n`, computed so that `time(N) == T` exactly.
    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.steps as f64
    }

    pub fn trade_count(&self) -> usize {
        self.steps + 1
    }
}

/// Trades `delta_0..delta_N` in token a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub trades: Vec<f64>,
}

impl Schedule {
    pub fn new(trades: Vec<f64>) -> Self {
        Self { trades }
    }

    pub fn len(&self) -> usize {
        self.trades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.trades.iter().sum()
    }

    /// Absolute deviation from the volume constraint.
    pub fn volume_error(&self, order_size: f64) -> f64 {
        (self.total() - order_size).abs()
    }

    pub fn satisfies_volume(&self, order_size: f64) -> bool {
        self.volume_error(order_size) <= 1e-9 * order_size.abs().max(f64::MIN_POSITIVE)
    }

    /// Inventory held after each trade, starting from `order_size`.
    pub fn inventory_after(&self, order_size: f64) -> Vec<f64> {
        self.trades
            .iter()
            .scan(order_size, |x, d| {
                *x -= d;
                Some(*x)
            })
            .collect()
    }

    /// Inventory held before each trade.
    pub fn inventory_before(&self, order_size: f64) -> Vec<f64> {
        let mut before = Vec::with_capacity(self.trades.len());
        let mut x = order_size;
        for d in &self.trades {
            before.push(x);
            x -= d;
        }
        before
    }
}
