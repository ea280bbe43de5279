//! Cash flows and impact updates on a two-layer pool.
//!
//! Above the threshold `p_bar` the pool has liquidity `L0`, at or below it
//! `L1`. A sell starting above the threshold that pushes the spot below it is
//! split at the crossing trade `delta_bar`.

use crate::amm::PoolV3TwoLayer;
use crate::error::{Error, Result};
use crate::kernels::KernelSet;

/// Fundamental price and relative impacts at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotState {
    pub fundamental: f64,
    pub impacts: Vec<f64>,
}

impl SpotState {
    /// Impacted spot `p = f (1 - sum_j omega_j I_j)`.
    pub fn spot(&self, kernels: &KernelSet) -> f64 {
        self.fundamental * (1.0 - relative_impact(kernels.weights(), &self.impacts))
    }
}

pub(crate) fn relative_impact(weights: &[f64], impacts: &[f64]) -> f64 {
    weights.iter().zip(impacts).map(|(w, i)| w * i).sum()
}

/// Trade that moves the spot from `p > p_bar` down to `p_bar` at liquidity `L0`:
/// `L0 (p - p_bar) / (2 f sqrt(f))`.
pub fn delta_bar(pool: &PoolV3TwoLayer, fundamental: f64, spot: f64) -> Result<f64> {
    if !(spot > pool.threshold()) {
        return Err(Error::domain(format!(
            "spot {spot} is not above the threshold {}",
            pool.threshold()
        )));
    }
    Ok(crossing_trade(pool, fundamental, spot))
}

fn crossing_trade(pool: &PoolV3TwoLayer, fundamental: f64, spot: f64) -> f64 {
    pool.upper() * (spot - pool.threshold()) / (2.0 * fundamental * fundamental.sqrt())
}

/// Cash flow and the impact increment `kick` (before decay) of a sell of size
/// `delta`, given the fundamental `f`, the relative impact `sum_j omega_j I_j`
/// and the spot. The next impacts are `e^{-rho_j dt} (I_j + kick)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TradeEffect {
    pub cash: f64,
    pub kick: f64,
}

/// Precomputed per-state quantities for repeated trade evaluation.
///
/// Each branch is `cash = c0 + t (c1 - t c2)`, `kick = k0 + t k1` with
/// `t = delta` below the threshold or before crossing, and
/// `t = delta - delta_bar` once the trade crosses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StateTerms {
    delta_bar: f64,
    near: Branch,
    far: Branch,
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    c0: f64,
    c1: f64,
    c2: f64,
    k0: f64,
    k1: f64,
}

impl Branch {
    #[inline]
    fn effect(&self, t: f64) -> TradeEffect {
        TradeEffect { cash: self.c0 + t * (self.c1 - t * self.c2), kick: self.k0 + t * self.k1 }
    }
}

impl StateTerms {
    pub fn new(pool: &PoolV3TwoLayer, fundamental: f64, relative: f64) -> Self {
        let level = 1.0 - relative;
        let spot = fundamental * level;
        let root = fundamental.sqrt();
        let above = spot > pool.threshold();
        let layer = if above { pool.upper() } else { pool.lower() };
        let near = Branch {
            c0: 0.0,
            c1: fundamental * level,
            c2: fundamental * root / layer,
            k0: 0.0,
            k1: 2.0 * root / layer,
        };
        let delta_bar = if above { crossing_trade(pool, fundamental, spot) } else { f64::INFINITY };
        let far = if above {
            let head = near.effect(delta_bar);
            let (threshold, threshold_root) = (pool.threshold(), pool.threshold().sqrt());
            Branch {
                c0: head.cash,
                c1: threshold * level,
                c2: threshold * threshold_root / pool.lower(),
                k0: head.kick,
                k1: 2.0 * threshold_root / pool.lower(),
            }
        } else {
            near
        };
        Self { delta_bar, near, far }
    }

    #[inline]
    pub fn effect(&self, delta: f64) -> TradeEffect {
        if delta <= self.delta_bar {
            self.near.effect(delta)
        } else {
            self.far.effect(delta - self.delta_bar)
        }
    }
}

fn check_trade(state: &SpotState, kernels: &KernelSet, delta: f64) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("two-layer trades must be nonnegative, got {delta}")));
    }
    if !(state.fundamental > 0.0) {
        return Err(Error::domain("fundamental price must be positive"));
    }
    if state.impacts.len() != kernels.len() {
        return Err(Error::LengthMismatch { expected: kernels.len(), actual: state.impacts.len() });
    }
    Ok(())
}

/// Cash flow of selling `delta` in the three regimes: below the threshold,
/// above without crossing, and crossing.
pub fn cashflow_v3(pool: &PoolV3TwoLayer, state: &SpotState, kernels: &KernelSet, delta: f64) -> Result<f64> {
    check_trade(state, kernels, delta)?;
    let relative = relative_impact(kernels.weights(), &state.impacts);
    Ok(StateTerms::new(pool, state.fundamental, relative).effect(delta).cash)
}

/// Impacts at the next step after selling `delta`.
pub fn impact_update_v3(
    pool: &PoolV3TwoLayer,
    state: &SpotState,
    kernels: &KernelSet,
    delta: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    check_trade(state, kernels, delta)?;
    let relative = relative_impact(kernels.weights(), &state.impacts);
    let kick = StateTerms::new(pool, state.fundamental, relative).effect(delta).kick;
    Ok(state
        .impacts
        .iter()
        .zip(kernels.decays(dt))
        .map(|(i, d)| d * (i + kick))
        .collect())
}
