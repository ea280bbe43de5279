//! Closed-loop and open-loop dynamic programming on a constant-product pool.
//!
//! Both value functions are quadratic in the inventory and the impact state:
//!
//! `v_n = x f (A + sum_j B_j I_j + C x sqrt(f)) + sqrt(f) (D + sum_j E_j I_j + sum_jk F_jk I_j I_k)`
//!
//! The closed-loop form uses the current fundamental `f_n`; the open-loop form
//! uses `f0` and deterministic mean impacts.

use crate::amm::{ExecutionProblem, MarketDynamics, PoolV2, Schedule};
use crate::error::{Error, Result};
use crate::kernels::KernelSet;

/// Coefficients of the quadratic value function at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCoefficients {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: f64,
    pub d: f64,
    pub e: Vec<f64>,
    /// Row-major `(J+1) x (J+1)` matrix.
    pub f: Vec<f64>,
}

impl ValueCoefficients {
    fn f(&self, j: usize, k: usize) -> f64 {
        self.f[j * self.b.len() + k]
    }

    /// Evaluates the quadratic form at `(x, I)` with reference price `price`.
    fn evaluate(&self, inventory: f64, impacts: &[f64], price: f64) -> f64 {
        let root = price.sqrt();
        let linear: f64 = self.b.iter().zip(impacts).map(|(b, i)| b * i).sum();
        let e_part: f64 = self.e.iter().zip(impacts).map(|(e, i)| e * i).sum();
        let mut quad = 0.0;
        for (j, ij) in impacts.iter().enumerate() {
            for (k, ik) in impacts.iter().enumerate() {
                quad += self.f(j, k) * ij * ik;
            }
        }
        inventory * price * (self.a + linear + self.c * inventory * root) + root * (self.d + e_part + quad)
    }
}

/// Coefficients of the optimal control `delta_n` (built from step `n+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGains {
    pub phi: f64,
    pub theta1: f64,
    pub theta2: Vec<f64>,
    pub theta3: f64,
}

impl ControlGains {
    /// `[theta1 + sum_j I_j theta2_j + x sqrt(f) theta3] / (2 phi sqrt(f))`.
    fn control(&self, inventory: f64, impacts: &[f64], price: f64) -> f64 {
        let root = price.sqrt();
        let impact_term: f64 = self.theta2.iter().zip(impacts).map(|(t, i)| t * i).sum();
        (self.theta1 + impact_term + inventory * root * self.theta3) / (2.0 * self.phi * root)
    }
}

/// State of an execution at one time step. Impacts are dimensionless relative
/// impacts, one per kernel component.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionState {
    pub inventory: f64,
    pub impacts: Vec<f64>,
    pub fundamental: f64,
}

impl ExecutionState {
    pub fn initial(order_size: f64, kernel_count: usize, fundamental: f64) -> Self {
        Self { inventory: order_size, impacts: vec![0.0; kernel_count], fundamental }
    }
}

/// One executed trade with its cash flow and the pool spot price around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeRecord {
    pub trade: f64,
    pub inventory_after: f64,
    pub cash_flow: f64,
    pub spot_before: f64,
    pub spot_after: f64,
}

fn check_terminal_index(n: usize, steps: usize) -> Result<()> {
    if n > steps {
        return Err(Error::domain(format!("time index {n} exceeds the horizon {steps}")));
    }
    Ok(())
}

fn check_impacts(impacts: &[f64], kernels: &KernelSet) -> Result<()> {
    if impacts.len() != kernels.len() {
        return Err(Error::LengthMismatch { expected: kernels.len(), actual: impacts.len() });
    }
    Ok(())
}

/// Quadratic terms shared by both backward passes: given `phi` and `theta`,
/// returns the step-`n` coefficients from the propagated step-`n+1` ones.
fn quadratic_update(propagated: ValueCoefficients, gains: &ControlGains) -> ValueCoefficients {
    let ValueCoefficients { a, b, c, d, e, f } = propagated;
    let half = 1.0 / (2.0 * gains.phi);
    let quarter = 1.0 / (4.0 * gains.phi);
    let size = b.len();
    ValueCoefficients {
        a: a + half * gains.theta1 * gains.theta3,
        b: b.iter().zip(&gains.theta2).map(|(b, t2)| b + half * t2 * gains.theta3).collect(),
        c: c + quarter * gains.theta3 * gains.theta3,
        d: d + quarter * gains.theta1 * gains.theta1,
        e: e.iter().zip(&gains.theta2).map(|(e, t2)| e + half * gains.theta1 * t2).collect(),
        f: f
            .iter()
            .enumerate()
            .map(|(idx, f)| f + quarter * (gains.theta2[idx / size] * gains.theta2[idx % size]))
            .collect(),
    }
}

/// Closed-loop solution: value-function coefficients for `n = 0..=N` and
/// control gains for `n = 0..N`.
#[derive(Debug, Clone)]
pub struct ClosedLoopCoefficients {
    values: Vec<ValueCoefficients>,
    gains: Vec<ControlGains>,
    kernels: KernelSet,
    decays: Vec<f64>,
    liquidity: f64,
    order_size: f64,
}

/// Backward pass for the closed-loop problem under GBM dynamics.
pub fn backward_closed_loop(
    dynamics: &MarketDynamics,
    kernels: &KernelSet,
    problem: &ExecutionProblem,
    pool: &PoolV2,
) -> Result<ClosedLoopCoefficients> {
    let steps = problem.steps;
    let dt = problem.dt();
    let l = pool.liquidity();
    let (mu, s2) = (dynamics.mu, dynamics.sigma * dynamics.sigma);
    let omega = kernels.weights();
    let rho = kernels.rates();
    let size = kernels.len();

    let g_one = (mu * dt).exp();
    let g_three_halves = ((1.5 * mu + 0.375 * s2) * dt).exp();
    let g_half = ((0.5 * mu - 0.125 * s2) * dt).exp();
    let g_b: Vec<f64> = rho.iter().map(|r| ((mu - r) * dt).exp()).collect();
    let g_e: Vec<f64> = rho.iter().map(|r| ((0.5 * mu - r - 0.125 * s2) * dt).exp()).collect();
    let g_f: Vec<f64> = (0..size * size)
        .map(|idx| ((0.5 * mu - (rho[idx / size] + rho[idx % size]) - 0.125 * s2) * dt).exp())
        .collect();

    let terminal = ValueCoefficients {
        a: 1.0,
        b: omega.iter().map(|w| -w).collect(),
        c: -1.0 / l,
        d: 0.0,
        e: vec![0.0; size],
        f: vec![0.0; size * size],
    };
    let mut values = vec![terminal];
    let mut gains = Vec::with_capacity(steps);
    for n in (0..steps).rev() {
        let next = values.last().expect("terminal coefficients present");
        let b_sum: f64 = next.b.iter().zip(&g_b).map(|(b, g)| b * g).sum();
        let e_sum: f64 = next.e.iter().zip(&g_e).map(|(e, g)| e * g).sum();
        let f_sum: f64 = next.f.iter().zip(&g_f).map(|(f, g)| f * g).sum();
        let phi = 1.0 / l + 2.0 / l * b_sum - next.c * g_three_halves - 4.0 / (l * l) * f_sum;
        if !(phi > 0.0) {
            return Err(Error::NonConcave { step: n + 1, phi });
        }
        let theta2 = (0..size)
            .map(|j| {
                let f_row: f64 = (0..size).map(|k| next.f(j, k) * g_f[j * size + k]).sum();
                -omega[j] - next.b[j] * g_b[j] + 4.0 / l * f_row
            })
            .collect();
        let step_gains = ControlGains {
            phi,
            theta1: 1.0 - next.a * g_one + 2.0 / l * e_sum,
            theta2,
            theta3: 2.0 / l * b_sum - 2.0 * next.c * g_three_halves,
        };
        let propagated = ValueCoefficients {
            a: next.a * g_one,
            b: next.b.iter().zip(&g_b).map(|(b, g)| b * g).collect(),
            c: next.c * g_three_halves,
            d: next.d * g_half,
            e: next.e.iter().zip(&g_e).map(|(e, g)| e * g).collect(),
            f: next.f.iter().zip(&g_f).map(|(f, g)| f * g).collect(),
        };
        values.push(quadratic_update(propagated, &step_gains));
        gains.push(step_gains);
    }
    values.reverse();
    gains.reverse();
    tracing::debug!(steps, phi0 = gains.first().map(|g| g.phi), "closed-loop backward pass done");
    Ok(ClosedLoopCoefficients {
        values,
        gains,
        kernels: kernels.clone(),
        decays: kernels.decays(dt),
        liquidity: l,
        order_size: problem.order_size,
    })
}

impl ClosedLoopCoefficients {
    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    pub fn liquidity(&self) -> f64 {
        self.liquidity
    }

    /// Value-function coefficients at step `n` (`0 <= n <= N`).
    pub fn value_coefficients(&self, n: usize) -> &ValueCoefficients {
        &self.values[n]
    }

    /// Gains of the control applied at step `n` (`0 <= n < N`).
    pub fn gains(&self, n: usize) -> &ControlGains {
        &self.gains[n]
    }

    /// Optimal trade at step `n`; at `n = N` the remaining inventory.
    pub fn control(&self, state: &ExecutionState, n: usize) -> Result<f64> {
        check_terminal_index(n, self.steps())?;
        check_impacts(&state.impacts, &self.kernels)?;
        if !(state.fundamental > 0.0) {
            return Err(Error::domain("fundamental price must be positive"));
        }
        if n == self.steps() {
            return Ok(state.inventory);
        }
        Ok(self.gains[n].control(state.inventory, &state.impacts, state.fundamental))
    }

    /// Value function `v_n` at `state`.
    pub fn value(&self, state: &ExecutionState, n: usize) -> Result<f64> {
        check_terminal_index(n, self.steps())?;
        check_impacts(&state.impacts, &self.kernels)?;
        Ok(self.values[n].evaluate(state.inventory, &state.impacts, state.fundamental))
    }

    pub fn executor(&self, fundamental: f64) -> ClosedLoopExecutor<'_> {
        ClosedLoopExecutor {
            coefficients: self,
            state: ExecutionState::initial(self.order_size, self.kernels.len(), fundamental),
            step: 0,
        }
    }
}


/// Applies the first-order cash flow `delta f (1 - sum_j omega_j I_j - delta sqrt(f) / L)`
/// and moves the state to the next step with `I_j <- decay_j (I_j + 2 delta scale / L)`.
fn execute_trade(
    state: &mut ExecutionState,
    trade: f64,
    weights: &[f64],
    decays: &[f64],
    liquidity: f64,
    impact_scale: f64,
) -> TradeRecord {
    let f = state.fundamental;
    let relative: f64 = weights.iter().zip(&state.impacts).map(|(w, i)| w * i).sum();
    let slippage = trade * f.sqrt() / liquidity;
    let inventory_after = state.inventory - trade;
    let record = TradeRecord {
        trade,
        inventory_after,
        cash_flow: trade * f * (1.0 - relative - slippage),
        spot_before: f * (1.0 - relative),
        spot_after: f * (1.0 - relative - 2.0 * slippage),
    };
    let kick = 2.0 * trade * impact_scale / liquidity;
    for (impact, decay) in state.impacts.iter_mut().zip(decays) {
        *impact = decay * (*impact + kick);
    }
    state.inventory = inventory_after;
    record
}

fn check_path(path: &[f64], steps: usize) -> Result<()> {
    if path.len() != steps + 1 {
        return Err(Error::LengthMismatch { expected: steps + 1, actual: path.len() });
    }
    if let Some(bad) = path.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
        return Err(Error::domain(format!("price path values must be positive, got {bad}")));
    }
    Ok(())
}

/// Replays the closed-loop control along a realized price path, owning the
/// inventory and impact updates.
#[derive(Debug, Clone)]
pub struct ClosedLoopExecutor<'a> {
    coefficients: &'a ClosedLoopCoefficients,
    state: ExecutionState,
    step: usize,
}

impl ClosedLoopExecutor<'_> {
    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step > self.coefficients.steps()
    }

    /// Observes the fundamental price of the current step and executes the
    /// optimal trade.
    pub fn advance(&mut self, fundamental: f64) -> Result<TradeRecord> {
        if self.is_finished() {
            return Err(Error::domain("execution already completed"));
        }
        if !(fundamental > 0.0 && fundamental.is_finite()) {
            return Err(Error::domain(format!("fundamental price must be positive, got {fundamental}")));
        }
        self.state.fundamental = fundamental;
        let n = self.step;
        let trade = self.coefficients.control(&self.state, n)?;
        if trade < 0.0 {
            tracing::debug!(step = n, trade, "closed-loop control buys back inventory");
        }
        let c = self.coefficients;
        let record = execute_trade(&mut self.state, trade, c.kernels.weights(), &c.decays, c.liquidity, fundamental.sqrt());
        self.step += 1;
        Ok(record)
    }
}

/// Runs the closed-loop control along `path` (`f_0, ..., f_N`), returning the
/// full trade records.
pub fn simulate_closed_loop(coefficients: &ClosedLoopCoefficients, path: &[f64]) -> Result<Vec<TradeRecord>> {
    check_path(path, coefficients.steps())?;
    let mut executor = coefficients.executor(path[0]);
    path.iter().map(|&f| executor.advance(f)).collect()
}

/// Closed-loop schedule along `path`; the last trade liquidates what is left.
pub fn forward_simulate(coefficients: &ClosedLoopCoefficients, path: &[f64]) -> Result<Schedule> {
    let records = simulate_closed_loop(coefficients, path)?;
    Ok(Schedule::new(records.iter().map(|r| r.trade).collect()))
}

/// Cash flows of a fixed schedule executed along `path`.
pub fn replay_schedule(
    schedule: &Schedule,
    path: &[f64],
    kernels: &KernelSet,
    problem: &ExecutionProblem,
    pool: &PoolV2,
) -> Result<Vec<TradeRecord>> {
    check_path(path, problem.steps)?;
    if schedule.len() != path.len() {
        return Err(Error::LengthMismatch { expected: path.len(), actual: schedule.len() });
    }
    let decays = kernels.decays(problem.dt());
    let mut state = ExecutionState::initial(problem.order_size, kernels.len(), path[0]);
    Ok(schedule
        .trades
        .iter()
        .zip(path)
        .map(|(&trade, &f)| {
            state.fundamental = f;
            execute_trade(&mut state, trade, kernels.weights(), &decays, pool.liquidity(), f.sqrt())
        })
        .collect())
}

/// Open-loop solution in terms of deterministic mean impacts.
#[derive(Debug, Clone)]
pub struct OpenLoopCoefficients {
    values: Vec<ValueCoefficients>,
    gains: Vec<ControlGains>,
    kernels: KernelSet,
    decays: Vec<f64>,
    f0: f64,
    /// `e^{(mu/2 + 3 sigma^2/8) n dt}` for `n = 0..=N`.
    impact_growth: Vec<f64>,
    liquidity: f64,
    order_size: f64,
}

/// Backward pass for the open-loop problem.
///
/// The terminal impact coefficient is `-(1/L) e^{(3mu/2 + 3sigma^2/8) N dt}`,
/// which is what the terminal value `x f0 e^{mu N dt}(1 - ... - x sqrt(f0) e^{(mu/2 + 3sigma^2/8) N dt} / L)`
/// requires.
pub fn backward_open_loop(
    dynamics: &MarketDynamics,
    kernels: &KernelSet,
    problem: &ExecutionProblem,
    pool: &PoolV2,
) -> Result<OpenLoopCoefficients> {
    let steps = problem.steps;
    let dt = problem.dt();
    let l = pool.liquidity();
    let (mu, s2) = (dynamics.mu, dynamics.sigma * dynamics.sigma);
    let omega = kernels.weights();
    let size = kernels.len();
    let decays = kernels.decays(dt);
    let pair_decay: Vec<f64> = (0..size * size).map(|idx| decays[idx / size] * decays[idx % size]).collect();

    let drift = |n: usize| (mu * n as f64 * dt).exp();
    let impact_growth: Vec<f64> = (0..=steps).map(|n| ((0.5 * mu + 0.375 * s2) * n as f64 * dt).exp()).collect();

    let terminal_drift = drift(steps);
    let terminal = ValueCoefficients {
        a: terminal_drift,
        b: omega.iter().map(|w| -w * terminal_drift).collect(),
        c: -terminal_drift * impact_growth[steps] / l,
        d: 0.0,
        e: vec![0.0; size],
        f: vec![0.0; size * size],
    };
    let mut values = vec![terminal];
    let mut gains = Vec::with_capacity(steps);
    for n in (0..steps).rev() {
        let next = values.last().expect("terminal coefficients present");
        let (e_n, h_n) = (drift(n), impact_growth[n]);
        let b_sum: f64 = next.b.iter().zip(&decays).map(|(b, d)| b * d).sum();
        let e_sum: f64 = next.e.iter().zip(&decays).map(|(e, d)| e * d).sum();
        let f_sum: f64 = next.f.iter().zip(&pair_decay).map(|(f, d)| f * d).sum();
        let phi = e_n * h_n / l + 2.0 / l * b_sum * h_n - next.c - 4.0 / (l * l) * f_sum * h_n * h_n;
        if !(phi > 0.0) {
            return Err(Error::NonConcave { step: n + 1, phi });
        }
        let theta2 = (0..size)
            .map(|j| {
                let f_row: f64 = (0..size).map(|k| next.f(j, k) * pair_decay[j * size + k]).sum();
                -omega[j] * e_n - next.b[j] * decays[j] + 4.0 / l * f_row * h_n
            })
            .collect();
        let step_gains = ControlGains {
            phi,
            theta1: e_n - next.a + 2.0 / l * e_sum * h_n,
            theta2,
            theta3: 2.0 / l * b_sum * h_n - 2.0 * next.c,
        };
        let propagated = ValueCoefficients {
            a: next.a,
            b: next.b.iter().zip(&decays).map(|(b, d)| b * d).collect(),
            c: next.c,
            d: next.d,
            e: next.e.iter().zip(&decays).map(|(e, d)| e * d).collect(),
            f: next.f.iter().zip(&pair_decay).map(|(f, d)| f * d).collect(),
        };
        values.push(quadratic_update(propagated, &step_gains));
        gains.push(step_gains);
    }
    values.reverse();
    gains.reverse();
    Ok(OpenLoopCoefficients {
        values,
        gains,
        kernels: kernels.clone(),
        decays,
        f0: dynamics.f0,
        impact_growth,
        liquidity: l,
        order_size: problem.order_size,
    })
}

impl OpenLoopCoefficients {
    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    pub fn value_coefficients(&self, n: usize) -> &ValueCoefficients {
        &self.values[n]
    }

    pub fn gains(&self, n: usize) -> &ControlGains {
        &self.gains[n]
    }

    /// Optimal trade at step `n` given inventory and mean impacts.
    pub fn control(&self, inventory: f64, impacts: &[f64], n: usize) -> Result<f64> {
        check_terminal_index(n, self.steps())?;
        check_impacts(impacts, &self.kernels)?;
        if n == self.steps() {
            return Ok(inventory);
        }
        Ok(self.gains[n].control(inventory, impacts, self.f0))
    }

    pub fn value(&self, inventory: f64, impacts: &[f64], n: usize) -> Result<f64> {
        check_terminal_index(n, self.steps())?;
        check_impacts(impacts, &self.kernels)?;
        Ok(self.values[n].evaluate(inventory, impacts, self.f0))
    }

    /// Deterministic schedule from `x_0 = xi`, `I_0 = 0`.
    pub fn schedule(&self) -> Schedule {
        let mut inventory = self.order_size;
        let mut impacts = vec![0.0; self.kernels.len()];
        let mut trades = Vec::with_capacity(self.steps() + 1);
        for n in 0..=self.steps() {
            let trade = if n == self.steps() { inventory } else { self.gains[n].control(inventory, &impacts, self.f0) };
            let kick = 2.0 * trade * self.f0.sqrt() * self.impact_growth[n] / self.liquidity;
            for (impact, decay) in impacts.iter_mut().zip(&self.decays) {
                *impact = decay * (*impact + kick);
            }
            inventory -= trade;
            trades.push(trade);
        }
        Schedule::new(trades)
    }
}

/// Direction of a three-standard-deviation price move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }
}

/// `f_n = f0 e^{mu n dt}` for `n = 0..=N`.
pub fn mean_price_path(dynamics: &MarketDynamics, problem: &ExecutionProblem) -> Vec<f64> {
    let dt = problem.dt();
    (0..=problem.steps).map(|n| dynamics.f0 * (dynamics.mu * n as f64 * dt).exp()).collect()
}

/// `f_n = f0 e^{(mu - sigma^2/2) n dt +- 3 sigma n sqrt(dt)}`.
pub fn stress_path(dynamics: &MarketDynamics, problem: &ExecutionProblem, direction: Direction) -> Vec<f64> {
    let dt = problem.dt();
    let step = step_log_move(dynamics, dt, direction);
    (0..=problem.steps).map(|n| dynamics.f0 * (step * n as f64).exp()).collect()
}

/// Mean path with a persistent multiplicative bump
/// `e^{(mu - sigma^2/2) dt +- 3 sigma sqrt(dt)}` applied from `bump_index` on.
pub fn bumped_path(
    dynamics: &MarketDynamics,
    problem: &ExecutionProblem,
    bump_index: usize,
    direction: Direction,
) -> Result<Vec<f64>> {
    if bump_index > problem.steps {
        return Err(Error::domain(format!("bump index {bump_index} exceeds the horizon {}", problem.steps)));
    }
    let factor = step_log_move(dynamics, problem.dt(), direction).exp();
    let mut path = mean_price_path(dynamics, problem);
    for f in &mut path[bump_index..] {
        *f *= factor;
    }
    Ok(path)
}

fn step_log_move(dynamics: &MarketDynamics, dt: f64, direction: Direction) -> f64 {
    let sigma = dynamics.sigma;
    (dynamics.mu - 0.5 * sigma * sigma) * dt + direction.sign() * 3.0 * sigma * dt.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(mu: f64, kernels: KernelSet) -> (MarketDynamics, KernelSet, ExecutionProblem, PoolV2) {
        (
            MarketDynamics::new(1.0, mu, 0.3).unwrap(),
            kernels,
            ExecutionProblem::new(1.0, 10, 1.0).unwrap(),
            PoolV2::new(1000.0).unwrap(),
        )
    }

    fn scenario_three() -> KernelSet {
        KernelSet::new(vec![0.99, 0.01], vec![0.0, 5.0]).unwrap()
    }

    #[test]
    fn terminal_coefficients() {
        let (d, k, p, pool) = setup(0.0, scenario_three());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let t = c.value_coefficients(10);
        assert_eq!((t.a, t.c, t.d), (1.0, -1e-3, 0.0));
        assert_eq!(t.b, vec![-0.99, -0.01]);
        assert!(t.e.iter().chain(&t.f).all(|v| *v == 0.0));

        let d = MarketDynamics::new(1.0, 0.02, 0.3).unwrap();
        let o = backward_open_loop(&d, &k, &p, &pool).unwrap();
        let t = o.value_coefficients(10);
        assert_relative_eq!(t.a, 0.02f64.exp(), max_relative = 1e-15);
        assert_relative_eq!(t.b[0], -0.99 * 0.02f64.exp(), max_relative = 1e-15);
        assert_relative_eq!(t.c, -(0.03f64 + 0.375 * 0.09).exp() / 1000.0, max_relative = 1e-15);
    }

    #[test]
    fn last_step_gains_by_hand() {
        let (d, k, p, pool) = setup(0.0, KernelSet::single(3.0).unwrap());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let g = c.gains(9);
        let expected = (-2.0 * (-0.3f64).exp() + 2.0 * (0.375 * 0.09 * 0.1f64).exp()) / 1000.0;
        assert_relative_eq!(g.theta3, expected, max_relative = 1e-13);
        let phi = (1.0 - 2.0 * (-0.3f64).exp() + (0.375 * 0.09 * 0.1f64).exp()) / 1000.0;
        assert_relative_eq!(g.phi, phi, max_relative = 1e-13);
        assert_eq!(g.theta1, 0.0);
    }

    #[test]
    fn cross_coefficients_are_symmetric() {
        let k = KernelSet::new(vec![0.5, 0.3, 0.2], vec![0.1, 2.0, 9.0]).unwrap();
        let (d, k, p, pool) = setup(0.01, k);
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        for n in 0..=10 {
            let v = c.value_coefficients(n);
            for j in 0..3 {
                for m in 0..3 {
                    assert_eq!(v.f(j, m), v.f(m, j));
                }
            }
        }
    }

    #[test]
    fn terminal_control_liquidates() {
        let (d, k, p, pool) = setup(0.0, KernelSet::single(3.0).unwrap());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let state = ExecutionState { inventory: 0.37, impacts: vec![0.01], fundamental: 1.2 };
        assert_eq!(c.control(&state, 10).unwrap(), 0.37);
        assert!(c.control(&state, 11).is_err());
    }

    #[test]
    fn control_follows_explicit_formula_under_price_scaling() {
        let (d, k, p, pool) = setup(0.0, KernelSet::single(3.0).unwrap());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let g = c.gains(4);
        for &f in &[0.5, 1.0, 4.0] {
            let state = ExecutionState { inventory: 0.6, impacts: vec![0.002], fundamental: f };
            let expected = (g.theta1 + 0.002 * g.theta2[0] + 0.6 * f.sqrt() * g.theta3) / (2.0 * g.phi * f.sqrt());
            assert_relative_eq!(c.control(&state, 4).unwrap(), expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn closed_loop_liquidates_completely() {
        let (d, k, p, pool) = setup(0.0, scenario_three());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let records = simulate_closed_loop(&c, &stress_path(&d, &p, Direction::Down)).unwrap();
        assert_eq!(records.last().unwrap().inventory_after, 0.0);
        assert_eq!(records.len(), 11);
    }

    #[test]
    fn scenario_one_mean_path_profile() {
        let (d, k, p, pool) = setup(0.0, KernelSet::single(3.0).unwrap());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let s = forward_simulate(&c, &mean_price_path(&d, &p)).unwrap();
        let t = &s.trades;
        assert!(t[0] > t[10]);
        assert!(t[1..10].iter().all(|x| *x < t[10]));
        assert!(t[1] > t[9]);
    }

    #[test]
    fn first_trade_is_path_independent() {
        let (d, k, p, pool) = setup(0.0, KernelSet::single(3.0).unwrap());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let mean = forward_simulate(&c, &mean_price_path(&d, &p)).unwrap();
        let up = forward_simulate(&c, &stress_path(&d, &p, Direction::Up)).unwrap();
        assert_eq!(mean.trades[0], up.trades[0]);
        for n in 1..5 {
            assert!(up.trades[n] > mean.trades[n], "step {n}");
        }
    }

    #[test]
    fn rejects_bad_paths() {
        let (d, k, p, pool) = setup(0.0, KernelSet::single(3.0).unwrap());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let mut path = mean_price_path(&d, &p);
        path[3] = 0.0;
        assert!(matches!(forward_simulate(&c, &path), Err(Error::Domain(_))));
        assert!(matches!(forward_simulate(&c, &path[..5]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn open_loop_ignores_price_level() {
        let k = KernelSet::single(3.0).unwrap();
        let p = ExecutionProblem::new(1.0, 10, 1.0).unwrap();
        let pool = PoolV2::new(1000.0).unwrap();
        let one = backward_open_loop(&MarketDynamics::new(1.0, 0.0, 0.3).unwrap(), &k, &p, &pool).unwrap().schedule();
        let hundred =
            backward_open_loop(&MarketDynamics::new(100.0, 0.0, 0.3).unwrap(), &k, &p, &pool).unwrap().schedule();
        for (a, b) in one.trades.iter().zip(&hundred.trades) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn price_paths() {
        let p = ExecutionProblem::new(1.0, 10, 1.0).unwrap();
        let flat = MarketDynamics::new(2.0, 0.0, 0.0).unwrap();
        assert!(mean_price_path(&flat, &p).iter().all(|f| *f == 2.0));
        assert!(stress_path(&flat, &p, Direction::Up).iter().all(|f| *f == 2.0));

        let d = MarketDynamics::new(1.0, 0.0, 0.3).unwrap();
        let up = stress_path(&d, &p, Direction::Up);
        let expected = (-0.0045 + 0.9 * 0.1f64.sqrt()).exp();
        assert_relative_eq!(up[1], expected, max_relative = 1e-14);
        assert_relative_eq!(up[1], 1.323269, epsilon = 1e-6);

        let bu = bumped_path(&d, &p, 5, Direction::Up).unwrap();
        let bd = bumped_path(&d, &p, 5, Direction::Down).unwrap();
        assert_eq!(&bu[..5], &mean_price_path(&d, &p)[..5]);
        // up and down factors multiply to the squared drift term
        assert_relative_eq!(bu[7] * bd[7], (-0.009f64).exp(), max_relative = 1e-14);
        assert!(bumped_path(&d, &p, 11, Direction::Up).is_err());
    }

    #[test]
    fn replay_matches_closed_loop_records() {
        let (d, k, p, pool) = setup(0.0, scenario_three());
        let c = backward_closed_loop(&d, &k, &p, &pool).unwrap();
        let path = bumped_path(&d, &p, 5, Direction::Up).unwrap();
        let records = simulate_closed_loop(&c, &path).unwrap();
        let schedule = Schedule::new(records.iter().map(|r| r.trade).collect());
        let replayed = replay_schedule(&schedule, &path, &k, &p, &pool).unwrap();
        assert_eq!(records, replayed);
    }
}
