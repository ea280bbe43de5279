//! Static optimal schedules on a constant-product pool.
//!
//! The expected proceeds of a schedule `delta` are `B'delta - delta'A delta / L`
//! with `B_m = E[f_m]` and `A` the expected impact matrix. Maximizing under
//! `sum(delta) = xi` gives `A delta = (L/2)(B - lambda 1)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::amm::{ExecutionProblem, MarketDynamics, MomentPower, PoolV2, Schedule};
use crate::error::{Error, Result};
use crate::kernels::KernelSet;

/// `B_m = E[f_m]` for `m = 0..=N`.
pub fn build_b(dynamics: &MarketDynamics, problem: &ExecutionProblem) -> DVector<f64> {
    let dt = problem.dt();
    DVector::from_iterator(
        problem.trade_count(),
        (0..problem.trade_count()).map(|m| dynamics.moment(MomentPower::One, m, dt)),
    )
}

/// Symmetric expected impact matrix
/// `A_mn = sum_j omega_j exp(-rho_j |m-n| dt) E[f_max(m,n) sqrt(f_min(m,n))]`.
pub fn build_a(dynamics: &MarketDynamics, kernels: &KernelSet, problem: &ExecutionProblem) -> DMatrix<f64> {
    let size = problem.trade_count();
    let dt = problem.dt();
    let mut a = DMatrix::zeros(size, size);
    for m in 0..size {
        for n in 0..=m {
            let lag = (m - n) as f64 * dt;
            let resilience: f64 = kernels.iter().map(|(w, r)| w * (-r * lag).exp()).sum();
            let value = resilience * dynamics.cross_moment(m, n, dt);
            a[(m, n)] = value;
            a[(n, m)] = value;
        }
    }
    a
}

/// Upper bound on the drift for which `A` is positive definite.
pub fn drift_bound(dynamics: &MarketDynamics, kernels: &KernelSet) -> f64 {
    0.75 * dynamics.sigma * dynamics.sigma + 4.0 * kernels.min_rate()
}

fn check_drift(dynamics: &MarketDynamics, kernels: &KernelSet) -> Result<()> {
    let bound = drift_bound(dynamics, kernels);
    if dynamics.mu < bound {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { mu: dynamics.mu, bound })
    }
}

/// Quantities shared by the single-kernel inverse and Gram factor:
/// `a = exp(-(rho - mu) dt)` and `gamma_n = b_n - a^2 b_{n-1}` with
/// `gamma_0 = 1`.
struct SingleKernelFactors {
    a: f64,
    gamma: Vec<f64>,
}

impl SingleKernelFactors {
    fn new(dynamics: &MarketDynamics, rate: f64, problem: &ExecutionProblem) -> Result<Self> {
        let bound = 0.75 * dynamics.sigma * dynamics.sigma + 4.0 * rate;
        if dynamics.mu >= bound {
            return Err(Error::NotPositiveDefinite { mu: dynamics.mu, bound });
        }
        let dt = problem.dt();
        let a = (-(rate - dynamics.mu) * dt).exp();
        let growth = dynamics.moment_rate(MomentPower::ThreeHalves) * dt;
        let mut gamma = Vec::with_capacity(problem.trade_count());
        gamma.push(1.0);
        for n in 1..problem.trade_count() {
            // b_{n-1} (e^{growth} - a^2), kept in factored form
            let b_prev = (growth * (n - 1) as f64).exp();
            let g = b_prev * ((growth).exp_m1() - (a * a - 1.0));
            if !(g > 0.0) {
                return Err(Error::NotPositiveDefinite { mu: dynamics.mu, bound });
            }
            gamma.push(g);
        }
        Ok(Self { a, gamma })
    }
}

/// Closed-form tridiagonal inverse of `A` for a single exponential kernel.
pub fn invert_a_single_kernel(
    dynamics: &MarketDynamics,
    rate: f64,
    problem: &ExecutionProblem,
) -> Result<DMatrix<f64>> {
    let SingleKernelFactors { a, gamma } = SingleKernelFactors::new(dynamics, rate, problem)?;
    let size = problem.trade_count();
    let last = size - 1;
    let scale = 1.0 / (dynamics.f0 * dynamics.f0.sqrt());
    let mut inv = DMatrix::zeros(size, size);
    for n in 0..size {
        let mut diag = 1.0 / gamma[n];
        if n < last {
            diag += a * a / gamma[n + 1];
            let off = -a / gamma[n + 1] * scale;
            inv[(n, n + 1)] = off;
            inv[(n + 1, n)] = off;
        }
        inv[(n, n)] = diag * scale;
    }
    Ok(inv)
}

/// Upper-triangular `V` with `V'V = A / f0^{3/2}` for a single kernel.
///
/// Column `n` is `v_n = a v_{n-1} + sqrt(gamma_n) e_n`, `v_0 = e_0`.
pub fn gram_factor_single_kernel(
    dynamics: &MarketDynamics,
    rate: f64,
    problem: &ExecutionProblem,
) -> Result<DMatrix<f64>> {
    let SingleKernelFactors { a, gamma } = SingleKernelFactors::new(dynamics, rate, problem)?;
    let size = problem.trade_count();
    let mut v = DMatrix::zeros(size, size);
    v[(0, 0)] = 1.0;
    for n in 1..size {
        for k in 0..n {
            v[(k, n)] = a * v[(k, n - 1)];
        }
        v[(n, n)] = gamma[n].sqrt();
    }
    Ok(v)
}

/// Linear solves against `A`: the explicit tridiagonal inverse for one
/// kernel, a Cholesky factorization otherwise.
enum ImpactSolver {
    Tridiagonal(DMatrix<f64>),
    Cholesky(Cholesky<f64, Dyn>),
}

impl ImpactSolver {
    fn new(dynamics: &MarketDynamics, kernels: &KernelSet, problem: &ExecutionProblem) -> Result<Self> {
        check_drift(dynamics, kernels)?;
        if kernels.len() == 1 {
            let inv = invert_a_single_kernel(dynamics, kernels.rates()[0], problem)?;
            return Ok(ImpactSolver::Tridiagonal(inv));
        }
        let a = build_a(dynamics, kernels, problem);
        Cholesky::new(a)
            .map(ImpactSolver::Cholesky)
            .ok_or_else(|| Error::Factorization("Cholesky factorization of the impact matrix failed".into()))
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            ImpactSolver::Tridiagonal(inv) => {
                let n = rhs.len();
                DVector::from_fn(n, |i, _| {
                    let mut s = inv[(i, i)] * rhs[i];
                    if i > 0 {
                        s += inv[(i, i - 1)] * rhs[i - 1];
                    }
                    if i + 1 < n {
                        s += inv[(i, i + 1)] * rhs[i + 1];
                    }
                    s
                })
            }
            ImpactSolver::Cholesky(chol) => chol.solve(rhs),
        }
    }
}

/// Optimal static schedule together with its Lagrange multiplier.
#[derive(Debug, Clone)]
pub struct GeneralSolution {
    pub schedule: Schedule,
    pub multiplier: f64,
}

/// Optimal schedule for arbitrary drift:
/// `delta = (L/2)(A^{-1}B - lambda A^{-1}1)` with
/// `lambda = (1'A^{-1}B - 2 xi / L) / 1'A^{-1}1`.
pub fn solve_general(
    dynamics: &MarketDynamics,
    kernels: &KernelSet,
    problem: &ExecutionProblem,
    pool: &PoolV2,
) -> Result<GeneralSolution> {
    let solver = ImpactSolver::new(dynamics, kernels, problem)?;
    let ones = DVector::from_element(problem.trade_count(), 1.0);
    let b = build_b(dynamics, problem);
    let a_inv_ones = solver.solve(&ones);
    let a_inv_b = solver.solve(&b);
    let l = pool.liquidity();
    let multiplier = (a_inv_b.sum() - 2.0 * problem.order_size / l) / a_inv_ones.sum();
    let trades = (a_inv_b - a_inv_ones * multiplier) * (0.5 * l);
    Ok(GeneralSolution { schedule: Schedule::new(trades.iter().copied().collect()), multiplier })
}

/// Martingale schedule `xi A^{-1}1 / 1'A^{-1}1`; the drift is ignored and the
/// result does not depend on the pool liquidity.
pub fn solve_martingale(
    kernels: &KernelSet,
    problem: &ExecutionProblem,
    _pool: &PoolV2,
    f0: f64,
    sigma: f64,
) -> Result<Schedule> {
    let dynamics = MarketDynamics::new(f0, 0.0, sigma)?;
    let solver = ImpactSolver::new(&dynamics, kernels, problem)?;
    let a_inv_ones = solver.solve(&DVector::from_element(problem.trade_count(), 1.0));
    let total = a_inv_ones.sum();
    Ok(Schedule::new(a_inv_ones.iter().map(|u| problem.order_size * u / total).collect()))
}

/// Two-step martingale schedule with one exponential kernel.
pub fn two_period_oracle(sigma: f64, rate: f64, dt: f64, order_size: f64) -> Result<(f64, f64)> {
    if sigma == 0.0 && rate == 0.0 {
        return Err(Error::domain("two-period schedule is undefined for sigma = rho = 0"));
    }
    let vol = (3.0 * sigma * sigma * dt / 8.0).exp();
    let decay = (-rate * dt).exp();
    let denominator = vol + 1.0 - 2.0 * decay;
    let first = order_size * (vol - decay) / denominator;
    let last = order_size * (1.0 - decay) / denominator;
    Ok((first, last))
}

/// Analytic derivatives `(d delta_0 / d sigma, d delta_0 / d rho)` of the
/// two-period first trade.
pub fn two_period_sensitivities(sigma: f64, rate: f64, dt: f64, order_size: f64) -> (f64, f64) {
    let vol = (3.0 * sigma * sigma * dt / 8.0).exp();
    let decay = (-rate * dt).exp();
    let d2 = (vol + 1.0 - 2.0 * decay).powi(2);
    let by_sigma = order_size * 0.75 * sigma * dt * vol * (1.0 - decay) / d2;
    let by_rate = order_size * dt * decay * (1.0 - vol) / d2;
    (by_sigma, by_rate)
}

/// Expected proceeds `B'delta - delta'A delta / L` of a static schedule.
pub fn expected_proceeds(
    dynamics: &MarketDynamics,
    kernels: &KernelSet,
    problem: &ExecutionProblem,
    pool: &PoolV2,
    schedule: &Schedule,
) -> f64 {
    let delta = DVector::from_column_slice(&schedule.trades);
    let a = build_a(dynamics, kernels, problem);
    let b = build_b(dynamics, problem);
    b.dot(&delta) - (delta.transpose() * a * &delta)[(0, 0)] / pool.liquidity()
}
