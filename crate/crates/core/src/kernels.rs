//! Resilience kernels: convex combinations of exponential decays, and a
//! least-squares fitter approximating a power-law decay `(1 + alpha t)^-beta`.
//!
//! A permanent impact component is a rate of exactly zero.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weights `omega_j` and rates `rho_j` of the resilience kernel
/// `G(t) = sum_j omega_j exp(-rho_j t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSet", into = "RawKernelSet")]
pub struct KernelSet {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawKernelSet {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<RawKernelSet> for KernelSet {
    type Error = Error;

    fn try_from(raw: RawKernelSet) -> Result<Self> {
        KernelSet::new(raw.weights, raw.rates)
    }
}

impl From<KernelSet> for RawKernelSet {
    fn from(k: KernelSet) -> Self {
        RawKernelSet { weights: k.weights, rates: k.rates }
    }
}

impl KernelSet {
    pub fn new(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidKernel("at least one kernel is required".into()));
        }
        if weights.len() != rates.len() {
            return Err(Error::InvalidKernel(format!(
                "{} weights but {} rates",
                weights.len(),
                rates.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidKernel(format!("negative or non-finite weight {w}")));
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidKernel(format!("negative or non-finite rate {r}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights, rates })
    }

    /// A single exponential kernel with unit weight.
    pub fn single(rate: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![rate])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Number of exponential terms, `J + 1`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights.iter().copied().zip(self.rates.iter().copied())
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("kernel time must be nonnegative, got {t}")));
        }
        Ok(self.iter().map(|(w, r)| w * (-r * t).exp()).sum())
    }

    /// Per-step decay factors `exp(-rho_j dt)`.
    pub fn decays(&self, dt: f64) -> Vec<f64> {
        self.rates.iter().map(|r| (-r * dt).exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawTarget {
    pub alpha: f64,
    pub beta: f64,
    pub horizon: f64,
}

impl PowerLawTarget {
    pub fn new(alpha: f64, beta: f64, horizon: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
            return Err(Error::domain("power-law alpha and beta must be nonnegative"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain("power-law horizon must be positive"));
        }
        Ok(Self { alpha, beta, horizon })
    }

    pub fn value(&self, t: f64) -> f64 {
        (1.0 + self.alpha * t).powf(-self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Random starting points; rates drawn log-uniformly on `[0.1, 100]`.
    pub starts: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { starts: 10, grid_size: 200, seed: 0, max_iterations: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kernels: KernelSet,
    /// Root-mean-square residual over the fit grid.
    pub rms: f64,
}

/// Fits `J + 1` exponentials to the power law on a uniform grid over `[0, T]`.
///
/// Rates are optimized by a bounded Levenberg-Marquardt iteration; for each
/// rate vector the weights are the exact simplex-constrained least-squares
/// solution. The best of `options.starts` random starts is kept, together
/// with the warm start built from the `J - 1` fit, so the optimum never gets
/// worse as `J` grows.
pub fn fit_power_law(target: &PowerLawTarget, count_minus_one: usize, options: &FitOptions) -> Result<FitResult> {
    if options.grid_size < 10 {
        return Err(Error::domain(format!("fit grid needs at least 10 points, got {}", options.grid_size)));
    }
    let n_terms = count_minus_one + 1;
    let times: Vec<f64> = (0..options.grid_size)
        .map(|i| target.horizon * i as f64 / (options.grid_size - 1) as f64)
        .collect();
    let y: Vec<f64> = times.iter().map(|&t| target.value(t)).collect();
    let problem = FitProblem { times: &times, y: &y };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if n_terms > 1 {
        let coarser = fit_power_law(target, count_minus_one - 1, options)?;
        let mut warm = coarser.kernels.rates().to_vec();
        warm.push(10.0);
        starts.push(warm);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.starts.max(1) {
        let rates = (0..n_terms)
            .map(|_| 10f64.powf(rng.gen_range(-1.0..=2.0)))
            .collect();
        starts.push(rates);
    }

    let mut best: Option<(Vec<f64>, Vec<f64>, f64, bool)> = None;
    for start in starts {
        let (rates, weights, sse, converged) = problem.levenberg_marquardt(start, options.max_iterations);
        let better = match &best {
            None => true,
            Some((_, _, best_sse, _)) => sse < *best_sse,
        };
        if better {
            best = Some((rates, weights, sse, converged));
        }
    }
    let (rates, weights, sse, converged) = best.expect("at least one start");
    let weights = project_to_simplex(&weights);
    let result = FitResult {
        kernels: KernelSet::new(weights, rates)?,
        rms: (sse / times.len() as f64).sqrt(),
    };
    if !converged {
        return Err(Error::FitNotConverged {
            iterations: options.max_iterations,
            best: Box::new(result),
        });
    }
    Ok(result)
}

struct FitProblem<'a> {
    times: &'a [f64],
    y: &'a [f64],
}

impl FitProblem<'_> {
    fn design(&self, rates: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.times.len(), rates.len(), |i, j| (-rates[j] * self.times[i]).exp())
    }

    fn residual(&self, rates: &[f64]) -> (DVector<f64>, Vec<f64>) {
        let phi = self.design(rates);
        let weights = simplex_least_squares(&phi, self.y);
        let fitted = &phi * DVector::from_column_slice(&weights);
        let r = DVector::from_iterator(self.y.len(), self.y.iter().zip(fitted.iter()).map(|(y, f)| y - f));
        (r, weights)
    }

    /// Returns `(rates, weights, sse, converged)`.
    fn levenberg_marquardt(&self, mut rates: Vec<f64>, max_iterations: usize) -> (Vec<f64>, Vec<f64>, f64, bool) {
        let (mut r, mut weights) = self.residual(&rates);
        let mut sse = r.norm_squared();
        let mut damping = 1e-3;
        let n = rates.len();
        for _ in 0..max_iterations {
            if sse < 1e-28 {
                return (rates, weights, sse, true);
            }
            let mut jac = DMatrix::zeros(self.y.len(), n);
            for j in 0..n {
                let h = 1e-6 * rates[j].max(1e-3);
                let mut up = rates.clone();
                up[j] += h;
                let mut down = rates.clone();
                down[j] = (down[j] - h).max(0.0);
                let width = up[j] - down[j];
                let col = (self.residual(&up).0 - self.residual(&down).0) / width;
                jac.set_column(j, &col);
            }
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * &r;
            let mut improved = false;
            while damping < 1e16 {
                let mut lhs = jtj.clone();
                for j in 0..n {
                    lhs[(j, j)] += damping * (jtj[(j, j)] + 1e-12);
                }
                let Some(step) = lhs.lu().solve(&jtr) else {
                    damping *= 10.0;
                    continue;
                };
                let trial: Vec<f64> = rates.iter().zip(step.iter()).map(|(p, s)| (p - s).max(0.0)).collect();
                let (trial_r, trial_w) = self.residual(&trial);
                let trial_sse = trial_r.norm_squared();
                if trial_sse < sse {
                    let gain = (sse - trial_sse) / sse.max(f64::MIN_POSITIVE);
                    let moved = rates
                        .iter()
                        .zip(&trial)
                        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-8))
                        .fold(0.0, f64::max);
                    rates = trial;
                    weights = trial_w;
                    r = trial_r;
                    sse = trial_sse;
                    damping = (damping / 10.0).max(1e-12);
                    improved = true;
                    if gain < 1e-14 || moved < 1e-12 {
                        return (rates, weights, sse, true);
                    }
                    break;
                }
                damping *= 10.0;
            }
            if !improved {
                // no descent direction left at any damping: stationary point
                return (rates, weights, sse, true);
            }
        }
        (rates, weights, sse, false)
    }
}

/// Exact solution of `min ||y - Phi w||^2` s.t. `w >= 0`, `sum w = 1`, by
/// enumerating active supports. Intended for a handful of columns.
fn simplex_least_squares(phi: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = phi.ncols();
    let y = DVector::from_column_slice(y);
    let gram = phi.transpose() * phi;
    let rhs = phi.transpose() * &y;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let k = support.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut b = DVector::zeros(k + 1);
        for (a, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                kkt[(a, c)] = gram[(i, j)];
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            b[a] = rhs[i];
        }
        b[k] = 1.0;
        let Some(sol) = kkt.lu().solve(&b) else { continue };
        if sol.iter().take(k).any(|w| !w.is_finite() || *w < -1e-14) {
            continue;
        }
        let mut w = vec![0.0; n];
        for (a, &i) in support.iter().enumerate() {
            w[i] = sol[a].max(0.0);
        }
        let sse = (&y - phi * DVector::from_column_slice(&w)).norm_squared();
        if best.as_ref().is_none_or(|(s, _)| sse < *s) {
            best = Some((sse, w));
        }
    }
    best.map(|(_, w)| w).unwrap_or_else(|| {
        let mut w = vec![0.0; n];
        w[0] = 1.0;
        w
    })
}

/// Euclidean projection onto the probability simplex.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // absorb the last rounding error into the largest weight
    let excess: f64 = w.iter().sum::<f64>() - 1.0;
    if let Some(max) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max -= excess;
    }
    w
}
