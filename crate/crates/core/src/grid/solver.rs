//! Backward induction over the (price, inventory, impact) grid and forward
//! evaluation of the resulting policy.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::two_layer::{relative_impact, StateTerms};
use super::{build_grids, build_transitions, GridConfig, Grids};
use crate::amm::{ExecutionProblem, MarketDynamics, PoolV3TwoLayer, Schedule};
use crate::dp::TradeRecord;
use crate::error::{Error, Result};
use crate::kernels::KernelSet;

/// Largest node count per time layer (about 2.4 GB for the value and
/// expectation buffers together).
const MAX_LAYER_NODES: usize = 150_000_000;

/// Optimal trade indices of one time step, one entry per grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PolicyLayer {
    Narrow(Vec<u8>),
    Wide(Vec<u16>),
}

impl PolicyLayer {
    fn get(&self, idx: usize) -> usize {
        match self {
            PolicyLayer::Narrow(v) => v[idx] as usize,
            PolicyLayer::Wide(v) => v[idx] as usize,
        }
    }
}

/// Per-step solver statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub seconds: f64,
    pub expectation_seconds: f64,
    /// Candidate trades whose next impact fell beyond the impact grid.
    pub clamped_candidates: u64,
    /// Optimal decisions whose next impact fell beyond the impact grid.
    pub clamped_decisions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub nodes_per_step: usize,
    pub total_seconds: f64,
    pub steps: Vec<StepDiagnostics>,
}

impl SolveDiagnostics {
    pub fn clamped_decisions(&self) -> u64 {
        self.steps.iter().map(|s| s.clamped_decisions).sum()
    }
}

/// Solved policy for every step plus the value function at `n = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    config: GridConfig,
    grids: Grids,
    kernels: KernelSet,
    pool: PoolV3TwoLayer,
    dt: f64,
    order_size: f64,
    policies: Vec<PolicyLayer>,
    initial_values: Vec<f64>,
    diagnostics: SolveDiagnostics,
}

/// Flat layout `[price][inventory][impact_0]...[impact_J]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    inventory: usize,
    impact_nodes: usize,
    impact_points: usize,
    components: usize,
}

impl Layout {
    fn new(config: &GridConfig, components: usize) -> Result<Self> {
        let impact_nodes = (0..components).try_fold(1usize, |acc, _| acc.checked_mul(config.impact_points + 1));
        let layout = Self {
            inventory: config.inventory_points + 1,
            impact_nodes: impact_nodes.unwrap_or(usize::MAX),
            impact_points: config.impact_points,
            components,
        };
        let nodes = layout
            .slice()
            .checked_mul(config.price_points + 1)
            .filter(|n| *n <= MAX_LAYER_NODES);
        if nodes.is_none() {
            return Err(Error::InvalidGrid(format!(
                "grid has more than {MAX_LAYER_NODES} nodes per step; reduce K_f, K_x or K_I"
            )));
        }
        Ok(layout)
    }

    /// Nodes per price level.
    fn slice(&self) -> usize {
        self.inventory.saturating_mul(self.impact_nodes)
    }

    fn nodes(&self, price_points: usize) -> usize {
        self.slice() * price_points
    }

    fn impact_index(&self, mut flat: usize, out: &mut [usize]) {
        for j in (0..self.components).rev() {
            out[j] = flat % (self.impact_points + 1);
            flat /= self.impact_points + 1;
        }
    }

    fn stride(&self, component: usize) -> usize {
        (self.impact_points + 1).pow((self.components - 1 - component) as u32)
    }
}

/// Linear interpolation position on a uniform grid `0..=points`, clamped to
/// the last cell. Returns `(lower index, weight of upper node, clamped)`.
#[inline]
fn locate(value: f64, inverse_step: f64, points: usize) -> (usize, f64, bool) {
    let pos = value * inverse_step;
    if pos >= points as f64 {
        (points - 1, 1.0, pos > points as f64 * (1.0 + 1e-12))
    } else {
        let lo = pos as usize;
        (lo, pos - lo as f64, false)
    }
}

/// Interpolation corners over all impact components.
struct Corners {
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl Corners {
    fn new(components: usize) -> Self {
        Self { offsets: vec![0; 1 << components], weights: vec![0.0; 1 << components] }
    }

    /// Fills corner offsets and weights; returns whether any component clamped.
    fn fill(&mut self, layout: &Layout, steps: &[f64], impacts: &[f64]) -> bool {
        let mut clamped = false;
        self.offsets.fill(0);
        self.weights.fill(1.0);
        for (j, (&value, &step)) in impacts.iter().zip(steps).enumerate() {
            let (lo, w, c) = locate(value, 1.0 / step, layout.impact_points);
            clamped |= c;
            let stride = layout.stride(j);
            for corner in 0..self.offsets.len() {
                if corner >> j & 1 == 1 {
                    self.offsets[corner] += (lo + 1) * stride;
                    self.weights[corner] *= w;
                } else {
                    self.offsets[corner] += lo * stride;
                    self.weights[corner] *= 1.0 - w;
                }
            }
        }
        clamped
    }

    fn apply(&self, row: &[f64]) -> f64 {
        self.offsets.iter().zip(&self.weights).map(|(&o, &w)| if w == 0.0 { 0.0 } else { w * row[o] }).sum()
    }
}

/// Solves the two-layer execution problem by backward induction.
///
/// At every node all trades `x^(0..=k_x)` are tried; the continuation value is
/// the grid expectation over next prices, interpolated linearly in each impact
/// component. Ties go to the smallest trade.
pub fn solve_backward(
    config: &GridConfig,
    dynamics: &MarketDynamics,
    problem: &ExecutionProblem,
    kernels: &KernelSet,
    pool: &PoolV3TwoLayer,
) -> Result<ValueGrid> {
    solve_with(config, dynamics, problem, kernels, pool, true)
}

/// `fast_single` enables the tabulated single-kernel update when `J = 0`.
fn solve_with(
    config: &GridConfig,
    dynamics: &MarketDynamics,
    problem: &ExecutionProblem,
    kernels: &KernelSet,
    pool: &PoolV3TwoLayer,
    fast_single: bool,
) -> Result<ValueGrid> {
    if dynamics.mu != 0.0 {
        return Err(Error::domain("the grid solver only supports zero drift (sell-only candidates)"));
    }
    let started = Instant::now();
    let grids = build_grids(config, dynamics, problem, kernels, pool)?;
    let transitions = build_transitions(dynamics, problem, &grids)?;
    let layout = Layout::new(config, kernels.len())?;
    let price_points = config.price_points + 1;
    let slice = layout.slice();
    let nodes = layout.nodes(price_points);
    let decays = kernels.decays(problem.dt());
    tracing::info!(nodes, steps = problem.steps, "grid solver started");

    let mut values = vec![0.0; nodes];
    values.par_chunks_mut(slice).enumerate().for_each(|(kf, chunk)| {
        let f = grids.prices[kf];
        let mut index = vec![0; layout.components];
        let mut impacts = vec![0.0; layout.components];
        for (kx, row) in chunk.chunks_mut(layout.impact_nodes).enumerate() {
            for (m, v) in row.iter_mut().enumerate() {
                layout.impact_index(m, &mut index);
                for j in 0..layout.components {
                    impacts[j] = grids.impact_value(j, index[j]);
                }
                let relative = relative_impact(kernels.weights(), &impacts);
                *v = StateTerms::new(pool, f, relative).effect(grids.inventory[kx]).cash;
            }
        }
    });

    let mut expectation = vec![0.0; nodes];
    let mut policies = Vec::with_capacity(problem.steps);
    let mut step_stats = Vec::with_capacity(problem.steps);
    for n in (0..problem.steps).rev() {
        let step_start = Instant::now();
        conditional_expectation(transitions.as_slice(), price_points, &values, &mut expectation);
        let expectation_seconds = step_start.elapsed().as_secs_f64();

        let narrow = config.inventory_points <= u8::MAX as usize;
        let mut choice = vec![0u16; if narrow { 0 } else { nodes }];
        let mut choice_narrow = vec![0u8; if narrow { nodes } else { 0 }];
        let single = fast_single && layout.components == 1;
        let context = StepContext { grids: &grids, layout, kernels, pool, decays: &decays, single };
        let (clamped_candidates, clamped_decisions) = if narrow {
            optimize_layer(&context, &expectation, &mut values, &mut choice_narrow, |k| k as u8)
        } else {
            optimize_layer(&context, &expectation, &mut values, &mut choice, |k| k as u16)
        };
        policies.push(if narrow { PolicyLayer::Narrow(choice_narrow) } else { PolicyLayer::Wide(choice) });
        let seconds = step_start.elapsed().as_secs_f64();
        tracing::info!(step = n, seconds, expectation_seconds, clamped_decisions, "grid step solved");
        step_stats.push(StepDiagnostics { step: n, seconds, expectation_seconds, clamped_candidates, clamped_decisions });
    }
    policies.reverse();
    step_stats.reverse();
    drop(expectation);

    let diagnostics =
        SolveDiagnostics { nodes_per_step: nodes, total_seconds: started.elapsed().as_secs_f64(), steps: step_stats };
    Ok(ValueGrid {
        config: *config,
        grids,
        kernels: kernels.clone(),
        pool: *pool,
        dt: problem.dt(),
        order_size: problem.order_size,
        policies,
        initial_values: values,
        diagnostics,
    })
}

/// `W[k][.] = sum_q omega_{k->q} V[q][.]` as one matrix product.
fn conditional_expectation(transitions: &[f64], price_points: usize, values: &[f64], out: &mut [f64]) {
    let cols = values.len() / price_points;
    // SAFETY: all three buffers are contiguous row-major matrices whose
    // dimensions match the strides passed here.
    unsafe {
        matrixmultiply::dgemm(
            price_points,
            price_points,
            cols,
            1.0,
            transitions.as_ptr(),
            price_points as isize,
            1,
            values.as_ptr(),
            cols as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

struct StepContext<'a> {
    grids: &'a Grids,
    layout: Layout,
    kernels: &'a KernelSet,
    pool: &'a PoolV3TwoLayer,
    decays: &'a [f64],
    single: bool,
}

/// Maximizes over candidate trades at every node, writing values and
/// policy indices. Returns clamp counts for candidates and decisions.
fn optimize_layer<T: Copy + Send>(
    ctx: &StepContext<'_>,
    expectation: &[f64],
    values: &mut [f64],
    policy: &mut [T],
    encode: impl Fn(usize) -> T + Sync,
) -> (u64, u64) {
    let slice = ctx.layout.slice();
    values
        .par_chunks_mut(slice)
        .zip(policy.par_chunks_mut(slice))
        .enumerate()
        .map(|(kf, (value_chunk, policy_chunk))| {
            let w_chunk = &expectation[kf * slice..(kf + 1) * slice];
            if ctx.single {
                optimize_single(ctx, kf, w_chunk, value_chunk, policy_chunk, &encode)
            } else {
                optimize_general(ctx, kf, w_chunk, value_chunk, policy_chunk, &encode)
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// Single-kernel layer update. The cash flow and next impact position of a
/// candidate depend on the trade and the current impact but not on the
/// inventory held, so both are tabulated once per price node. The scan then
/// streams each candidate's table against one contiguous expectation row.
fn optimize_single<T: Copy>(
    ctx: &StepContext<'_>,
    kf: usize,
    w_chunk: &[f64],
    value_chunk: &mut [f64],
    policy_chunk: &mut [T],
    encode: &impl Fn(usize) -> T,
) -> (u64, u64) {
    let f = ctx.grids.prices[kf];
    let points = ctx.layout.impact_points;
    let width = points + 1;
    let step = ctx.grids.impact_steps[0];
    let weight = ctx.kernels.weights()[0];
    let inventory = &ctx.grids.inventory;
    let candidates = inventory.len();
    let terms: Vec<StateTerms> = (0..width).map(|ki| StateTerms::new(ctx.pool, f, weight * step * ki as f64)).collect();

    let mut cash = vec![0.0; candidates * width];
    let mut lower = vec![0u32; candidates * width];
    let mut frac = vec![0.0; candidates * width];
    let mut clamped = vec![false; candidates * width];
    let mut clamped_candidates = 0u64;
    for (k, &delta) in inventory.iter().enumerate() {
        for (ki, term) in terms.iter().enumerate() {
            let effect = term.effect(delta);
            let (lo, w, over) = locate((step * ki as f64 + effect.kick) * ctx.decays[0], 1.0 / step, points);
            let idx = k * width + ki;
            cash[idx] = effect.cash;
            lower[idx] = lo as u32;
            frac[idx] = w;
            clamped[idx] = over;
            // candidate k is scanned once for every inventory level from k up
            clamped_candidates += over as u64 * (candidates - k) as u64;
        }
    }

    let mut best = vec![f64::NEG_INFINITY; width];
    let mut best_k = vec![0usize; width];
    let mut clamped_decisions = 0u64;
    for kx in 0..candidates {
        best.fill(f64::NEG_INFINITY);
        for k in 0..=kx {
            let row = &w_chunk[(kx - k) * width..(kx - k + 1) * width];
            let span = k * width..(k + 1) * width;
            let (cash, lower, frac) = (&cash[span.clone()], &lower[span.clone()], &frac[span]);
            for ki in 0..width {
                let lo = lower[ki] as usize;
                let total = cash[ki] + row[lo] + frac[ki] * (row[lo + 1] - row[lo]);
                let better = total > best[ki];
                best[ki] = if better { total } else { best[ki] };
                best_k[ki] = if better { k } else { best_k[ki] };
            }
        }
        clamped_decisions += best_k.iter().enumerate().filter(|&(ki, &k)| clamped[k * width + ki]).count() as u64;
        value_chunk[kx * width..(kx + 1) * width].copy_from_slice(&best);
        for (slot, &k) in policy_chunk[kx * width..(kx + 1) * width].iter_mut().zip(&best_k) {
            *slot = encode(k);
        }
    }
    (clamped_candidates, clamped_decisions)
}

fn optimize_general<T: Copy>(
    ctx: &StepContext<'_>,
    kf: usize,
    w_chunk: &[f64],
    value_chunk: &mut [f64],
    policy_chunk: &mut [T],
    encode: &impl Fn(usize) -> T,
) -> (u64, u64) {
    let layout = ctx.layout;
    let f = ctx.grids.prices[kf];
    let inventory = &ctx.grids.inventory;
    let mut index = vec![0; layout.components];
    let mut impacts = vec![0.0; layout.components];
    let mut next = vec![0.0; layout.components];
    let mut corners = Corners::new(layout.components);
    let (mut clamped_candidates, mut clamped_decisions) = (0u64, 0u64);
    for m in 0..layout.impact_nodes {
        layout.impact_index(m, &mut index);
        for j in 0..layout.components {
            impacts[j] = ctx.grids.impact_value(j, index[j]);
        }
        let terms = StateTerms::new(ctx.pool, f, relative_impact(ctx.kernels.weights(), &impacts));
        for kx in 0..inventory.len() {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            let mut best_clamped = false;
            for (k, &delta) in inventory[..=kx].iter().enumerate() {
                let effect = terms.effect(delta);
                for j in 0..layout.components {
                    next[j] = ctx.decays[j] * (impacts[j] + effect.kick);
                }
                let clamped = corners.fill(&layout, &ctx.grids.impact_steps, &next);
                let row = &w_chunk[(kx - k) * layout.impact_nodes..(kx - k + 1) * layout.impact_nodes];
                let total = effect.cash + corners.apply(row);
                clamped_candidates += clamped as u64;
                if total > best {
                    best = total;
                    best_k = k;
                    best_clamped = clamped;
                }
            }
            clamped_decisions += best_clamped as u64;
            value_chunk[kx * layout.impact_nodes + m] = best;
            policy_chunk[kx * layout.impact_nodes + m] = encode(best_k);
        }
    }
    (clamped_candidates, clamped_decisions)
}

/// Policy replayed along a price path.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPath {
    pub schedule: Schedule,
    pub records: Vec<TradeRecord>,
    /// Steps whose price fell outside the price grid.
    pub price_clamps: usize,
    /// Steps whose impact state fell beyond the impact grid.
    pub impact_clamps: usize,
}

impl ValueGrid {
    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn steps(&self) -> usize {
        self.policies.len()
    }

    pub fn diagnostics(&self) -> &SolveDiagnostics {
        &self.diagnostics
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config, self.kernels.len()).expect("layout validated when solving")
    }

    fn node(&self, layout: &Layout, kf: usize, kx: usize, impacts: &[usize]) -> usize {
        let m: usize = impacts.iter().enumerate().map(|(j, k)| k * layout.stride(j)).sum();
        kf * layout.slice() + kx * layout.impact_nodes + m
    }

    /// Value at `n = 0` at grid indices `(k_f, k_x, k_I^0..k_I^J)`.
    pub fn initial_value(&self, kf: usize, kx: usize, impacts: &[usize]) -> f64 {
        let layout = self.layout();
        self.initial_values[self.node(&layout, kf, kx, impacts)]
    }

    /// Optimal trade at step `n < N` at grid indices.
    pub fn policy_trade(&self, n: usize, kf: usize, kx: usize, impacts: &[usize]) -> f64 {
        let layout = self.layout();
        self.grids.inventory[self.policies[n].get(self.node(&layout, kf, kx, impacts))]
    }
}

/// Replays the stored policy along `path` (`f_0..f_N`): nearest price node,
/// multilinear interpolation of the trade over impacts, snapped to the
/// inventory grid. The last trade liquidates the remaining inventory.
pub fn evaluate_policy(grid: &ValueGrid, path: &[f64]) -> Result<PolicyPath> {
    let steps = grid.steps();
    if path.len() != steps + 1 {
        return Err(Error::LengthMismatch { expected: steps + 1, actual: path.len() });
    }
    if let Some(bad) = path.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
        return Err(Error::domain(format!("price path values must be positive, got {bad}")));
    }
    let layout = grid.layout();
    let components = grid.kernels.len();
    let decays = grid.kernels.decays(grid.dt);
    let unit = grid.order_size / grid.config.inventory_points as f64;
    let mut corners = Corners::new(components);
    let mut kx = grid.config.inventory_points;
    let mut impacts = vec![0.0; components];
    let mut records = Vec::with_capacity(steps + 1);
    let (mut price_clamps, mut impact_clamps) = (0, 0);
    for (n, &f) in path.iter().enumerate() {
        let trade_index = if n == steps {
            kx
        } else {
            let (kf, outside) = grid.grids.nearest_price(f);
            price_clamps += outside as usize;
            impact_clamps += corners.fill(&layout, &grid.grids.impact_steps, &impacts) as usize;
            let base = kf * layout.slice() + kx * layout.impact_nodes;
            let policy = &grid.policies[n];
            let trade: f64 = corners
                .offsets
                .iter()
                .zip(&corners.weights)
                .map(|(&o, &w)| if w == 0.0 { 0.0 } else { w * grid.grids.inventory[policy.get(base + o)] })
                .sum();
            ((trade / unit).round() as usize).min(kx)
        };
        let delta = grid.grids.inventory[trade_index];
        let relative = relative_impact(grid.kernels.weights(), &impacts);
        let effect = StateTerms::new(&grid.pool, f, relative).effect(delta);
        kx -= trade_index;
        records.push(TradeRecord {
            trade: delta,
            inventory_after: grid.grids.inventory[kx],
            cash_flow: effect.cash,
            spot_before: f * (1.0 - relative),
            spot_after: f * (1.0 - relative - effect.kick),
        });
        for (impact, d) in impacts.iter_mut().zip(&decays) {
            *impact = d * (*impact + effect.kick);
        }
    }
    Ok(PolicyPath {
        schedule: Schedule::new(records.iter().map(|r| r.trade).collect()),
        records,
        price_clamps,
        impact_clamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::mean_price_path;
    use crate::grid::build_transitions;

    fn setup(upper: f64, lower: f64, threshold: f64) -> (GridConfig, MarketDynamics, ExecutionProblem, KernelSet, PoolV3TwoLayer) {
        (
            GridConfig::new(24, 20, 12, 3.0).unwrap(),
            MarketDynamics::new(1.0, 0.0, 0.3).unwrap(),
            ExecutionProblem::new(1.0, 3, 1.0).unwrap(),
            KernelSet::single(3.0).unwrap(),
            PoolV3TwoLayer::new(upper, lower, threshold).unwrap(),
        )
    }

    #[test]
    fn rejects_drift() {
        let (cfg, _, prob, k, pool) = setup(1000.0, 500.0, 0.99);
        let dynamics = MarketDynamics::new(1.0, 0.01, 0.3).unwrap();
        assert!(solve_backward(&cfg, &dynamics, &prob, &k, &pool).is_err());
    }

    #[test]
    fn policies_are_feasible_sells() {
        let (cfg, d, prob, k, pool) = setup(1000.0, 500.0, 0.99);
        let g = solve_backward(&cfg, &d, &prob, &k, &pool).unwrap();
        assert_eq!(g.steps(), 3);
        for n in 0..3 {
            for kf in 0..=cfg.price_points {
                for kx in 0..=cfg.inventory_points {
                    for ki in 0..=cfg.impact_points {
                        let trade = g.policy_trade(n, kf, kx, &[ki]);
                        assert!(trade >= 0.0 && trade <= g.grids().inventory[kx] + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn single_kernel_path_matches_general_path() {
        for threshold in [0.5, 0.99, 1.0, 1.05] {
            let (cfg, d, prob, k, pool) = setup(1000.0, 400.0, threshold);
            let fast = solve_with(&cfg, &d, &prob, &k, &pool, true).unwrap();
            let slow = solve_with(&cfg, &d, &prob, &k, &pool, false).unwrap();
            assert_eq!(fast.policies, slow.policies);
            for (a, b) in fast.initial_values.iter().zip(&slow.initial_values) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
            let (fc, sc) = (&fast.diagnostics.steps, &slow.diagnostics.steps);
            for (a, b) in fc.iter().zip(sc) {
                assert_eq!(a.clamped_candidates, b.clamped_candidates);
                assert_eq!(a.clamped_decisions, b.clamped_decisions);
            }
        }
    }

    #[test]
    fn value_dominates_waiting_and_liquidating() {
        let (cfg, d, _, k, pool) = setup(1000.0, 500.0, 0.98);
        let prob = ExecutionProblem::new(0.5, 1, 1.0).unwrap();
        let g = solve_backward(&cfg, &d, &prob, &k, &pool).unwrap();
        let transitions = build_transitions(&d, &prob, g.grids()).unwrap();
        let decay = k.decays(prob.dt())[0];
        let weight = k.weights()[0];
        let grids = g.grids();
        let step = grids.impact_steps[0];
        for kf in (0..=cfg.price_points).step_by(5) {
            let f = grids.prices[kf];
            for kx in 0..=cfg.inventory_points {
                let x = grids.inventory[kx];
                for ki in 0..=cfg.impact_points {
                    let impact = step * ki as f64;
                    let value = g.initial_value(kf, kx, &[ki]);
                    // selling everything now leaves nothing for the terminal step
                    let now = StateTerms::new(&pool, f, weight * impact).effect(x).cash;
                    assert!(value >= now - 1e-12, "kf={kf} kx={kx} ki={ki}");
                    // waiting liquidates at the next step with a decayed impact
                    let next = decay * impact;
                    let wait: f64 = (0..=cfg.price_points)
                        .map(|q| {
                            let later = StateTerms::new(&pool, grids.prices[q], weight * next).effect(x).cash;
                            transitions.get(kf, q) * later
                        })
                        .sum();
                    // the continuation interpolates linearly in impact, exact only on nodes
                    let pos = next / step;
                    let slack = if pos.fract() == 0.0 { 1e-12 } else { 1e-6 };
                    assert!(value >= wait - slack, "kf={kf} kx={kx} ki={ki}: {value} < {wait}");
                }
            }
        }
    }

    #[test]
    fn mean_path_schedule_is_a_feasible_liquidation() {
        let (cfg, d, prob, k, pool) = setup(1000.0, 500.0, 0.99);
        let g = solve_backward(&cfg, &d, &prob, &k, &pool).unwrap();
        let path = evaluate_policy(&g, &mean_price_path(&d, &prob)).unwrap();
        let trades = &path.schedule.trades;
        assert_eq!(trades.len(), 4);
        assert!(trades.iter().all(|t| *t >= 0.0));
        assert!((trades.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(path.price_clamps, 0);
        assert!(evaluate_policy(&g, &[1.0, 1.0]).is_err());
        assert!(evaluate_policy(&g, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_the_grid() {
        let (cfg, d, prob, k, pool) = setup(1000.0, 500.0, 0.99);
        let g = solve_backward(&cfg, &d, &prob, &k, &pool).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: ValueGrid = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
