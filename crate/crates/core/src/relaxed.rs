//! Relaxed (measure-valued) controls on a finite action grid, chattering
//! approximation by strict controls, and the cost functional
//! `J = sup_P E^P[ sum_n L dt + Psi(X_T) ]`.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcalc::{sublinear_expectation, NoiseSource};
use crate::output::fmt_num;
use crate::sdde::{ensemble, ControlSequence, DelayModel, DelayPath, Policy, TimeGrid};
use crate::stats::McEstimate;

const WEIGHT_TOL: f64 = 1e-9;

/// Finite subset of the compact action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    actions: Vec<f64>,
}

impl ActionGrid {
    pub fn new(actions: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidConfig("action grid is empty".into()));
        }
        if actions.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("action grid has non-finite entries".into()));
        }
        Ok(Self { actions })
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index_of(&self, a: f64) -> Result<usize> {
        self.actions
            .iter()
            .position(|&g| (g - a).abs() <= 1e-12 * g.abs().max(1.0))
            .ok_or(Error::ActionNotOnGrid(a))
    }

    fn one_hot(&self, idx: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.actions.len()];
        w[idx] = 1.0;
        w
    }
}

/// Deterministic time-indexed probability vectors over an [`ActionGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    grid: ActionGrid,
    weights: Vec<Vec<f64>>,
    history: Vec<f64>,
}

impl RelaxedControl {
    /// Control history on `[-tau, 0)` defaults to the first grid action.
    pub fn new(grid: ActionGrid, weights: Vec<Vec<f64>>) -> Result<Self> {
        let history = grid.one_hot(0);
        Self::with_history(grid, weights, history)
    }

    pub fn with_history(grid: ActionGrid, weights: Vec<Vec<f64>>, history: Vec<f64>) -> Result<Self> {
        for (step, w) in weights.iter().enumerate() {
            check_weights(&grid, w, step)?;
        }
        check_weights(&grid, &history, usize::MAX)?;
        Ok(Self { grid, weights, history })
    }

    /// The same weight vector on every step.
    pub fn constant(grid: ActionGrid, w: Vec<f64>, steps: usize) -> Result<Self> {
        Self::new(grid, vec![w; steps])
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Weights at an Euler step; negative steps return the history weights.
    pub fn weights_at(&self, step: isize) -> &[f64] {
        if step < 0 {
            &self.history
        } else {
            &self.weights[step as usize]
        }
    }

    /// `sum_{i,j} mu_step(a_i) mu_lagged(a_j) f(a_i, a_j)` skipping zero weights.
    pub fn average<F>(&self, step: isize, lagged: isize, mut f: F) -> (f64, f64)
    where
        F: FnMut(f64, f64) -> (f64, f64),
    {
        let w = self.weights_at(step);
        let wd = self.weights_at(lagged);
        let a = self.grid.actions();
        let mut acc = (0.0, 0.0);
        for (i, &wi) in w.iter().enumerate().filter(|(_, w)| **w > 0.0) {
            for (j, &wj) in wd.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                let (p, q) = f(a[i], a[j]);
                let m = wi * wj;
                acc.0 += m * p;
                acc.1 += m * q;
            }
        }
        acc
    }
}

fn check_weights(grid: &ActionGrid, w: &[f64], step: usize) -> Result<()> {
    if w.len() != grid.len() {
        return Err(Error::LengthMismatch {
            what: "relaxed weight vector",
            expected: grid.len(),
            got: w.len(),
        });
    }
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&x| x.is_nan() || x < 0.0) || (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::WeightsNotNormalized { step, sum });
    }
    Ok(())
}

/// Dirac embedding of a strict control on the grid.
pub fn embed_strict(u: &ControlSequence, grid: &ActionGrid) -> Result<RelaxedControl> {
    let weights = u
        .actions
        .iter()
        .map(|&a| grid.index_of(a).map(|i| grid.one_hot(i)))
        .collect::<Result<Vec<_>>>()?;
    let history = grid.one_hot(grid.index_of(u.history_action)?);
    Ok(RelaxedControl {
        grid: grid.clone(),
        weights,
        history,
    })
}

/// Largest-remainder apportionment of `total` slots; ties go to the lower index.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let mass: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / mass * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // Stable sort keeps grid order among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Chattering with blocks of `block_len` steps (the last block may be shorter).
///
/// Within a block each action gets one consecutive run, in grid order, whose
/// length is its block-averaged weight times the block length.
pub fn chattering_with_block(mu: &RelaxedControl, block_len: usize) -> Result<ControlSequence> {
    if block_len == 0 {
        return Err(Error::InvalidConfig("chattering block length must be positive".into()));
    }
    let steps = mu.steps();
    let block_len = block_len.min(steps.max(1));
    let actions = mu.grid.actions();
    let mut out = Vec::with_capacity(steps);
    for start in (0..steps).step_by(block_len) {
        let end = (start + block_len).min(steps);
        let mut avg = vec![0.0; actions.len()];
        for w in &mu.weights[start..end] {
            avg.iter_mut().zip(w).for_each(|(a, x)| *a += x);
        }
        for (a, count) in actions.iter().zip(apportion(&avg, end - start)) {
            out.extend(std::iter::repeat_n(*a, count));
        }
    }
    let hist = mu.history.iter().position(|&w| w > 0.5).unwrap_or(0);
    Ok(ControlSequence {
        actions: out,
        history_action: actions[hist],
    })
}

/// Chattering at refinement level `n`: blocks of `2^n` steps.
pub fn chattering_approximate(mu: &RelaxedControl, level: u32) -> Result<ControlSequence> {
    if level == 0 {
        return Err(Error::InvalidConfig("refinement level must be at least 1".into()));
    }
    let block = 1usize.checked_shl(level).unwrap_or(usize::MAX);
    chattering_with_block(mu, block)
}

pub type RunningCost = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type TerminalCost = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Running cost `L(t, x, x_delay, u, u_delay)` and terminal cost `Psi(x)`.
#[derive(Clone)]
pub struct CostSpec {
    pub running: RunningCost,
    pub terminal: TerminalCost,
}

impl CostSpec {
    pub fn new(
        running: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            running: Arc::new(running),
            terminal: Arc::new(terminal),
        }
    }
}

fn path_cost(policy: Policy<'_>, path: &DelayPath, spec: &CostSpec) -> f64 {
    let grid = &path.grid;
    let lag = grid.delay_steps();
    let dt = grid.dt();
    let mut running = 0.0;
    for k in 0..grid.steps() {
        let n = lag + k;
        let t = k as f64 * dt;
        let (x, xd) = (path.states[n], path.states[n - lag]);
        let (ki, kd) = (k as isize, k as isize - lag as isize);
        let l = match policy {
            Policy::Strict(c) => (spec.running)(t, x, xd, c.action(ki), c.action(kd)),
            Policy::Relaxed(mu) => mu.average(ki, kd, |u, ud| ((spec.running)(t, x, xd, u, ud), 0.0)).0,
        };
        running += l * dt;
    }
    running + (spec.terminal)(path.terminal())
}

/// Per-scenario, per-path realized costs on common seeds.
pub fn cost_samples(
    policy: Policy<'_>,
    model: &DelayModel,
    spec: &CostSpec,
    grid: &TimeGrid,
    scenarios: &[NoiseSource],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if scenarios.is_empty() {
        return Err(Error::EmptyScenarioSet);
    }
    scenarios
        .iter()
        .map(|source| {
            let ens = ensemble(model, policy, grid, n_paths, source, seed)?;
            let costs: Vec<f64> = ens.paths.iter().map(|p| path_cost(policy, p, spec)).collect();
            if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "cost evaluation",
                    step: i,
                });
            }
            Ok(costs)
        })
        .collect()
}

/// Scenario-maximum cost estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub value: f64,
    pub std_error: f64,
    pub argmax: usize,
    pub per_scenario: Vec<McEstimate>,
}

pub fn cost(
    policy: Policy<'_>,
    model: &DelayModel,
    spec: &CostSpec,
    grid: &TimeGrid,
    scenarios: &[NoiseSource],
    n_paths: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let samples = cost_samples(policy, model, spec, grid, scenarios, n_paths, seed)?;
    let per_scenario: Vec<McEstimate> = samples.iter().map(|s| McEstimate::from_samples(s)).collect();
    let sup = sublinear_expectation(&per_scenario)?;
    Ok(CostEstimate {
        value: sup.value,
        std_error: sup.std_error,
        argmax: sup.argmax,
        per_scenario,
    })
}

/// One row of the chattering convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChatterRow {
    pub level: u32,
    pub j_strict: f64,
    pub j_relaxed: f64,
    pub gap: f64,
    pub se_strict: f64,
    pub se_relaxed: f64,
    /// Paired standard error of the cost difference on the strict maximizing scenario.
    pub se_gap: f64,
}

/// `|J(u^n) - J(mu)|` for each refinement level, on common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn chattering_study(
    mu: &RelaxedControl,
    levels: &[u32],
    model: &DelayModel,
    spec: &CostSpec,
    grid: &TimeGrid,
    scenarios: &[NoiseSource],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ChatterRow>> {
    let relaxed = cost_samples(Policy::Relaxed(mu), model, spec, grid, scenarios, n_paths, seed)?;
    let relaxed_est: Vec<McEstimate> = relaxed.iter().map(|s| McEstimate::from_samples(s)).collect();
    let jr = sublinear_expectation(&relaxed_est)?;
    levels
        .iter()
        .map(|&level| {
            let u = chattering_approximate(mu, level)?;
            let strict = cost_samples(Policy::Strict(&u), model, spec, grid, scenarios, n_paths, seed)?;
            let strict_est: Vec<McEstimate> = strict.iter().map(|s| McEstimate::from_samples(s)).collect();
            let js = sublinear_expectation(&strict_est)?;
            let diff: Vec<f64> = strict[js.argmax]
                .iter()
                .zip(&relaxed[js.argmax])
                .map(|(a, b)| a - b)
                .collect();
            Ok(ChatterRow {
                level,
                j_strict: js.value,
                j_relaxed: jr.value,
                gap: (js.value - jr.value).abs(),
                se_strict: js.std_error,
                se_relaxed: jr.std_error,
                se_gap: McEstimate::from_samples(&diff).std_error,
            })
        })
        .collect()
}

pub fn write_chatter_csv<W: Write>(rows: &[ChatterRow], mut out: W) -> io::Result<()> {
    writeln!(out, "level,j_strict,j_relaxed,gap,se_strict,se_relaxed,se_gap")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.level,
            fmt_num(r.j_strict),
            fmt_num(r.j_relaxed),
            fmt_num(r.gap),
            fmt_num(r.se_strict),
            fmt_num(r.se_relaxed),
            fmt_num(r.se_gap)
        )?;
    }
    Ok(())
}

/// Toy problem for the chattering study: `dX = u dt + sigma dB`, `X = 0` on
/// `[-tau, 0]`, running cost `u^2`, terminal cost `X_T^2`, and a constant
/// relaxed control `mu` over a finite action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatterConfig {
    pub tau: f64,
    pub horizon: f64,
    pub dt: f64,
    pub actions: Vec<f64>,
    pub weights: Vec<f64>,
    pub levels: Vec<u32>,
    /// Constant volatilities; the study takes the worst case over them.
    pub scenarios: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ChatterConfig {
    fn default() -> Self {
        Self {
            tau: 1.0 / 16.0,
            horizon: 1.0,
            dt: 1.0 / 256.0,
            actions: vec![-1.0, 1.0],
            weights: vec![0.3, 0.7],
            levels: vec![1, 2, 3, 4, 5],
            scenarios: vec![1.0],
            n_paths: 4000,
            seed: 17,
        }
    }
}

impl ChatterConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.tau, self.horizon, self.dt)
    }

    pub fn model(&self) -> DelayModel {
        DelayModel::new(self.tau, crate::sdde::History::Constant(0.0))
            .with_drift(|_, _, _, u, _| u)
            .with_diffusion(|_, _, _| 1.0)
    }

    pub fn cost_spec(&self) -> CostSpec {
        CostSpec::new(|_, _, _, u, _| u * u, |x| x * x)
    }

    pub fn relaxed_control(&self) -> Result<RelaxedControl> {
        let grid = ActionGrid::new(self.actions.clone())?;
        RelaxedControl::constant(grid, self.weights.clone(), self.grid()?.steps())
    }

    pub fn noise_sources(&self) -> Result<Vec<NoiseSource>> {
        if self.scenarios.is_empty() {
            return Err(Error::EmptyScenarioSet);
        }
        self.scenarios
            .iter()
            .map(|&s| {
                let band = crate::gcalc::VolatilityBand::point(s)?;
                Ok(NoiseSource::Scenario(crate::gcalc::ScenarioPolicy::constant(s, band)?))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("at least one refinement level is required".into()));
        }
        self.relaxed_control()?;
        self.noise_sources()?;
        Ok(())
    }

    pub fn run(&self) -> Result<Vec<ChatterRow>> {
        self.validate()?;
        chattering_study(
            &self.relaxed_control()?,
            &self.levels,
            &self.model(),
            &self.cost_spec(),
            &self.grid()?,
            &self.noise_sources()?,
            self.n_paths,
            self.seed,
        )
    }
}
