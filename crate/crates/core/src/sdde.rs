//! Euler–Maruyama for controlled stochastic delay equations
//!
//! ```text
//! dX = b(t, X(t), X(t-tau), u(t), u(t-tau)) dt
//!    + gamma(t, X(t), X(t-tau), u(t), u(t-tau)) d<B>_t
//!    + sigma(t, X(t), X(t-tau)) dB_t,        X = eta on [-tau, 0].
//! ```
//!
//! The delay must be an integer number of steps so delayed reads land on grid nodes.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gcalc::{NoiseIncrements, NoiseSource};
use crate::output::fmt_num;
use crate::par::map_indices;
use crate::relaxed::RelaxedControl;
use crate::rng::path_rng;

pub type ControlledCoef = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type StateCoef = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Uniform grid `-tau = t_0 < ... < t_{N_tau} = 0 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    delay_steps: usize,
    steps: usize,
}

fn whole_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    if !(span.is_finite() && span > 0.0) {
        return Err(Error::InvalidConfig(format!("{what} must be positive, got {span}")));
    }
    let n = (span / dt).round();
    if n < 1.0 || (n * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(Error::InvalidConfig(format!(
            "{what}={span} is not an integer multiple of dt={dt}"
        )));
    }
    Ok(n as usize)
}

impl TimeGrid {
    pub fn new(tau: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            dt,
            delay_steps: whole_steps(tau, dt, "tau")?,
            steps: whole_steps(horizon, dt, "T")?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `N_tau`, the node index of `t = 0`.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    /// Number of Euler steps on `[0, T]`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `N`, the node index of `t = T`.
    pub fn last_node(&self) -> usize {
        self.delay_steps + self.steps
    }

    pub fn tau(&self) -> f64 {
        self.delay_steps as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, node: usize) -> f64 {
        (node as f64 - self.delay_steps as f64) * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.last_node()).map(|n| self.time(n)).collect()
    }
}

/// Initial segment `eta` on `[-tau, 0]`.
#[derive(Clone)]
pub enum History {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Uniform on `[lo, hi]`; one draw per node, or one per path when `per_path`.
    Uniform {
        lo: f64,
        hi: f64,
        per_path: bool,
    },
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            History::Constant(c) => write!(f, "Constant({c})"),
            History::Function(_) => write!(f, "Function(..)"),
            History::Uniform { lo, hi, per_path } => {
                write!(f, "Uniform {{ lo: {lo}, hi: {hi}, per_path: {per_path} }}")
            }
        }
    }
}

impl History {
    pub fn is_random(&self) -> bool {
        matches!(self, History::Uniform { .. })
    }

    /// History values on nodes `0..=N_tau`. Deterministic histories ignore the rng.
    pub fn nodes<R: Rng + ?Sized>(&self, grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
        let n = grid.delay_steps() + 1;
        match self {
            History::Constant(c) => vec![*c; n],
            History::Function(f) => (0..n).map(|i| f(grid.time(i))).collect(),
            History::Uniform { lo, hi, per_path } => {
                let draw = |rng: &mut R| lo + (hi - lo) * rng.random::<f64>();
                if *per_path {
                    vec![draw(rng); n]
                } else {
                    (0..n).map(|_| draw(rng)).collect()
                }
            }
        }
    }

    /// History values for a deterministic history; random histories are rejected.
    pub fn deterministic_nodes(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        if self.is_random() {
            return Err(Error::InvalidConfig(
                "random history needs a path rng; draw it with History::nodes".into(),
            ));
        }
        Ok(self.nodes(grid, &mut crate::rng::master_rng(0)))
    }

    fn validate(&self) -> Result<()> {
        match self {
            History::Uniform { lo, hi, .. } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                Err(Error::InvalidConfig(format!("history bounds [{lo}, {hi}] invalid")))
            }
            History::Constant(c) if !c.is_finite() => Err(Error::InvalidConfig("history value must be finite".into())),
            _ => Ok(()),
        }
    }
}

/// Coefficients `b`, `gamma`, `sigma`, the delay, and the history.
#[derive(Clone)]
pub struct DelayModel {
    pub drift: ControlledCoef,
    pub qv_loading: ControlledCoef,
    pub diffusion: StateCoef,
    pub tau: f64,
    pub history: History,
}

impl fmt::Debug for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayModel")
            .field("tau", &self.tau)
            .field("history", &self.history)
            .finish_non_exhaustive()
    }
}

impl DelayModel {
    /// All coefficients zero, constant history.
    pub fn new(tau: f64, history: History) -> Self {
        Self {
            drift: Arc::new(|_, _, _, _, _| 0.0),
            qv_loading: Arc::new(|_, _, _, _, _| 0.0),
            diffusion: Arc::new(|_, _, _| 0.0),
            tau,
            history,
        }
    }

    pub fn with_drift(mut self, f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_qv_loading(mut self, f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.qv_loading = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.tau() - self.tau).abs() > 1e-9 * self.tau.max(grid.dt()) {
            return Err(Error::InvalidConfig(format!(
                "grid delay {} does not match model delay {}",
                grid.tau(),
                self.tau
            )));
        }
        self.history.validate()
    }
}

/// A strict (point-valued) control indexed by Euler step; negative steps are the control history.
pub trait Control: Sync {
    fn action(&self, step: isize) -> f64;
}

impl<F: Fn(isize) -> f64 + Sync> Control for F {
    fn action(&self, step: isize) -> f64 {
        self(step)
    }
}

/// Piecewise-constant control with a constant history action.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub actions: Vec<f64>,
    pub history_action: f64,
}

impl ControlSequence {
    pub fn constant(a: f64, steps: usize) -> Self {
        Self {
            actions: vec![a; steps],
            history_action: a,
        }
    }
}

impl Control for ControlSequence {
    fn action(&self, step: isize) -> f64 {
        if step < 0 {
            self.history_action
        } else {
            self.actions[step as usize]
        }
    }
}

/// A state trajectory on the full grid, history included.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPath {
    pub grid: TimeGrid,
    pub states: Vec<f64>,
    pub noise: NoiseIncrements,
}

impl DelayPath {
    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn terminal(&self) -> f64 {
        self.states[self.grid.last_node()]
    }

    pub fn at_zero(&self) -> f64 {
        self.states[self.grid.delay_steps()]
    }

    /// `X(t_n - tau)` for a node `n >= N_tau`.
    pub fn delayed(&self, node: usize) -> f64 {
        self.states[node - self.grid.delay_steps()]
    }
}

fn integrate_with<F>(
    model: &DelayModel,
    grid: &TimeGrid,
    history: &[f64],
    noise: NoiseIncrements,
    mut coeffs: F,
) -> Result<DelayPath>
where
    F: FnMut(usize, f64, f64, f64) -> (f64, f64),
{
    model.check_grid(grid)?;
    let lag = grid.delay_steps();
    if history.len() != lag + 1 {
        return Err(Error::LengthMismatch {
            what: "history nodes",
            expected: lag + 1,
            got: history.len(),
        });
    }
    if noise.len() != grid.steps() || noise.dqv.len() != grid.steps() {
        return Err(Error::LengthMismatch {
            what: "noise increments",
            expected: grid.steps(),
            got: noise.len(),
        });
    }
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.last_node() + 1);
    states.extend_from_slice(history);
    for k in 0..grid.steps() {
        let n = lag + k;
        let t = k as f64 * dt;
        let x = states[n];
        let xd = states[n - lag];
        let (b, g) = coeffs(k, t, x, xd);
        let s = (model.diffusion)(t, x, xd);
        let next = x + b * dt + g * noise.dqv[k] + s * noise.db[k];
        if !next.is_finite() {
            return Err(Error::NonFinite {
                stage: "forward Euler step",
                step: k,
            });
        }
        states.push(next);
    }
    Ok(DelayPath {
        grid: *grid,
        states,
        noise,
    })
}

/// Forward Euler under a strict control; `u(t - tau)` reads step `k - N_tau`.
pub fn integrate_strict(
    model: &DelayModel,
    control: &dyn Control,
    grid: &TimeGrid,
    history: &[f64],
    noise: NoiseIncrements,
) -> Result<DelayPath> {
    let lag = grid.delay_steps() as isize;
    integrate_with(model, grid, history, noise, |k, t, x, xd| {
        let u = control.action(k as isize);
        let ud = control.action(k as isize - lag);
        ((model.drift)(t, x, xd, u, ud), (model.qv_loading)(t, x, xd, u, ud))
    })
}

/// Forward Euler with `b` and `gamma` averaged over `mu_t x mu_{t-tau}` on the action grid.
pub fn integrate_relaxed(
    model: &DelayModel,
    relaxed: &RelaxedControl,
    grid: &TimeGrid,
    history: &[f64],
    noise: NoiseIncrements,
) -> Result<DelayPath> {
    if relaxed.steps() != grid.steps() {
        return Err(Error::LengthMismatch {
            what: "relaxed control steps",
            expected: grid.steps(),
            got: relaxed.steps(),
        });
    }
    let lag = grid.delay_steps() as isize;
    integrate_with(model, grid, history, noise, |k, t, x, xd| {
        relaxed.average(k as isize, k as isize - lag, |u, ud| {
            ((model.drift)(t, x, xd, u, ud), (model.qv_loading)(t, x, xd, u, ud))
        })
    })
}

/// Strict or relaxed control driving an ensemble.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    Strict(&'a dyn Control),
    Relaxed(&'a RelaxedControl),
}

impl Policy<'_> {
    pub fn integrate(
        &self,
        model: &DelayModel,
        grid: &TimeGrid,
        history: &[f64],
        noise: NoiseIncrements,
    ) -> Result<DelayPath> {
        match self {
            Policy::Strict(c) => integrate_strict(model, *c, grid, history, noise),
            Policy::Relaxed(mu) => integrate_relaxed(model, mu, grid, history, noise),
        }
    }
}

/// Independent paths sharing one model, policy and noise source.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub paths: Vec<DelayPath>,
}

/// Draw `n_paths` paths. Path `p` uses `path_rng(seed, p)`: history first, then noise.
pub fn ensemble(
    model: &DelayModel,
    policy: Policy<'_>,
    grid: &TimeGrid,
    n_paths: usize,
    source: &NoiseSource,
    seed: u64,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
    }
    model.check_grid(grid)?;
    source.validate()?;
    let paths = map_indices(n_paths, |p| {
        let mut rng = path_rng(seed, p as u64);
        let history = model.history.nodes(grid, &mut rng);
        let noise = source.sample(grid.steps(), grid.dt(), &mut rng);
        policy.integrate(model, grid, &history, noise)
    });
    Ok(PathEnsemble {
        grid: *grid,
        paths: paths.into_iter().collect::<Result<_>>()?,
    })
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn terminal_states(&self) -> Vec<f64> {
        self.paths.iter().map(DelayPath::terminal).collect()
    }

    /// States of every path at one node.
    pub fn column(&self, node: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.states[node]).collect()
    }

    /// Long-format CSV `path_id,t,state`, optionally limited to the first `max_paths` paths.
    pub fn write_csv<W: Write>(&self, mut out: W, max_paths: Option<usize>) -> io::Result<()> {
        writeln!(out, "path_id,t,state")?;
        let times = self.grid.times();
        let take = max_paths.unwrap_or(self.paths.len()).min(self.paths.len());
        for (id, path) in self.paths.iter().take(take).enumerate() {
            for (t, x) in times.iter().zip(&path.states) {
                writeln!(out, "{id},{},{}", fmt_num(*t), fmt_num(*x))?;
            }
        }
        Ok(())
    }
}
