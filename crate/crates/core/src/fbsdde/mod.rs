//! Backward least-squares Monte Carlo for the decoupled forward–backward system
//!
//! ```text
//! Y_t = Psi(K_T) - 1/2 int_t^T [C_r Z_r sigma^{-1}(K_{r-tau})]^2 dr + int_t^T Z_r dB_r
//! ```
//!
//! discretized backward in time as
//! `Y_n = E[Y_{n+1} - 1/2 (C_n Z_n sigma^{-1}(K_{n-tau}))^2 dt | F_n]`, with each
//! conditional expectation replaced by a regression on functions of
//! `(K_n, K_{n-tau})`. [`DriverSign::Add`] flips the sign of the driver term;
//! for the quadratic terminal cost that variant blows up in finite time.

mod regression;

pub use regression::{
    regress, regress_weighted, regress_with, DesignMatrix, RegressionBasis, RegressionModel, RidgeMode, RIDGE_SCALE,
};

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_num;
use crate::sdde::{PathEnsemble, TimeGrid};
use crate::stats::McEstimate;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How the driver increment enters the backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverSign {
    /// `Y_n = E[Y_{n+1} - f dt]`: the value of the minimization problem.
    #[default]
    Subtract,
    /// `Y_n = E[Y_{n+1} + f dt]`.
    Add,
}

impl DriverSign {
    pub fn factor(self) -> f64 {
        match self {
            DriverSign::Subtract => -1.0,
            DriverSign::Add => 1.0,
        }
    }
}

/// Terminal condition, control loading `C_t`, and `sigma^{-1}` for the backward equation.
#[derive(Clone)]
pub struct BsdeSpec {
    pub terminal: ScalarFn,
    pub loading: ScalarFn,
    pub sigma_inv: ScalarFn,
    pub sign: DriverSign,
}

impl BsdeSpec {
    /// Terminal cost `(x - alpha)^2`.
    pub fn quadratic_target(
        alpha: f64,
        loading: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma_inv: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            terminal: Arc::new(move |x| (x - alpha) * (x - alpha)),
            loading: Arc::new(loading),
            sigma_inv: Arc::new(sigma_inv),
            sign: DriverSign::default(),
        }
    }

    pub fn with_sign(mut self, sign: DriverSign) -> Self {
        self.sign = sign;
        self
    }

    /// `1/2 [C_t z sigma^{-1}(x_delay)]^2`, always nonnegative.
    pub fn driver(&self, t: f64, x_delay: f64, z: f64) -> f64 {
        let v = (self.loading)(t) * z * (self.sigma_inv)(x_delay);
        0.5 * v * v
    }
}

/// Row weights used by every regression of the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Ordinary least squares. With an intercept in the basis the fitted
    /// means reproduce the target means exactly.
    #[default]
    Uniform,
    /// Each row divided by the Euclidean norm of its basis vector. Targets
    /// that grow like the basis then have roughly constant residual scale,
    /// so a few far-out paths cannot dominate the fit.
    RowNorm,
}

impl Weighting {
    fn weights(self, design: &DesignMatrix) -> Option<Vec<f64>> {
        match self {
            Weighting::Uniform => None,
            Weighting::RowNorm => Some(
                (0..design.rows())
                    .map(|i| {
                        let norm = design.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            1.0 / norm
                        } else {
                            1.0
                        }
                    })
                    .collect(),
            ),
        }
    }
}

/// Regression settings for [`backward_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolverOptions {
    pub ridge: RidgeMode,
    pub weighting: Weighting,
}

/// Least-squares estimate of `Z_n` from `Y_{n+1} - E[Y_{n+1} | F_n] ~ Z_n dB_n`.
///
/// Per path the target is `Y_{n+1} dB_n / d<B>_n`, weighted by `d<B>_n`, so the
/// fitted coefficients solve `sum d<B> phi phi^T c = sum (Y_{n+1} - m) dB phi`.
/// `Y_{n+1}` is first centered by its own projection `m` on the basis; the
/// increments have zero conditional mean, so this removes variance without
/// changing the limit.
pub fn estimate_z(
    y_next: &[f64],
    db: &[f64],
    dqv: &[f64],
    design: &DesignMatrix,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let rw = opts.weighting.weights(design);
    covariation_fit(y_next, db, dqv, design, opts.ridge, None, rw.as_deref())
}

/// Same estimator for `Z_n / s_n` with a per-path `F_n`-measurable scale `s_n`,
/// i.e. regressing `Y_{n+1} - m` on `phi s dB`. Paths with `s` near zero carry
/// no weight instead of dividing by it.
fn covariation_fit(
    y_next: &[f64],
    db: &[f64],
    dqv: &[f64],
    design: &DesignMatrix,
    ridge: RidgeMode,
    scale: Option<&[f64]>,
    row_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = design.rows();
    for (what, len) in [
        ("next values", y_next.len()),
        ("increments", db.len()),
        ("qv increments", dqv.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if let Some(path) = dqv.iter().position(|&q| q.is_nan() || q <= 0.0) {
        return Err(Error::DegenerateVolatility { path });
    }
    let centered = regress_weighted(y_next, design, ridge, row_weights)?;
    let mut targets = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let s = scale.map_or(1.0, |s| s[i]);
        let r = row_weights.map_or(1.0, |w| w[i]);
        let resid = y_next[i] - centered.predict(design.row(i));
        targets.push(if s == 0.0 { 0.0 } else { resid * db[i] / (s * dqv[i]) });
        weights.push(r * s.abs() * dqv[i].sqrt());
    }
    if weights.iter().all(|&w| w == 0.0) {
        // Zero diffusion everywhere: no martingale part to estimate.
        return Ok(vec![0.0; n]);
    }
    let model = regress_weighted(&targets, design, ridge, Some(&weights))?;
    Ok(model.predict_all(design))
}

/// Per-step values for every path; index `k` is node `N_tau + k`.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub grid: TimeGrid,
    /// `y[k][p]` for `k = 0..=steps`.
    pub y: Vec<Vec<f64>>,
    /// `z[k][p]` for `k = 0..steps`.
    pub z: Vec<Vec<f64>>,
    pub models: Vec<RegressionModel>,
    /// Mean of the fitted `Y` at `t = 0`, with its standard error across paths.
    pub y0: McEstimate,
    /// Steps where the plain normal equations were singular.
    pub regularized_steps: usize,
}

impl BackwardSolution {
    pub fn y_mean(&self, k: usize) -> McEstimate {
        McEstimate::from_samples(&self.y[k])
    }
}

fn column(ens: &PathEnsemble, node: usize) -> Vec<f64> {
    ens.paths.iter().map(|p| p.states[node]).collect()
}

/// Backward recursion from `Y_N = Psi(K_N)` down to `t = 0`.
pub fn backward_solve(
    ens: &PathEnsemble,
    spec: &BsdeSpec,
    basis: &RegressionBasis,
    opts: &SolverOptions,
) -> Result<BackwardSolution> {
    let ridge = opts.ridge;
    let grid = ens.grid;
    let lag = grid.delay_steps();
    let steps = grid.steps();
    let dt = grid.dt();
    if ens.is_empty() {
        return Err(Error::InvalidConfig("empty ensemble".into()));
    }
    if ens.len() < basis.len() {
        return Err(Error::TooFewPaths {
            paths: ens.len(),
            basis: basis.len(),
        });
    }

    let mut y = vec![Vec::new(); steps + 1];
    let mut z = vec![Vec::new(); steps];
    let mut models = Vec::with_capacity(steps);
    y[steps] = column(ens, lag + steps).iter().map(|&x| (spec.terminal)(x)).collect();
    if y[steps].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "terminal condition",
            step: steps,
        });
    }
    let mut regularized_steps = 0;
    let sign = spec.sign.factor();

    for k in (0..steps).rev() {
        let node = lag + k;
        let t = k as f64 * dt;
        let x = column(ens, node);
        let xd = column(ens, node - lag);
        let db: Vec<f64> = ens.paths.iter().map(|p| p.noise.db[k]).collect();
        let dqv: Vec<f64> = ens.paths.iter().map(|p| p.noise.dqv[k]).collect();
        let design = basis.design(&x, &xd)?;
        // Fit Z sigma^{-1} directly: it is what the driver needs and it stays
        // bounded where sigma vanishes. Z itself is recovered per path.
        let inv: Vec<f64> = xd.iter().map(|&d| (spec.sigma_inv)(d)).collect();
        // An infinite inverse stands for zero diffusion.
        if inv.iter().any(|v| v.is_nan() || *v == 0.0) {
            return Err(Error::NonFinite {
                stage: "sigma inverse",
                step: k,
            });
        }
        let sigma: Vec<f64> = inv.iter().map(|v| 1.0 / v).collect();
        let rw = opts.weighting.weights(&design);
        let grad = covariation_fit(&y[k + 1], &db, &dqv, &design, ridge, Some(&sigma), rw.as_deref())?;
        let c = (spec.loading)(t);
        let zk: Vec<f64> = grad.iter().zip(&sigma).map(|(g, s)| g * s).collect();
        let targets: Vec<f64> = y[k + 1]
            .iter()
            .zip(&grad)
            .map(|(yn, g)| yn + sign * 0.5 * (c * g).powi(2) * dt)
            .collect();
        let model = regress_weighted(&targets, &design, ridge, rw.as_deref())?;
        if model.is_regularized() {
            regularized_steps += 1;
        }
        let yk = model.predict_all(&design);
        if yk.iter().any(|v| !v.is_finite()) || zk.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "backward recursion",
                step: k,
            });
        }
        y[k] = yk;
        z[k] = zk;
        models.push(model);
    }
    models.reverse();
    if regularized_steps > 0 {
        log::info!("{regularized_steps} of {steps} backward steps needed ridge regularization");
    }
    let y0 = McEstimate::from_samples(&y[0]);
    if !y0.mean.is_finite() {
        return Err(Error::NonFinite {
            stage: "initial value",
            step: 0,
        });
    }
    Ok(BackwardSolution {
        grid,
        y,
        z,
        models,
        y0,
        regularized_steps,
    })
}

/// Feedback control `u*_n = C_{t_n} Z_n sigma^{-1}(K_{n-tau})`, indexed `[k][path]`.
pub fn optimal_control(sol: &BackwardSolution, ens: &PathEnsemble, spec: &BsdeSpec) -> Result<Vec<Vec<f64>>> {
    let dt = sol.grid.dt();
    sol.z
        .iter()
        .enumerate()
        .map(|(k, zk)| {
            let c = (spec.loading)(k as f64 * dt);
            zk.iter()
                .zip(&ens.paths)
                .map(|(z, p)| {
                    // Node k is the delayed node of step k.
                    let s = (spec.sigma_inv)(p.states[k]);
                    if s.is_nan() || (s.is_infinite() && *z != 0.0) {
                        return Err(Error::NonFinite {
                            stage: "sigma inverse",
                            step: k,
                        });
                    }
                    Ok(if *z == 0.0 { 0.0 } else { c * z * s })
                })
                .collect()
        })
        .collect()
}

/// Long-format CSV `path_id,t,Y,Z,u_star`; `Z` and `u_star` are blank at `t = T`.
pub fn write_backward_csv<W: Write>(
    sol: &BackwardSolution,
    u_star: &[Vec<f64>],
    mut out: W,
    max_paths: Option<usize>,
) -> io::Result<()> {
    writeln!(out, "path_id,t,Y,Z,u_star")?;
    let n_paths = sol.y[0].len();
    let take = max_paths.unwrap_or(n_paths).min(n_paths);
    let dt = sol.grid.dt();
    for p in 0..take {
        for k in 0..=sol.grid.steps() {
            let (z, u) = match (sol.z.get(k), u_star.get(k)) {
                (Some(z), Some(u)) => (z[p], u[p]),
                _ => (f64::NAN, f64::NAN),
            };
            writeln!(
                out,
                "{p},{},{},{},{}",
                fmt_num(k as f64 * dt),
                fmt_num(sol.y[k][p]),
                fmt_num(z),
                fmt_num(u)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcalc::{NoiseSource, ScenarioPolicy, VolatilityBand};
    use crate::rng::master_rng;
    use crate::sdde::{ensemble, DelayModel, History, Policy};
    use crate::stats::mean;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit_source() -> NoiseSource {
        NoiseSource::Scenario(ScenarioPolicy::constant(1.0, VolatilityBand::point(1.0).unwrap()).unwrap())
    }

    fn capital_model(history: History) -> DelayModel {
        DelayModel::new(0.1, history)
            .with_drift(|_, _, xd, _, _| xd)
            .with_diffusion(|_, _, xd| 0.5 * xd)
    }

    fn capital_ensemble(n: usize, history: History, seed: u64) -> PathEnsemble {
        let grid = TimeGrid::new(0.1, 1.0, 0.02).unwrap();
        ensemble(
            &capital_model(history),
            Policy::Strict(&|_| 0.0),
            &grid,
            n,
            &unit_source(),
            seed,
        )
        .unwrap()
    }

    fn random_history() -> History {
        History::Uniform {
            lo: 1.0,
            hi: 2.0,
            per_path: false,
        }
    }

    #[test]
    fn constant_terminal_zero_loading_is_flat() {
        let ens = capital_ensemble(2000, random_history(), 1);
        let spec = BsdeSpec {
            terminal: Arc::new(|_| 2.5),
            loading: Arc::new(|_| 0.0),
            sigma_inv: Arc::new(|x| 1.0 / (0.5 * x)),
            sign: DriverSign::Subtract,
        };
        let sol = backward_solve(&ens, &spec, &RegressionBasis::quadratic(), &SolverOptions::default()).unwrap();
        for yk in &sol.y {
            assert!(yk.iter().all(|v| (v - 2.5).abs() < 1e-9));
        }
        let u = optimal_control(&sol, &ens, &spec).unwrap();
        assert!(u.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_condition_exact() {
        let ens = capital_ensemble(500, random_history(), 2);
        let spec = BsdeSpec::quadratic_target(0.3, |_| 1.0, |x| 1.0 / (0.5 * x));
        let sol = backward_solve(&ens, &spec, &RegressionBasis::quadratic(), &SolverOptions::default()).unwrap();
        for (y, x) in sol.y[ens.grid.steps()].iter().zip(ens.terminal_states()) {
            assert_eq!(*y, (x - 0.3) * (x - 0.3));
        }
    }

    #[test]
    fn zero_loading_matches_forward_monte_carlo() {
        let ens = capital_ensemble(10_000, History::Constant(1.0), 3);
        let spec = BsdeSpec::quadratic_target(0.0, |_| 0.0, |x| 1.0 / (0.5 * x));
        let sol = backward_solve(&ens, &spec, &RegressionBasis::quadratic(), &SolverOptions::default()).unwrap();
        let direct = mean(&ens.terminal_states().iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(
            (sol.y0.mean - direct).abs() <= 0.05 * direct,
            "{} vs {direct}",
            sol.y0.mean
        );
        // Martingale property of the fitted means.
        for k in 0..ens.grid.steps() {
            let a = sol.y_mean(k);
            let b = sol.y_mean(k + 1);
            let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            assert!((a.mean - b.mean).abs() <= 3.0 * se, "step {k}");
        }
    }

    #[test]
    fn driver_moves_fitted_mean_by_its_sign() {
        let ens = capital_ensemble(4000, random_history(), 4);
        let basis = RegressionBasis::quadratic();
        let lag = ens.grid.delay_steps();
        // A small loading keeps the additive variant finite on [0, 1].
        for sign in [DriverSign::Subtract, DriverSign::Add] {
            let spec = BsdeSpec::quadratic_target(0.0, |_| 0.1, |x| 1.0 / (0.5 * x)).with_sign(sign);
            // Ordinary least squares keeps the fitted mean equal to the target mean.
            let sol = backward_solve(&ens, &spec, &basis, &SolverOptions::default()).unwrap();
            for k in 0..ens.grid.steps() {
                let x = ens.column(lag + k);
                let xd = ens.column(k);
                let d = basis.design(&x, &xd).unwrap();
                let proj = regress(&sol.y[k + 1], &d).unwrap().predict_all(&d);
                let gap = sign.factor() * (mean(&sol.y[k]) - mean(&proj));
                assert!(gap >= -1e-9 * mean(&proj).abs(), "{sign:?} step {k}: {gap}");
            }
            let moved = sign.factor() * (sol.y0.mean - mean(&sol.y[ens.grid.steps()]));
            assert!(moved > 0.0, "{sign:?}");
        }
    }

    #[test]
    fn riccati_oracle_for_undelayed_linear_quadratic_problem() {
        // dK = M K dt + s K dB, Y_T = K_T^2, driver -1/2 (C Z / (s K))^2.
        // V(t, k) = a(t) k^2 with a' + (2M + s^2) a - 2 C^2 a^2 = 0, a(T) = 1.
        let (m, s, c, horizon) = (1.0, 1.0, 1.0, 1.0);
        let grid = TimeGrid::new(0.01, horizon, 0.005).unwrap();
        let model = DelayModel::new(
            0.01,
            History::Uniform {
                lo: 1.0,
                hi: 2.0,
                per_path: true,
            },
        )
        .with_drift(move |_, x, _, _, _| m * x)
        .with_diffusion(move |_, x, _| s * x);
        let ens = ensemble(&model, Policy::Strict(&|_| 0.0), &grid, 20_000, &unit_source(), 8).unwrap();
        let spec = BsdeSpec::quadratic_target(0.0, move |_| c, move |x| 1.0 / (s * x));
        let basis = RegressionBasis::new()
            .with("1", |_, _| 1.0)
            .with("x", |x, _| x)
            .with("x^2", |x, _| x * x);
        // Plain least squares is swamped by the lognormal tail here.
        let opts = SolverOptions {
            weighting: Weighting::RowNorm,
            ..Default::default()
        };
        let sol = backward_solve(&ens, &spec, &basis, &opts).unwrap();
        let r = 2.0 * m + s * s;
        let q = 2.0 * c * c;
        let e = (r * horizon).exp();
        let a0 = r * e / (r + q * (e - 1.0));
        let k0 = ens.column(grid.delay_steps());
        let exact = a0 * mean(&k0.iter().map(|k| k * k).collect::<Vec<_>>());
        assert!((sol.y0.mean - exact).abs() < 0.05 * exact, "{} vs {exact}", sol.y0.mean);
    }

    #[test]
    fn z_of_constant_is_zero() {
        let n = 10_000;
        let mut rng = master_rng(5);
        let dt: f64 = 0.01;
        let x: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let db: Vec<f64> = (0..n)
            .map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let dqv = vec![dt; n];
        let d = RegressionBasis::quadratic()
            .design(&x, &x.iter().map(|v| v * 0.7).collect::<Vec<_>>())
            .unwrap();
        let z = estimate_z(&vec![3.0; n], &db, &dqv, &d, &SolverOptions::default()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-6));
        let mut zero_qv = dqv.clone();
        zero_qv[17] = 0.0;
        assert_eq!(
            estimate_z(&vec![3.0; n], &db, &zero_qv, &d, &SolverOptions::default()),
            Err(Error::DegenerateVolatility { path: 17 })
        );
    }

    #[test]
    fn z_recovers_diffusion_over_one_step() {
        // Y_{n+1} = K_{n+1} = K_n + K_d dt + 2 K_d dB  =>  Z = 2 K_d.
        let n = 10_000;
        let dt: f64 = 0.01;
        let mut rng = master_rng(6);
        let k: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let kd: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let db: Vec<f64> = (0..n)
            .map(|_| 1.25 * dt.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let dqv = vec![1.5625 * dt; n];
        let next: Vec<f64> = (0..n).map(|i| k[i] + kd[i] * dt + 2.0 * kd[i] * db[i]).collect();
        let d = RegressionBasis::quadratic().design(&k, &kd).unwrap();
        let z = estimate_z(&next, &db, &dqv, &d, &SolverOptions::default()).unwrap();
        let rms = (z.iter().zip(&kd).map(|(z, d)| (z - 2.0 * d).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = (kd.iter().map(|d| 4.0 * d * d).sum::<f64>() / n as f64).sqrt();
        assert!(rms < 0.05 * scale, "rms {rms} vs {scale}");
        // Reproducible.
        assert_eq!(z, estimate_z(&next, &db, &dqv, &d, &SolverOptions::default()).unwrap());
    }

    fn one_step(n: usize, seed: u64) -> (PathEnsemble, BackwardSolution, BsdeSpec, RegressionBasis) {
        // K_1 = K_0 + 0.5 dB with K_0 ~ U[1, 2]; terminal K^2.
        let grid = TimeGrid::new(0.04, 0.04, 0.04).unwrap();
        let model = DelayModel::new(
            0.04,
            History::Uniform {
                lo: 1.0,
                hi: 2.0,
                per_path: true,
            },
        )
        .with_diffusion(|_, _, _| 0.5);
        let ens = ensemble(&model, Policy::Strict(&|_| 0.0), &grid, n, &unit_source(), seed).unwrap();
        let spec = BsdeSpec::quadratic_target(0.0, |_| 0.8, |_| 2.0);
        let basis = RegressionBasis::new()
            .with("1", |_, _| 1.0)
            .with("x", |x, _| x)
            .with("x^2", |x, _| x * x);
        let sol = backward_solve(&ens, &spec, &basis, &SolverOptions::default()).unwrap();
        (ens, sol, spec, basis)
    }

    #[test]
    fn z_matches_finite_difference_gradient() {
        let (ens, sol, _, basis) = one_step(100_000, 7);
        // Value function without driver: regress the terminal values on the basis at t = 0.
        let x = ens.column(ens.grid.delay_steps());
        let d = basis.design(&x, &x).unwrap();
        let value = regress(&sol.y[1], &d).unwrap();
        let h = 1e-3;
        for x0 in [1.2, 1.5, 1.8] {
            let fd = (value.predict(&basis.row(x0 + h, x0)) - value.predict(&basis.row(x0 - h, x0))) / (2.0 * h);
            let i = x
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x0).abs().total_cmp(&(b.1 - x0).abs()))
                .unwrap()
                .0;
            let z = sol.z[0][i];
            let expect = 0.5 * fd;
            assert!(
                (z - expect).abs() <= 0.05 * expect.abs() + 0.5 * (x[i] - x0).abs(),
                "x0={x0}: {z} vs {expect}"
            );
        }
    }

    #[test]
    fn one_step_control_matches_analytic_gradient() {
        // u* = C Z sigma^{-1} = 0.8 * (2 x 0.5) * 2 = 1.6 x.
        let reps: Vec<f64> = (0..20)
            .map(|s| {
                let (ens, sol, spec, _) = one_step(5_000, 100 + s);
                let u = optimal_control(&sol, &ens, &spec).unwrap();
                let x = ens.column(ens.grid.delay_steps());
                mean(&u[0].iter().zip(&x).map(|(u, x)| u / x).collect::<Vec<_>>())
            })
            .collect();
        let est = McEstimate::from_samples(&reps);
        assert!(
            (est.mean - 1.6).abs() <= 3.0 * est.std_error,
            "{} +- {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn csv_layout() {
        let (ens, sol, spec, _) = one_step(50, 1);
        let u = optimal_control(&sol, &ens, &spec).unwrap();
        let mut buf = Vec::new();
        write_backward_csv(&sol, &u, &mut buf, Some(2)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,Y,Z,u_star");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[2].ends_with(",,"));
    }
}
