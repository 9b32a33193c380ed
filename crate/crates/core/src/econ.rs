//! Capital accumulation with delayed production under volatility uncertainty
//!
//! ```text
//! dK = M K(t-tau) dt + s K(t-tau) dB_t,     K = eta on [-tau, 0],
//! V  = inf_u E[(K_T - alpha)^2 + 1/2 int |u|^2 dt],
//! ```
//!
//! solved through the decoupled forward–backward system with driver
//! `1/2 [C_t Z sigma^{-1}(K(t-tau))]^2` and feedback `u* = C_t Z sigma^{-1}`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsdde::{
    backward_solve, optimal_control, write_backward_csv, BackwardSolution, BsdeSpec, DriverSign, RegressionBasis,
    RidgeMode, SolverOptions, Weighting,
};
use crate::gcalc::{
    build_gnormal_table_with, Capacity, GNormalTable, GridSpec, NoiseSource, ScenarioPolicy, VolatilityBand,
};
use crate::output::fmt_num;
use crate::sdde::{ensemble, DelayModel, History, PathEnsemble, Policy, TimeGrid};
use crate::stats::{normal_cdf, normal_pdf};

/// `|k|` below this is clamped before inverting the diffusion.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Figure files written by [`write_figures`], in order.
pub const FIGURE_FILES: [&str; 4] = [
    "fig1_gnormal_density.csv",
    "fig2_gnormal_cdf.csv",
    "fig3_forward_paths.csv",
    "fig4_backward_paths.csv",
];

/// Deterministic control loading `C_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Loading {
    Constant(f64),
    /// Right-continuous step function: `values[i]` on `[times[i], times[i+1])`.
    Piecewise {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Loading {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Loading::Constant(c) => *c,
            Loading::Piecewise { times, values } => {
                let i = times.partition_point(|&s| s <= t).saturating_sub(1);
                values[i]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Loading::Constant(c) if !c.is_finite() => Err(Error::InvalidConfig("loading must be finite".into())),
            Loading::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidConfig(
                        "piecewise loading needs equally many times and values".into(),
                    ));
                }
                if times[0] > 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidConfig(
                        "loading times must start at or before 0 and increase".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig("loading values must be finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Initial capital on `[-tau, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HistoryRule {
    /// Uniform draws on `[lo, hi]`, one per grid node (or one per path).
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default)]
        per_path: bool,
    },
    Constant {
        value: f64,
    },
}

impl HistoryRule {
    pub fn to_history(&self) -> History {
        match *self {
            HistoryRule::Uniform { lo, hi, per_path } => History::Uniform { lo, hi, per_path },
            HistoryRule::Constant { value } => History::Constant(value),
        }
    }
}

/// How the sublinear expectation is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One ensemble driven by G-normal increments.
    Gnormal,
    /// One ensemble per constant volatility; the largest `Y0` is reported.
    ScenarioSup,
}

/// Finite-difference grid for the G-normal table, in units of `sigma_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableGrid {
    pub half_width_sigmas: f64,
    pub intervals: usize,
    pub cfl: f64,
    pub capacity: Capacity,
}

impl Default for TableGrid {
    fn default() -> Self {
        Self {
            half_width_sigmas: 6.0,
            intervals: 1200,
            cfl: 0.4,
            capacity: Capacity::default(),
        }
    }
}

impl TableGrid {
    pub fn spec(&self, band: VolatilityBand) -> GridSpec {
        GridSpec {
            half_width: self.half_width_sigmas * band.sigma_max(),
            intervals: self.intervals,
            cfl: self.cfl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconConfig {
    /// Growth coefficient `M`.
    pub growth: f64,
    pub tau: f64,
    pub horizon: f64,
    pub alpha: f64,
    pub band: VolatilityBand,
    pub loading: Loading,
    /// `sigma(k) = sigma_scale * k`.
    pub sigma_scale: f64,
    pub history: HistoryRule,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Volatilities for scenario mode; empty means the band extremes.
    pub scenarios: Vec<f64>,
    pub basis_degree: u32,
    pub ridge: RidgeMode,
    pub weighting: Weighting,
    pub driver_sign: DriverSign,
    pub table: TableGrid,
    /// Paths written to the trajectory figures.
    pub figure_paths: usize,
}

impl Default for EconConfig {
    fn default() -> Self {
        Self {
            growth: 1.0,
            tau: 0.1,
            horizon: 1.0,
            alpha: 0.0,
            band: VolatilityBand::new(0.75, 1.25).expect("valid band"),
            loading: Loading::Constant(1.0),
            sigma_scale: 2.0,
            history: HistoryRule::Uniform {
                lo: 1.0,
                hi: 2.0,
                per_path: false,
            },
            n_paths: 10_000,
            dt: 0.01,
            seed: DEFAULT_SEED,
            mode: Mode::Gnormal,
            scenarios: Vec::new(),
            basis_degree: 2,
            ridge: RidgeMode::default(),
            weighting: Weighting::RowNorm,
            driver_sign: DriverSign::default(),
            table: TableGrid::default(),
            figure_paths: 20,
        }
    }
}

impl EconConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.tau, self.horizon, self.dt)
    }

    pub fn basis(&self) -> RegressionBasis {
        RegressionBasis::polynomial(self.basis_degree)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        for (name, v) in [
            ("growth", self.growth),
            ("alpha", self.alpha),
            ("sigma_scale", self.sigma_scale),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        let l = self.basis().len();
        if self.n_paths < l {
            return Err(Error::TooFewPaths {
                paths: self.n_paths,
                basis: l,
            });
        }
        match self.history {
            HistoryRule::Uniform { lo, hi, .. } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                return Err(Error::InvalidConfig(format!("history bounds [{lo}, {hi}] invalid")));
            }
            HistoryRule::Constant { value } if !value.is_finite() => {
                return Err(Error::InvalidConfig("history value must be finite".into()));
            }
            _ => {}
        }
        self.loading.validate()?;
        self.scenario_policies()?;
        Ok(())
    }

    pub fn model(&self) -> DelayModel {
        let (m, s) = (self.growth, self.sigma_scale);
        DelayModel::new(self.tau, self.history.to_history())
            .with_drift(move |_, _, xd, _, _| m * xd)
            .with_diffusion(move |_, _, xd| s * xd)
    }

    /// `1 / (s k)` with `|k|` floored at [`SIGMA_FLOOR`]; infinite when `s = 0`.
    pub fn sigma_inv(&self) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
        let s = self.sigma_scale;
        move |k: f64| {
            if s == 0.0 {
                return f64::INFINITY;
            }
            let k = if k.abs() < SIGMA_FLOOR {
                SIGMA_FLOOR.copysign(k)
            } else {
                k
            };
            1.0 / (s * k)
        }
    }

    pub fn bsde_spec(&self) -> BsdeSpec {
        let loading = self.loading.clone();
        BsdeSpec::quadratic_target(self.alpha, move |t| loading.at(t), self.sigma_inv()).with_sign(self.driver_sign)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            ridge: self.ridge,
            weighting: self.weighting,
        }
    }

    pub fn scenario_policies(&self) -> Result<Vec<ScenarioPolicy>> {
        if self.scenarios.is_empty() {
            return Ok(ScenarioPolicy::extremes(self.band));
        }
        self.scenarios
            .iter()
            .map(|&s| ScenarioPolicy::constant(s, self.band))
            .collect()
    }

    pub fn build_table(&self) -> Result<GNormalTable> {
        build_gnormal_table_with(self.band, &self.table.spec(self.band), self.table.capacity)
    }
}

/// One backward solve on one ensemble.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub label: String,
    pub ensemble: PathEnsemble,
    pub solution: BackwardSolution,
    pub control: Vec<Vec<f64>>,
    /// Delayed states with `|k|` below [`SIGMA_FLOOR`] fed to `sigma^{-1}`.
    pub clamped_states: usize,
    /// Paths whose capital reaches zero or below at some node.
    pub nonpositive_paths: usize,
}

impl ScenarioRun {
    pub fn y0(&self) -> f64 {
        self.solution.y0.mean
    }
}

#[derive(Debug, Clone)]
pub struct EconReport {
    pub config: EconConfig,
    pub table: Arc<GNormalTable>,
    pub runs: Vec<ScenarioRun>,
    /// Index of the run that determines `Y0`.
    pub argmax: usize,
}

impl EconReport {
    pub fn y0(&self) -> f64 {
        self.runs[self.argmax].y0()
    }

    pub fn std_error(&self) -> f64 {
        self.runs[self.argmax].solution.y0.std_error
    }

    pub fn mode_label(&self) -> String {
        match self.config.mode {
            Mode::Gnormal => "gnormal".to_string(),
            Mode::ScenarioSup => format!("scenario-sup[{}]", self.runs[self.argmax].label),
        }
    }

    pub fn primary(&self) -> &ScenarioRun {
        &self.runs[self.argmax]
    }

    pub fn clamped_states(&self) -> usize {
        self.runs.iter().map(|r| r.clamped_states).sum()
    }
}

/// Noise sources for the configured mode, labelled.
pub fn noise_sources(config: &EconConfig, table: &Arc<GNormalTable>) -> Result<Vec<NoiseSource>> {
    Ok(match config.mode {
        Mode::Gnormal => vec![NoiseSource::GNormal(Arc::clone(table))],
        Mode::ScenarioSup => config
            .scenario_policies()?
            .into_iter()
            .map(NoiseSource::Scenario)
            .collect(),
    })
}

/// Uncontrolled capital paths for one noise source.
pub fn simulate(config: &EconConfig, source: &NoiseSource) -> Result<PathEnsemble> {
    config.validate()?;
    let grid = config.grid()?;
    ensemble(
        &config.model(),
        Policy::Strict(&|_| 0.0),
        &grid,
        config.n_paths,
        source,
        config.seed,
    )
}

fn solve_one(config: &EconConfig, source: &NoiseSource) -> Result<ScenarioRun> {
    let ens = simulate(config, source)?;
    let spec = config.bsde_spec();
    let solution = backward_solve(&ens, &spec, &config.basis(), &config.solver_options())?;
    let control = optimal_control(&solution, &ens, &spec)?;
    let steps = ens.grid.steps();
    let clamped_states = ens
        .paths
        .iter()
        .map(|p| p.states[..steps].iter().filter(|k| k.abs() < SIGMA_FLOOR).count())
        .sum();
    let nonpositive_paths = ens.paths.iter().filter(|p| p.states.iter().any(|&k| k <= 0.0)).count();
    if clamped_states > 0 {
        log::warn!("{clamped_states} delayed states clamped at |k| = {SIGMA_FLOOR:e} before inverting sigma");
    }
    Ok(ScenarioRun {
        label: source.label(),
        ensemble: ens,
        solution,
        control,
        clamped_states,
        nonpositive_paths,
    })
}

/// Table, forward ensembles, backward recursion, and feedback control.
pub fn run_scenario(config: &EconConfig) -> Result<EconReport> {
    config.validate()?;
    let table = Arc::new(config.build_table()?);
    let runs = noise_sources(config, &table)?
        .iter()
        .map(|s| solve_one(config, s))
        .collect::<Result<Vec<_>>>()?;
    let argmax = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.y0() > runs[best].y0() { i } else { best });
    Ok(EconReport {
        config: config.clone(),
        table,
        runs,
        argmax,
    })
}

/// `x,pdf,std_normal_pdf`.
pub fn write_density_csv<W: Write>(table: &GNormalTable, mut out: W) -> io::Result<()> {
    writeln!(out, "x,pdf,std_normal_pdf")?;
    for (x, p) in table.x().iter().zip(table.pdf()) {
        writeln!(out, "{},{},{}", fmt_num(*x), fmt_num(*p), fmt_num(normal_pdf(*x)))?;
    }
    Ok(())
}

/// `x,cdf,std_normal_cdf`.
pub fn write_cdf_csv<W: Write>(table: &GNormalTable, mut out: W) -> io::Result<()> {
    writeln!(out, "x,cdf,std_normal_cdf")?;
    for (x, c) in table.x().iter().zip(table.cdf()) {
        writeln!(out, "{},{},{}", fmt_num(*x), fmt_num(*c), fmt_num(normal_cdf(*x)))?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> io::Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    Ok((path.clone(), BufWriter::new(File::create(path)?)))
}

/// Writes the four figure CSVs into `dir` and returns their paths.
pub fn write_figures(report: &EconReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let keep = Some(report.config.figure_paths);
    let run = report.primary();
    let mut written = Vec::with_capacity(FIGURE_FILES.len());

    let (p, mut f) = create(dir, FIGURE_FILES[0])?;
    write_density_csv(&report.table, &mut f)?;
    f.flush()?;
    written.push(p);

    let (p, mut f) = create(dir, FIGURE_FILES[1])?;
    write_cdf_csv(&report.table, &mut f)?;
    f.flush()?;
    written.push(p);

    let (p, mut f) = create(dir, FIGURE_FILES[2])?;
    run.ensemble.write_csv(&mut f, keep)?;
    f.flush()?;
    written.push(p);

    let (p, mut f) = create(dir, FIGURE_FILES[3])?;
    write_backward_csv(&run.solution, &run.control, &mut f, keep)?;
    f.flush()?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;

    fn small() -> EconConfig {
        EconConfig {
            n_paths: 2000,
            dt: 0.02,
            ..EconConfig::default()
        }
    }

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = EconConfig::default();
        assert_eq!((c.growth, c.tau, c.horizon, c.alpha), (1.0, 0.1, 1.0, 0.0));
        assert_eq!((c.band.sigma_min(), c.band.sigma_max()), (0.75, 1.25));
        assert_eq!(c.loading, Loading::Constant(1.0));
        assert_eq!(c.basis().len(), 6);
        c.validate().unwrap();
    }

    #[test]
    fn piecewise_loading_is_right_continuous() {
        let l = Loading::Piecewise {
            times: vec![0.0, 0.5],
            values: vec![1.0, 2.0],
        };
        assert_eq!(l.at(0.0), 1.0);
        assert_eq!(l.at(0.49), 1.0);
        assert_eq!(l.at(0.5), 2.0);
        assert_eq!(l.at(1.0), 2.0);
        assert!(Loading::Piecewise {
            times: vec![0.5, 0.2],
            values: vec![1.0, 2.0]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sigma_inverse_is_floored() {
        let inv = EconConfig::default().sigma_inv();
        assert_eq!(inv(2.0), 0.25);
        assert_eq!(inv(0.0), 1.0 / (2.0 * SIGMA_FLOOR));
        assert_eq!(inv(-1e-9), -1.0 / (2.0 * SIGMA_FLOOR));
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            EconConfig { n_paths: 0, ..small() },
            EconConfig { n_paths: 3, ..small() },
            EconConfig { tau: 0.105, ..small() },
            EconConfig {
                history: HistoryRule::Uniform {
                    lo: 2.0,
                    hi: 1.0,
                    per_path: false,
                },
                ..small()
            },
            EconConfig {
                scenarios: vec![2.0],
                ..small()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn degenerate_band_zero_loading_matches_plain_monte_carlo() {
        let c = EconConfig {
            band: VolatilityBand::point(1.0).unwrap(),
            loading: Loading::Constant(0.0),
            history: HistoryRule::Constant { value: 1.0 },
            // Plain least squares preserves means step by step; the weighted
            // fit trades that for stability under a nonzero driver.
            weighting: Weighting::Uniform,
            ..small()
        };
        let report = run_scenario(&c).unwrap();
        let direct = mean(
            &report
                .primary()
                .ensemble
                .terminal_states()
                .iter()
                .map(|k| k * k)
                .collect::<Vec<_>>(),
        );
        assert!(
            (report.y0() - direct).abs() <= 0.05 * direct,
            "{} vs {direct}",
            report.y0()
        );
    }

    #[test]
    fn frozen_dynamics_give_the_squared_distance() {
        let c = EconConfig {
            growth: 0.0,
            sigma_scale: 0.0,
            alpha: 10.0,
            history: HistoryRule::Constant { value: 1.5 },
            n_paths: 50,
            ..small()
        };
        let report = run_scenario(&c).unwrap();
        let want = (1.5f64 - 10.0).powi(2);
        assert!((report.y0() - want).abs() <= 1e-6 * want, "{}", report.y0());
        assert!(report.primary().control.iter().flatten().all(|&u| u == 0.0));
    }

    #[test]
    fn value_decreases_as_target_approaches_mean_capital() {
        // Without control the value is E[(K_T - alpha)^2], convex in alpha with
        // its minimum at the mean terminal capital.
        let base = EconConfig {
            mode: Mode::ScenarioSup,
            scenarios: vec![1.0],
            loading: Loading::Constant(0.0),
            ..small()
        };
        let first = run_scenario(&base).unwrap();
        let m = mean(&first.primary().ensemble.terminal_states());
        let values: Vec<f64> = [0.0, 0.5 * m, m]
            .iter()
            .map(|&a| {
                run_scenario(&EconConfig {
                    alpha: a,
                    ..base.clone()
                })
                .unwrap()
                .y0()
            })
            .collect();
        assert!(values[0] >= values[1] && values[1] >= values[2], "{values:?}");
    }

    #[test]
    fn scenario_sup_dominates_each_constant_scenario() {
        let sup = EconConfig {
            mode: Mode::ScenarioSup,
            scenarios: vec![0.75, 1.0, 1.25],
            ..small()
        };
        let report = run_scenario(&sup).unwrap();
        for s in [0.75, 1.0, 1.25] {
            let single = run_scenario(&EconConfig {
                scenarios: vec![s],
                ..sup.clone()
            })
            .unwrap();
            assert!(report.y0() >= single.y0(), "{s}");
        }
        assert!(report.mode_label().starts_with("scenario-sup"));
    }

    #[test]
    fn figures_have_expected_headers() {
        let report = run_scenario(&EconConfig {
            figure_paths: 2,
            ..small()
        })
        .unwrap();
        let dir = std::env::temp_dir().join(format!("gsdde-econ-{}", std::process::id()));
        let files = write_figures(&report, &dir).unwrap();
        let heads: Vec<String> = files
            .iter()
            .map(|f| std::fs::read_to_string(f).unwrap().lines().next().unwrap().to_string())
            .collect();
        assert_eq!(
            heads,
            [
                "x,pdf,std_normal_pdf",
                "x,cdf,std_normal_cdf",
                "path_id,t,state",
                "path_id,t,Y,Z,u_star"
            ]
        );
        let fwd = std::fs::read_to_string(&files[2]).unwrap();
        let steps = report.primary().ensemble.grid.last_node() + 1;
        assert_eq!(fwd.lines().count(), 1 + 2 * steps);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
