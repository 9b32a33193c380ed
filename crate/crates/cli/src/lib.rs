//! Subcommands, configuration files, and run manifests for the `gsdde` binary.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gsdde::econ::{self, EconConfig, Mode};
use gsdde::gcalc::NoiseSource;
use gsdde::relaxed::{write_chatter_csv, ChatterConfig};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] gsdde::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gsdde",
    version,
    about = "Optimal control of delay SDEs under volatility uncertainty"
)]
pub struct Cli {
    /// Cap on worker threads for path simulation (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the G-normal table and write it as CSV.
    Gtable(RunArgs),
    /// Simulate the uncontrolled capital paths.
    Forward(RunArgs),
    /// Run the forward and backward passes and print Y0.
    Solve(RunArgs),
    /// Relaxed-control versus chattering convergence study.
    Chatter(RunArgs),
    /// Reference run with fixed defaults: four figure files and a manifest.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Gnormal,
    ScenarioSup,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gnormal => Mode::Gnormal,
            ModeArg::ScenarioSup => Mode::ScenarioSup,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML configuration file (a previous run manifest is also accepted).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Paths written to trajectory CSVs (default: all for `forward`, the
    /// configured figure count for `solve`).
    #[arg(long)]
    pub max_paths: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

/// Everything a run reads from its configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: EconConfig,
    pub chatter: ChatterConfig,
}

/// A parsed configuration plus the keys it left at their defaults.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub defaulted: Vec<String>,
}

fn defaulted_keys<T: Serialize + Default>(section: &str, given: Option<&toml::Table>) -> Vec<String> {
    let defaults = toml::Table::try_from(T::default()).expect("defaults serialize");
    defaults
        .keys()
        .filter(|k| given.is_none_or(|g| !g.contains_key(*k)))
        .map(|k| format!("{section}.{k}"))
        .collect()
}

/// Parse a config from TOML text; a manifest's `[config]` table is used if present.
pub fn parse_config(text: &str) -> CliResult<LoadedConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
    if let Some(toml::Value::Table(inner)) = table.remove("config") {
        if table.contains_key("run") {
            table = inner;
        } else {
            return Err(CliError::Config("unexpected [config] table".into()));
        }
    }
    let section = |name: &str| match table.get(name) {
        Some(toml::Value::Table(t)) => Some(t.clone()),
        _ => None,
    };
    let mut defaulted = defaulted_keys::<EconConfig>("model", section("model").as_ref());
    defaulted.extend(defaulted_keys::<ChatterConfig>("chatter", section("chatter").as_ref()));
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("invalid configuration: {}", e.message())))?;
    Ok(LoadedConfig { config, defaulted })
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.model.seed = s;
            cfg.chatter.seed = s;
        }
        if let Some(n) = self.n_paths {
            cfg.model.n_paths = n;
            cfg.chatter.n_paths = n;
        }
        if let Some(dt) = self.dt {
            cfg.model.dt = dt;
            cfg.chatter.dt = dt;
        }
        if let Some(m) = self.mode {
            cfg.model.mode = m.into();
        }
    }
}

/// Human-readable record of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run: RunInfo,
    pub result: toml::Table,
    pub defaults: Defaults,
    pub outputs: Outputs,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub workers: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Defaults {
    /// Keys the configuration file did not set, with the value used.
    pub applied: Vec<String>,
    /// Modelling choices not fixed by the model description itself.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Outputs {
    pub files: Vec<String>,
}

fn describe_defaults(cfg: &RunConfig, keys: &[String]) -> Vec<String> {
    let model = toml::Table::try_from(&cfg.model).expect("config serializes");
    let chatter = toml::Table::try_from(&cfg.chatter).expect("config serializes");
    keys.iter()
        .filter_map(|k| {
            let (section, key) = k.split_once('.')?;
            let v = match section {
                "model" => model.get(key)?,
                _ => chatter.get(key)?,
            };
            let v = match v {
                toml::Value::Table(t) => toml::Value::Table(t.clone()).to_string().replace('\n', " "),
                other => other.to_string(),
            };
            Some(format!("{k} = {}", v.trim()))
        })
        .collect()
}

fn model_notes(m: &EconConfig) -> Vec<String> {
    let loading = match &m.loading {
        econ::Loading::Constant(c) => format!("control loading C_t = {c} for all t"),
        econ::Loading::Piecewise { .. } => "control loading C_t piecewise constant (see config)".to_string(),
    };
    vec![
        loading,
        format!(
            "diffusion sigma(k) = {} k, inverse floored at |k| = {:e}",
            m.sigma_scale,
            econ::SIGMA_FLOOR
        ),
        format!(
            "basis: all monomials in (K_t, K_(t-tau)) up to degree {}",
            m.basis_degree
        ),
        format!(
            "driver sign: {:?}; regression weighting: {:?}; ridge: {:?}",
            m.driver_sign, m.weighting, m.ridge
        ),
        format!("G-normal table capacity: {:?}", m.table.capacity),
        format!("time step dt = {}, paths = {}, seed = {}", m.dt, m.n_paths, m.seed),
    ]
}

struct Session {
    command: &'static str,
    out: PathBuf,
    workers: usize,
    started: Instant,
    files: Vec<PathBuf>,
}

impl Session {
    fn new(command: &'static str, out: &Path, workers: usize) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            workers,
            started: Instant::now(),
            files: Vec::new(),
        })
    }

    fn write<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, seed: u64, result: toml::Table, defaults: Defaults, config: RunConfig) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            run: RunInfo {
                command: self.command.to_string(),
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                workers: self.workers,
                wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            },
            result,
            defaults,
            outputs: Outputs {
                files: self
                    .files
                    .iter()
                    .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                    .collect(),
            },
            config,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
        let path = self.out.join(MANIFEST);
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}

fn toml_table(entries: impl IntoIterator<Item = (&'static str, toml::Value)>) -> toml::Table {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn float(x: f64) -> toml::Value {
    // Not every TOML reader accepts nan/inf, so store them as text.
    if x.is_finite() {
        toml::Value::Float(x)
    } else {
        toml::Value::String(x.to_string())
    }
}

fn count(n: usize) -> toml::Value {
    toml::Value::Integer(n as i64)
}

/// Prepared inputs shared by the run commands.
struct Prepared {
    config: RunConfig,
    defaults: Defaults,
}

fn prepare(args: &RunArgs) -> CliResult<Prepared> {
    let loaded = load_config(&args.config)?;
    let mut config = loaded.config;
    args.apply(&mut config);
    let defaults = Defaults {
        applied: describe_defaults(&config, &loaded.defaulted),
        notes: model_notes(&config.model),
    };
    Ok(Prepared { config, defaults })
}

pub fn cmd_gtable(args: &RunArgs, workers: usize) -> CliResult<PathBuf> {
    let p = prepare(args)?;
    let mut s = Session::new("gtable", &args.out, workers)?;
    let table = p.config.model.build_table()?;
    s.write("gnormal_table.csv", |w| table.write_csv(w))?;
    let result = table_result(&table);
    s.finish(p.config.model.seed, result, p.defaults, p.config)
}

fn table_result(table: &gsdde::gcalc::GNormalTable) -> toml::Table {
    toml_table([
        ("cdf_at_zero", float(table.cdf_at(0.0))),
        ("table_nodes", count(table.x().len())),
    ])
}

fn ensemble_file(i: usize, n: usize) -> String {
    if n == 1 {
        "forward_paths.csv".to_string()
    } else {
        format!("forward_paths_{i}.csv")
    }
}

pub fn cmd_forward(args: &RunArgs, workers: usize) -> CliResult<PathBuf> {
    let p = prepare(args)?;
    let m = &p.config.model;
    m.validate()?;
    let table = Arc::new(m.build_table()?);
    let sources: Vec<NoiseSource> = econ::noise_sources(m, &table)?;
    let mut s = Session::new("forward", &args.out, workers)?;
    let mut result = toml::Table::new();
    let mut labels = Vec::new();
    for (i, source) in sources.iter().enumerate() {
        let ens = econ::simulate(m, source)?;
        let nonpositive = ens.paths.iter().filter(|p| p.states.iter().any(|&k| k <= 0.0)).count();
        s.write(&ensemble_file(i, sources.len()), |w| ens.write_csv(w, args.max_paths))?;
        let terminal = ens.terminal_states();
        let mean = gsdde::stats::mean(&terminal);
        labels.push(toml::Value::Table(toml_table([
            ("label", toml::Value::String(source.label())),
            ("mean_terminal", float(mean)),
            ("nonpositive_paths", count(nonpositive)),
        ])));
    }
    result.insert("ensembles".into(), toml::Value::Array(labels));
    s.finish(m.seed, result, p.defaults, p.config)
}

fn solve_result(report: &econ::EconReport) -> toml::Table {
    let runs: Vec<toml::Value> = report
        .runs
        .iter()
        .map(|r| {
            toml::Value::Table(toml_table([
                ("label", toml::Value::String(r.label.clone())),
                ("y0", float(r.y0())),
                ("std_error", float(r.solution.y0.std_error)),
                ("clamped_states", count(r.clamped_states)),
                ("nonpositive_paths", count(r.nonpositive_paths)),
                ("regularized_steps", count(r.solution.regularized_steps)),
            ]))
        })
        .collect();
    let mut t = toml_table([
        ("y0", float(report.y0())),
        ("std_error", float(report.std_error())),
        ("mode", toml::Value::String(report.mode_label())),
        ("clamped_states", count(report.clamped_states())),
    ]);
    t.insert("runs".into(), toml::Value::Array(runs));
    t
}

pub fn y0_line(report: &econ::EconReport) -> String {
    format!(
        "Y0 = {} +- {} (mode {})",
        gsdde::output::fmt_num(report.y0()),
        gsdde::output::fmt_num(report.std_error()),
        report.mode_label()
    )
}

pub fn cmd_solve(args: &RunArgs, workers: usize) -> CliResult<(PathBuf, String)> {
    let mut p = prepare(args)?;
    if let Some(k) = args.max_paths {
        p.config.model.figure_paths = k;
    }
    let mut s = Session::new("solve", &args.out, workers)?;
    let report = econ::run_scenario(&p.config.model)?;
    let run = report.primary();
    let keep = Some(p.config.model.figure_paths);
    s.write("backward_paths.csv", |w| {
        gsdde::fbsdde::write_backward_csv(&run.solution, &run.control, w, keep)
    })?;
    let line = y0_line(&report);
    let path = s.finish(p.config.model.seed, solve_result(&report), p.defaults, p.config)?;
    Ok((path, line))
}

pub fn cmd_chatter(args: &RunArgs, workers: usize) -> CliResult<PathBuf> {
    let p = prepare(args)?;
    let mut s = Session::new("chatter", &args.out, workers)?;
    let rows = p.config.chatter.run()?;
    s.write("chatter_gap.csv", |w| write_chatter_csv(&rows, w))?;
    let result = toml_table([("gaps", toml::Value::Array(rows.iter().map(|r| float(r.gap)).collect()))]);
    let defaults = Defaults {
        applied: p
            .defaults
            .applied
            .into_iter()
            .filter(|k| k.starts_with("chatter."))
            .collect(),
        notes: vec!["toy model: dX = u dt + sigma dB, running cost u^2, terminal cost X_T^2".to_string()],
    };
    s.finish(p.config.chatter.seed, result, defaults, p.config)
}

/// Reference configuration used by `reproduce`.
pub fn reproduce_config() -> RunConfig {
    RunConfig::default()
}

pub fn cmd_reproduce(args: &ReproduceArgs, workers: usize) -> CliResult<(PathBuf, String)> {
    let config = reproduce_config();
    let keys: Vec<String> = defaulted_keys::<EconConfig>("model", None);
    let defaults = Defaults {
        applied: describe_defaults(&config, &keys),
        notes: model_notes(&config.model),
    };
    let mut s = Session::new("reproduce", &args.out, workers)?;
    let report = econ::run_scenario(&config.model)?;
    let keep = Some(config.model.figure_paths);
    let run = report.primary();
    let [f1, f2, f3, f4] = econ::FIGURE_FILES;
    s.write(f1, |w| econ::write_density_csv(&report.table, w))?;
    s.write(f2, |w| econ::write_cdf_csv(&report.table, w))?;
    s.write(f3, |w| run.ensemble.write_csv(w, keep))?;
    s.write(f4, |w| {
        gsdde::fbsdde::write_backward_csv(&run.solution, &run.control, w, keep)
    })?;
    let mut result = solve_result(&report);
    result.extend(table_result(&report.table));
    let line = y0_line(&report);
    let path = s.finish(config.model.seed, result, defaults, config)?;
    Ok((path, line))
}

/// Runs a parsed command line; returns text for standard output.
pub fn run(cli: &Cli) -> CliResult<String> {
    let workers = cli.workers.unwrap_or_else(rayon::current_num_threads);
    let done = |p: PathBuf| format!("wrote {}", p.display());
    match &cli.command {
        Command::Gtable(a) => cmd_gtable(a, workers).map(done),
        Command::Forward(a) => cmd_forward(a, workers).map(done),
        Command::Solve(a) => cmd_solve(a, workers).map(|(p, line)| format!("{line}\n{}", done(p))),
        Command::Chatter(a) => cmd_chatter(a, workers).map(done),
        Command::Reproduce(a) => cmd_reproduce(a, workers).map(|(p, line)| format!("{line}\n{}", done(p))),
    }
}
