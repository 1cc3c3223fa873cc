//! Batch driver behind the `mlmc-pimd` binary.
//!
//! Configuration is a flat `key = value` file, overridden by `MLMC_PIMD_*`
//! environment variables, overridden by command-line flags. Every subcommand
//! writes one CSV and a sidecar `<output>.config.txt` holding the effective
//! configuration, which can be fed back through `--config` to replay the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::dynamics::{pimdsh_run, HopConfig, LangevinConfig, PimdSh, StopRule};
use crate::error::{Channel, Error, Result};
use crate::estimators::{
    allocation_plan, derive_seed, equal_plan, mean_and_stderr, mlmc_pimd_budget, mse_estimate,
    pimdsh_seed, run_nested_plans, run_plan, run_sub_estimator, EstimateReport, LevelSampler,
    Method, SamplerConfig, SeriesStats,
};
use crate::model::TestCase;
use crate::oracle::{
    converged_reference, pseudospectral_reference, quadrature_expectation_table,
    quadrature_full_average, QuadratureGrid, SpectralGrid,
};
use crate::polymer::{observable_at_beads, w_estimator, LevelEvaluator};

pub const ENV_PREFIX: &str = "MLMC_PIMD_";

/// Every setting a subcommand can read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub observable: String,
    pub beta: f64,
    pub mass: f64,
    pub beads: usize,
    pub gamma: f64,
    pub dt: f64,
    pub eta: f64,
    pub k0: usize,
    pub n_total: u64,
    pub n_burn: u64,
    pub replicates: u64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub level_sum: LevelEvaluator,
    /// MSE reference; the pseudo-spectral value when unset.
    pub reference: Option<f64>,
    pub spectral_points: usize,
    pub spectral_half_width: f64,
    pub spectral_tolerance: f64,
    pub quad_points: usize,
    pub quad_half_width: f64,
    pub quad_max_beads: usize,
    pub table1_levels: usize,
    pub table1_samples: u64,
    pub table2_totals: Vec<u64>,
    pub rm_total: u64,
    pub fig6_budgets: Vec<f64>,
    pub trace_samples: u64,
    pub trace_levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "coupled-wells".into(),
            observable: "mixed-trig".into(),
            beta: 1.0,
            mass: 1.0,
            beads: 16,
            gamma: 1.0,
            dt: 0.005,
            eta: 1.0,
            k0: 5,
            n_total: 1_200_000,
            n_burn: 100_000,
            replicates: 1,
            seed: 2024,
            output: None,
            level_sum: LevelEvaluator::Enumerate,
            reference: None,
            spectral_points: 512,
            spectral_half_width: 8.0,
            spectral_tolerance: 1e-6,
            quad_points: 81,
            quad_half_width: 4.0,
            quad_max_beads: 3,
            table1_levels: 3,
            table1_samples: 200_000,
            table2_totals: vec![200_000, 400_000, 600_000, 800_000, 1_000_000, 1_200_000],
            rm_total: 1_200_000,
            fig6_budgets: vec![1.0, 2.0, 4.0],
            trace_samples: 10_000,
            trace_levels: 2,
        }
    }
}

pub const KEYS: &[&str] = &[
    "model",
    "observable",
    "beta",
    "mass",
    "beads",
    "gamma",
    "dt",
    "eta",
    "k0",
    "n_total",
    "n_burn",
    "replicates",
    "seed",
    "output",
    "level_sum",
    "reference",
    "spectral_points",
    "spectral_half_width",
    "spectral_tolerance",
    "quad_points",
    "quad_half_width",
    "quad_max_beads",
    "table1_levels",
    "table1_samples",
    "table2_totals",
    "rm_total",
    "fig6_budgets",
    "trace_samples",
    "trace_levels",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = '{value}': expected {what}"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, v, "a finite number"))
}

/// Integers also accept exact scientific notation such as `1e5`.
fn parse_u64(key: &str, v: &str) -> Result<u64> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    match v.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
        _ => Err(bad(key, v, "a non-negative integer")),
    }
}

fn parse_list<T>(key: &str, v: &str, one: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| one(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, v, "a non-empty comma-separated list"));
    }
    Ok(items)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let usize_of = |k: &str, v: &str| parse_u64(k, v).map(|n| n as usize);
        match key {
            "model" => self.model = v.to_string(),
            "observable" => self.observable = v.to_string(),
            "beta" => self.beta = parse_f64(key, v)?,
            "mass" => self.mass = parse_f64(key, v)?,
            "beads" => self.beads = usize_of(key, v)?,
            "gamma" => self.gamma = parse_f64(key, v)?,
            "dt" => self.dt = parse_f64(key, v)?,
            "eta" => self.eta = parse_f64(key, v)?,
            "k0" => self.k0 = usize_of(key, v)?,
            "n_total" => self.n_total = parse_u64(key, v)?,
            "n_burn" => self.n_burn = parse_u64(key, v)?,
            "replicates" => self.replicates = parse_u64(key, v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            "output" => {
                self.output = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "level_sum" => self.level_sum = v.parse()?,
            "reference" => {
                self.reference = if v.is_empty() || v == "auto" {
                    None
                } else {
                    Some(parse_f64(key, v)?)
                }
            }
            "spectral_points" => self.spectral_points = usize_of(key, v)?,
            "spectral_half_width" => self.spectral_half_width = parse_f64(key, v)?,
            "spectral_tolerance" => self.spectral_tolerance = parse_f64(key, v)?,
            "quad_points" => self.quad_points = usize_of(key, v)?,
            "quad_half_width" => self.quad_half_width = parse_f64(key, v)?,
            "quad_max_beads" => self.quad_max_beads = usize_of(key, v)?,
            "table1_levels" => self.table1_levels = usize_of(key, v)?,
            "table1_samples" => self.table1_samples = parse_u64(key, v)?,
            "table2_totals" => self.table2_totals = parse_list(key, v, parse_u64)?,
            "rm_total" => self.rm_total = parse_u64(key, v)?,
            "fig6_budgets" => self.fig6_budgets = parse_list(key, v, parse_f64)?,
            "trace_samples" => self.trace_samples = parse_u64(key, v)?,
            "trace_levels" => self.trace_levels = usize_of(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key '{other}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "model" => self.model.clone(),
            "observable" => self.observable.clone(),
            "beta" => self.beta.to_string(),
            "mass" => self.mass.to_string(),
            "beads" => self.beads.to_string(),
            "gamma" => self.gamma.to_string(),
            "dt" => self.dt.to_string(),
            "eta" => self.eta.to_string(),
            "k0" => self.k0.to_string(),
            "n_total" => self.n_total.to_string(),
            "n_burn" => self.n_burn.to_string(),
            "replicates" => self.replicates.to_string(),
            "seed" => self.seed.to_string(),
            "output" => self
                .output
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "level_sum" => self.level_sum.as_str().to_string(),
            "reference" => self
                .reference
                .map(|r| r.to_string())
                .unwrap_or_else(|| "auto".into()),
            "spectral_points" => self.spectral_points.to_string(),
            "spectral_half_width" => self.spectral_half_width.to_string(),
            "spectral_tolerance" => self.spectral_tolerance.to_string(),
            "quad_points" => self.quad_points.to_string(),
            "quad_half_width" => self.quad_half_width.to_string(),
            "quad_max_beads" => self.quad_max_beads.to_string(),
            "table1_levels" => self.table1_levels.to_string(),
            "table1_samples" => self.table1_samples.to_string(),
            "table2_totals" => join(&self.table2_totals),
            "rm_total" => self.rm_total.to_string(),
            "fig6_budgets" => join(&self.fig6_budgets),
            "trace_samples" => self.trace_samples.to_string(),
            "trace_levels" => self.trace_levels.to_string(),
            _ => return None,
        })
    }

    /// Applies the lines of a config file. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{origin}:{}: expected 'key = value', got '{raw}'",
                    i + 1
                ))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", i + 1, strip(&e))))?;
        }
        Ok(())
    }

    /// Applies `MLMC_PIMD_<KEY>` variables; unknown suffixes are rejected.
    pub fn apply_env<'a>(
        &mut self,
        vars: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<()> {
        for (name, value) in vars {
            if let Some(suffix) = name.strip_prefix(ENV_PREFIX) {
                let key = suffix.to_ascii_lowercase();
                self.set(&key, value)
                    .map_err(|e| Error::Config(format!("environment {name}: {}", strip(&e))))?;
            }
        }
        Ok(())
    }

    /// The effective configuration as a replayable config file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).unwrap());
        }
        s
    }

    pub fn test_case(&self) -> Result<TestCase> {
        TestCase::named(&self.model, &self.observable, self.beta, self.mass)
    }

    pub fn langevin(&self) -> LangevinConfig {
        LangevinConfig {
            gamma: self.gamma,
            dt: self.dt,
            n_burn: self.n_burn,
            seed: self.seed,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            langevin: self.langevin(),
            evaluator: self.level_sum,
        }
    }

    pub fn hop(&self, seed: u64) -> HopConfig {
        HopConfig {
            eta: self.eta,
            base: self.langevin().with_seed(seed),
        }
    }

    pub fn spectral_grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.spectral_points, self.spectral_half_width)
    }

    pub fn quadrature_grid(&self) -> QuadratureGrid {
        QuadratureGrid {
            n_points: self.quad_points,
            half_width: self.quad_half_width,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.beads == 0 {
            return Err(Error::Config("beads must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.langevin().validate()?;
        Ok(())
    }
}

fn strip(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("cli: ").map(str::to_string).unwrap_or(s)
}

#[derive(Parser, Debug)]
#[command(
    name = "mlmc-pimd",
    version,
    about = "Ring-polymer estimators of two-state quantum thermal averages",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides one key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    beads: Option<String>,
    #[arg(long, global = true)]
    k0: Option<String>,
    #[arg(long = "n-total", global = true)]
    n_total: Option<String>,
    #[arg(long = "n-burn", global = true)]
    n_burn: Option<String>,
    #[arg(long, global = true)]
    replicates: Option<String>,
    #[arg(long = "level-sum", global = true, value_name = "enumerate|transfer")]
    level_sum: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Pseudo-spectral thermal average and its grid-refinement delta.
    Reference,
    /// Quadrature tables of the truncated average for a few beads.
    OracleQuad,
    /// Equal-allocation estimate.
    RmPimd,
    /// Variance-optimal multi-level estimate.
    MlmcPimd,
    /// Surface-hopping baseline estimate.
    PimdSh,
    /// Replicate variances of the level sub-estimators.
    BenchTable1,
    /// MSE and time of MLMC over several budgets against RM.
    BenchTable2,
    /// MSE of MLMC and PIMD-SH at matched wall-clock budgets.
    BenchFig6,
    /// Per-step traces of W_N along PIMD-SH and of A_k along the reference dynamics.
    TraceFig7,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Reference => "reference",
            Command::OracleQuad => "oracle-quad",
            Command::RmPimd => "rm-pimd",
            Command::MlmcPimd => "mlmc-pimd",
            Command::PimdSh => "pimd-sh",
            Command::BenchTable1 => "bench-table1",
            Command::BenchTable2 => "bench-table2",
            Command::BenchFig6 => "bench-fig6",
            Command::TraceFig7 => "trace-fig7",
        }
    }
}

/// A CSV table held as text, as written and as read back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("no column '{name}' in report")))
    }

    pub fn get(&self, row: usize, name: &str) -> Result<&str> {
        let c = self.column(name)?;
        self.rows
            .get(row)
            .and_then(|r| r.get(c))
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("row {row} has no column '{name}'")))
    }

    pub fn get_f64(&self, row: usize, name: &str) -> Result<f64> {
        let v = self.get(row, name)?;
        v.parse()
            .map_err(|_| Error::Config(format!("column '{name}' row {row}: '{v}' is not a number")))
    }

    pub fn get_u64(&self, row: usize, name: &str) -> Result<u64> {
        let v = self.get(row, name)?;
        v.parse().map_err(|_| {
            Error::Config(format!(
                "column '{name}' row {row}: '{v}' is not an integer"
            ))
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

/// Reads any CSV this tool wrote.
pub fn read_report(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(Table { headers, rows })
}

fn f(x: f64) -> String {
    x.to_string()
}

fn estimate_headers(k0: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "method",
        "beads",
        "k0",
        "n_total",
        "replicate",
        "master_seed",
        "estimate",
        "work",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 0..=k0 {
        for col in [
            "n", "mean_a", "mean_b", "var_a", "var_b", "lrv_a", "lrv_b", "seed_a", "seed_b",
        ] {
            h.push(format!("{col}_{k}"));
        }
    }
    h
}

fn estimate_row(r: &EstimateReport, replicate: u64) -> Vec<String> {
    let mut row = vec![
        r.method.as_str().to_string(),
        r.beads.to_string(),
        r.k0.to_string(),
        r.n_total.to_string(),
        replicate.to_string(),
        r.master_seed.to_string(),
        f(r.estimate),
        f(r.work),
    ];
    for l in &r.per_level {
        row.extend([
            l.count.to_string(),
            f(l.mean_a),
            f(l.mean_b),
            f(l.var_a),
            f(l.var_b),
            f(l.lrv_a),
            f(l.lrv_b),
            l.seed_a.to_string(),
            l.seed_b.to_string(),
        ]);
    }
    row
}

/// One RM or MLMC row of an estimate CSV, parsed back.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub method: Method,
    pub beads: usize,
    pub k0: usize,
    pub n_total: u64,
    pub replicate: u64,
    pub master_seed: u64,
    pub estimate: f64,
    pub counts: Vec<u64>,
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
}

impl EstimateRecord {
    pub fn from_table(t: &Table, row: usize) -> Result<Self> {
        let method = Method::parse(t.get(row, "method")?)?;
        let k0 = t.get_u64(row, "k0")? as usize;
        let mut counts = Vec::new();
        let mut mean_a = Vec::new();
        let mut mean_b = Vec::new();
        for k in 0..=k0 {
            counts.push(t.get_u64(row, &format!("n_{k}"))?);
            mean_a.push(t.get_f64(row, &format!("mean_a_{k}"))?);
            mean_b.push(t.get_f64(row, &format!("mean_b_{k}"))?);
        }
        Ok(Self {
            method,
            beads: t.get_u64(row, "beads")? as usize,
            k0,
            n_total: t.get_u64(row, "n_total")?,
            replicate: t.get_u64(row, "replicate")?,
            master_seed: t.get_u64(row, "master_seed")?,
            estimate: t.get_f64(row, "estimate")?,
            counts,
            mean_a,
            mean_b,
        })
    }
}

/// What a subcommand produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub summary: String,
    pub output: PathBuf,
    pub sidecar: PathBuf,
    pub seconds: f64,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".config.txt");
    PathBuf::from(s)
}

/// Builds the effective configuration from file, environment and flags.
fn resolve(cli: &Cli, env: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    cfg.apply_env(env.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        cfg.set(k.trim(), v)?;
    }
    let direct = [
        ("seed", &cli.seed),
        ("beads", &cli.beads),
        ("k0", &cli.k0),
        ("n_total", &cli.n_total),
        ("n_burn", &cli.n_burn),
        ("replicates", &cli.replicates),
        ("level_sum", &cli.level_sum),
    ];
    for (k, v) in direct {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses arguments, runs the subcommand, writes the CSV and sidecar and
/// prints a summary to `out`.
pub fn run<I, T>(args: I, env: &[(String, String)], out: &mut dyn Write) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = resolve(&cli, env)?;
    execute(cli.command, cfg, out)
}

fn execute(command: Command, mut cfg: RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let output = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", command.name())));
    cfg.output = Some(output.clone());
    let start = Instant::now();
    let (table, summary) = match command {
        Command::Reference => cmd_reference(&cfg)?,
        Command::OracleQuad => cmd_oracle_quad(&cfg)?,
        Command::RmPimd => cmd_estimate(&cfg, Method::Rm)?,
        Command::MlmcPimd => cmd_estimate(&cfg, Method::Mlmc)?,
        Command::PimdSh => cmd_pimdsh(&cfg)?,
        Command::BenchTable1 => cmd_table1(&cfg)?,
        Command::BenchTable2 => cmd_table2(&cfg)?,
        Command::BenchFig6 => cmd_fig6(&cfg)?,
        Command::TraceFig7 => cmd_trace(&cfg)?,
    };
    let seconds = start.elapsed().as_secs_f64();
    table.write_to(&output)?;
    let sidecar = sidecar_path(&output);
    let text = format!(
        "# mlmc-pimd {} {}\n# wall_clock_seconds = {seconds:.3}\n{}",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        cfg.to_text()
    );
    fs::write(&sidecar, text).map_err(|e| Error::Io {
        path: sidecar.display().to_string(),
        source: e,
    })?;
    let io = |e: std::io::Error| Error::Io {
        path: "<stdout>".into(),
        source: e,
    };
    write!(out, "{summary}").map_err(io)?;
    writeln!(
        out,
        "wrote {} ({} rows) and {} in {seconds:.2} s",
        output.display(),
        table.rows.len(),
        sidecar.display()
    )
    .map_err(io)?;
    Ok(Outcome {
        table,
        summary,
        output,
        sidecar,
        seconds,
    })
}

fn mse_reference(cfg: &RunConfig, case: &TestCase) -> Result<f64> {
    match cfg.reference {
        Some(r) => Ok(r),
        None => pseudospectral_reference(case, &cfg.spectral_grid()?),
    }
}

fn cmd_reference(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let grid = cfg.spectral_grid()?;
    let r = converged_reference(&case, &grid, cfg.spectral_tolerance)?;
    let fine = grid.refined();
    let mut t = Table::new(&[
        "n_points",
        "half_width",
        "value",
        "refined_n_points",
        "refined_half_width",
        "refined_value",
        "delta",
    ]);
    t.push(vec![
        grid.n_points.to_string(),
        f(grid.half_width),
        f(r.value),
        fine.n_points.to_string(),
        f(fine.half_width),
        f(r.refined),
        f(r.delta),
    ]);
    let s = format!(
        "reference = {:.8}\nconvergence delta = {:.3e}\n",
        r.value, r.delta
    );
    Ok((t, s))
}

fn cmd_oracle_quad(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let grid = cfg.quadrature_grid();
    let mut t = Table::new(&[
        "beads",
        "k0",
        "truncated",
        "full",
        "gap",
        "mean_a_k0",
        "mean_b_k0",
        "n_points",
        "half_width",
    ]);
    let mut s = String::new();
    for beads in 1..=cfg.quad_max_beads {
        let levels = quadrature_expectation_table(&case, beads, beads / 2, &grid)?;
        let full = quadrature_full_average(&case, beads, &grid)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (k0, (a, b)) in levels.iter().enumerate() {
            num += a;
            den += b;
            let v = num / den;
            t.push(vec![
                beads.to_string(),
                k0.to_string(),
                f(v),
                f(full),
                f((v - full).abs()),
                f(*a),
                f(*b),
                grid.n_points.to_string(),
                f(grid.half_width),
            ]);
            let _ = writeln!(s, "N = {beads}, k0 = {k0}: I = {v:.10} (full {full:.10})");
        }
    }
    Ok((t, s))
}

fn estimate_reports(cfg: &RunConfig, method: Method) -> Result<Vec<EstimateReport>> {
    let case = cfg.test_case()?;
    let plan = match method {
        Method::Rm => equal_plan(cfg.beads, cfg.k0, cfg.n_total)?,
        Method::Mlmc => allocation_plan(cfg.beads, cfg.k0, cfg.n_total)?,
        Method::PimdSh => unreachable!(),
    };
    let sampler = cfg.sampler();
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_plan(&case, method, &plan, &sampler, cfg.seed, r))
        .collect()
}

fn cmd_estimate(cfg: &RunConfig, method: Method) -> Result<(Table, String)> {
    let reports = estimate_reports(cfg, method)?;
    let headers = estimate_headers(cfg.k0);
    let mut t = Table {
        headers,
        rows: Vec::new(),
    };
    let mut s = String::new();
    for (r, rep) in reports.iter().enumerate() {
        t.push(estimate_row(rep, r as u64));
        let counts: Vec<String> = rep.per_level.iter().map(|l| l.count.to_string()).collect();
        let _ = writeln!(
            s,
            "{} replicate {r}: estimate = {:.8} counts = [{}] wall_clock = {:.3} s",
            method.as_str(),
            rep.estimate,
            counts.join(", "),
            rep.wall_clock
        );
    }
    if reports.len() > 1 {
        let xs: Vec<f64> = reports.iter().map(|r| r.estimate).collect();
        let (m, se) = mean_and_stderr(&xs);
        let _ = writeln!(s, "mean = {m:.8} ± {se:.2e} over {} replicates", xs.len());
    }
    Ok((t, s))
}

fn cmd_pimdsh(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let max_kinks = cfg.beads / 2;
    let runs: Vec<_> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let hop = cfg.hop(pimdsh_seed(cfg.seed, r));
            pimdsh_run(&case, cfg.beads, &hop, StopRule::Samples(cfg.n_total))
        })
        .collect::<Result<_>>()?;
    let mut headers: Vec<String> = [
        "method",
        "beads",
        "n_total",
        "replicate",
        "master_seed",
        "seed",
        "estimate",
        "variance",
        "hops",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    headers.extend((0..=max_kinks).map(|k| format!("visits_{}", 2 * k)));
    let mut t = Table {
        headers,
        rows: Vec::new(),
    };
    let mut s = String::new();
    for (r, run) in runs.iter().enumerate() {
        let mut row = vec![
            Method::PimdSh.as_str().to_string(),
            cfg.beads.to_string(),
            run.samples.to_string(),
            r.to_string(),
            cfg.seed.to_string(),
            pimdsh_seed(cfg.seed, r as u64).to_string(),
            f(run.mean),
            f(run.variance),
            run.hops.to_string(),
        ];
        row.extend(run.kink_histogram.iter().map(u64::to_string));
        t.push(row);
        let _ = writeln!(
            s,
            "PIMD-SH replicate {r}: estimate = {:.8} hops = {} wall_clock = {:.3} s",
            run.mean, run.hops, run.wall_clock
        );
    }
    Ok((t, s))
}

fn cmd_table1(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let sampler = cfg.sampler();
    let levels = cfg.table1_levels;
    let jobs: Vec<(usize, Channel, u64)> = (0..=levels)
        .flat_map(|k| {
            (0..cfg.replicates).flat_map(move |r| [(k, Channel::A, r), (k, Channel::B, r)])
        })
        .collect();
    let subs: Vec<_> = jobs
        .par_iter()
        .map(|&(k, ch, r)| {
            run_sub_estimator(
                &case,
                cfg.beads,
                k,
                cfg.table1_samples,
                ch,
                &sampler,
                derive_seed(cfg.seed, ch, k, r),
            )
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&[
        "k",
        "samples",
        "replicates",
        "mean_a",
        "mean_b",
        "var_a",
        "var_b",
        "batch_var_a",
        "batch_var_b",
        "summand_var_a",
        "summand_var_b",
        "ratio_a",
    ]);
    let mut s = String::new();
    let mut prev: Option<f64> = None;
    let n = cfg.table1_samples as f64;
    for k in 0..=levels {
        let pick = |ch: Channel| -> Vec<_> {
            subs.iter()
                .filter(|x| x.level == k && x.channel == ch)
                .map(|x| x.stats)
                .collect()
        };
        let (a, b) = (pick(Channel::A), pick(Channel::B));
        let means = |v: &[crate::estimators::SeriesStats]| -> Vec<f64> {
            v.iter().map(|x| x.mean).collect()
        };
        let avg = |v: &[crate::estimators::SeriesStats],
                   g: fn(&crate::estimators::SeriesStats) -> f64| {
            v.iter().map(g).sum::<f64>() / v.len() as f64
        };
        let sa = SeriesStats::of(&means(&a));
        let sb = SeriesStats::of(&means(&b));
        let (var_a, var_b) = if a.len() > 1 {
            (sa.variance, sb.variance)
        } else {
            (f64::NAN, f64::NAN)
        };
        let ratio = prev.map(|p| var_a / p).unwrap_or(f64::NAN);
        prev = Some(var_a);
        t.push(vec![
            k.to_string(),
            cfg.table1_samples.to_string(),
            cfg.replicates.to_string(),
            f(sa.mean),
            f(sb.mean),
            f(var_a),
            f(var_b),
            f(avg(&a, |x| x.long_run_variance) / n),
            f(avg(&b, |x| x.long_run_variance) / n),
            f(avg(&a, |x| x.variance)),
            f(avg(&b, |x| x.variance)),
            f(ratio),
        ]);
        let _ = writeln!(
            s,
            "k = {k}: Var(A_k estimate) = {var_a:.4e} (batch means {:.4e})",
            avg(&a, |x| x.long_run_variance) / n
        );
    }
    Ok((t, s))
}

/// Replicate outcomes of one benchmark row.
struct Row {
    method: Method,
    setting: String,
    estimates: Vec<f64>,
    seconds: Vec<f64>,
    samples: Vec<f64>,
}

fn bench_table(rows: &[Row], reference: f64, setting: &str) -> Result<(Table, String)> {
    let mut t = Table::new(&[
        "method",
        setting,
        "replicates",
        "mse",
        "mean",
        "stderr",
        "mean_seconds",
        "mean_samples",
        "reference",
    ]);
    let mut s = format!("reference = {reference:.8}\n");
    for r in rows {
        let mse = mse_estimate(&r.estimates, reference)?;
        let (m, se) = mean_and_stderr(&r.estimates);
        let secs = r.seconds.iter().sum::<f64>() / r.seconds.len() as f64;
        let samples = r.samples.iter().sum::<f64>() / r.samples.len() as f64;
        t.push(vec![
            r.method.as_str().to_string(),
            r.setting.clone(),
            r.estimates.len().to_string(),
            f(mse),
            f(m),
            f(se),
            f(secs),
            f(samples),
            f(reference),
        ]);
        let _ = writeln!(
            s,
            "{:<8} {setting} = {:<10} MSE = {mse:.4e} mean = {m:.6} time = {secs:.2} s",
            r.method.as_str(),
            r.setting
        );
    }
    Ok((t, s))
}

fn cmd_table2(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let reference = mse_reference(cfg, &case)?;
    let sampler = cfg.sampler();
    let mut totals = cfg.table2_totals.clone();
    totals.sort_unstable();
    totals.dedup();
    let plans: Vec<_> = totals
        .iter()
        .map(|&n| allocation_plan(cfg.beads, cfg.k0, n))
        .collect::<Result<_>>()?;
    let rm = equal_plan(cfg.beads, cfg.k0, cfg.rm_total)?;
    let per_rep: Vec<(Vec<EstimateReport>, EstimateReport)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let m = run_nested_plans(&case, Method::Mlmc, &plans, &sampler, cfg.seed, r)?;
            let e = run_plan(&case, Method::Rm, &rm, &sampler, cfg.seed, r)?;
            Ok((m, e))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<Row> = plans
        .iter()
        .enumerate()
        .map(|(i, p)| Row {
            method: Method::Mlmc,
            setting: p.n_total.to_string(),
            estimates: per_rep.iter().map(|r| r.0[i].estimate).collect(),
            seconds: per_rep.iter().map(|r| r.0[i].wall_clock).collect(),
            samples: vec![p.n_total as f64],
        })
        .collect();
    rows.push(Row {
        method: Method::Rm,
        setting: cfg.rm_total.to_string(),
        estimates: per_rep.iter().map(|r| r.1.estimate).collect(),
        seconds: per_rep.iter().map(|r| r.1.wall_clock).collect(),
        samples: vec![rm.counts.iter().sum::<u64>() as f64],
    });
    bench_table(&rows, reference, "n_total")
}

fn cmd_fig6(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let reference = mse_reference(cfg, &case)?;
    let sampler = cfg.sampler();
    let mut rows = Vec::new();
    // timed runs stay on this thread so budgets are not shared
    for &b in &cfg.fig6_budgets {
        let budget = Duration::from_secs_f64(b);
        let mut ml = Row {
            method: Method::Mlmc,
            setting: b.to_string(),
            estimates: vec![],
            seconds: vec![],
            samples: vec![],
        };
        let mut sh = Row {
            method: Method::PimdSh,
            setting: b.to_string(),
            estimates: vec![],
            seconds: vec![],
            samples: vec![],
        };
        for r in 0..cfg.replicates {
            let m = mlmc_pimd_budget(&case, cfg.beads, cfg.k0, budget, &sampler, cfg.seed, r)?;
            ml.estimates.push(m.estimate);
            ml.seconds.push(m.wall_clock);
            ml.samples.push(m.n_total as f64);
            let hop = cfg.hop(pimdsh_seed(cfg.seed, r));
            let p = pimdsh_run(&case, cfg.beads, &hop, StopRule::Budget(budget))?;
            sh.estimates.push(p.mean);
            sh.seconds.push(p.wall_clock);
            sh.samples.push(p.samples as f64);
        }
        rows.push(ml);
        rows.push(sh);
    }
    bench_table(&rows, reference, "budget_seconds")
}

fn cmd_trace(cfg: &RunConfig) -> Result<(Table, String)> {
    let case = cfg.test_case()?;
    let sampler = cfg.sampler();
    let mut sh = PimdSh::new(
        &case.model,
        cfg.beads,
        case.beta,
        &cfg.hop(pimdsh_seed(cfg.seed, 0)),
    )?;
    for _ in 0..cfg.n_burn {
        sh.step()?;
    }
    let mut levels: Vec<LevelSampler> = (0..=cfg.trace_levels)
        .map(|k| {
            let seed = derive_seed(cfg.seed, Channel::A, k, 0);
            LevelSampler::new(&case, cfg.beads, k, Channel::A, &sampler, seed)
        })
        .collect::<Result<_>>()?;
    let mut headers = vec!["step".to_string(), "w_pimdsh".into(), "kinks_pimdsh".into()];
    headers.extend((0..=cfg.trace_levels).map(|k| format!("a_{k}")));
    let mut t = Table {
        headers,
        rows: Vec::new(),
    };
    let mut values = Vec::with_capacity(cfg.beads);
    let mut max_w: f64 = 0.0;
    for step in 0..cfg.trace_samples {
        sh.step()?;
        let st = sh.state();
        observable_at_beads(&case.observable, &st.q, st.dim, &mut values)?;
        let w = w_estimator(&st.ell, sh.factors(), &values);
        max_w = max_w.max(w.abs());
        let mut row = vec![(step + 1).to_string(), f(w), st.ell.kinks().to_string()];
        for l in levels.iter_mut() {
            row.push(f(l.next_value()?));
        }
        t.push(row);
    }
    let s = format!(
        "traced {} steps after {} burn-in steps; max |W_N| along PIMD-SH = {max_w:.4}\n",
        cfg.trace_samples, cfg.n_burn
    );
    Ok((t, s))
}

/// Entry point of the binary: collects `MLMC_PIMD_*` variables and maps
/// errors to a non-zero exit status.
pub fn main_entry() -> std::process::ExitCode {
    let env: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    let args: Vec<OsString> = std::env::args_os().collect();
    if let Err(e) = Cli::try_parse_from(&args) {
        // help and version go to stdout with status 0
        let _ = e.print();
        return std::process::ExitCode::from(if e.use_stderr() { 2 } else { 0 });
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args, &env, &mut lock) {
        Ok(_) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
