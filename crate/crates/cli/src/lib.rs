//! Command-line experiments over the `pimcaps` simulator.
//!
//! Verbs: `plan`, `simulate`, `calibrate`, `compare`, `sweep`. Every report
//! is written atomically into the output directory; record layouts are
//! described by the JSON files under `schemas/`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pimcaps::arith::{ExpApproxParams, DEFAULT_CALIBRATION_SAMPLES};
use pimcaps::planner::{DistributionDim, DEFAULT_SWEEP_HZ};
use pimcaps::sim::{Scenario, TraceRow};

use commands::{CompareRow, PlanRow, SimulateRequest, SweepCell};
use config::{bundled, load_config, parse_frequency, BenchmarkConfig};
pub use error::CliError;
use output::{resolve_out_dir, write_atomic, write_csv, write_json};

#[derive(Debug, Parser)]
#[command(
    name = "pimcaps",
    version,
    about = "Capsule routing on a hybrid memory cube: planner, simulator and reports"
)]
pub struct Cli {
    /// Output directory [default: the config's out_dir, then $PIMCAPS_OUT_DIR, then ./pimcaps-out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score the three distribution dimensions with the cost model
    Plan(PlanArgs),
    /// Simulate one routing layer under one scenario
    Simulate(SimulateArgs),
    /// Fit the exponential's accuracy-recovery factor
    Calibrate(CalibrateArgs),
    /// Speedup and energy of each scenario against the host baseline
    Compare(CompareArgs),
    /// Simulated speedup per (frequency, dimension) cell
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Config file or bundled name (caps-mn1 .. caps-sv3)
    #[arg(long)]
    pub config: String,
    /// Vault clock, e.g. 625MHz; repeat or comma-separate for several
    #[arg(long, value_delimiter = ',')]
    pub freq: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long, default_value = "pim-capsnet")]
    pub scenario: String,
    /// Distribution dimension (B, L or H) [default: the planner's choice]
    #[arg(long)]
    pub dim: Option<String>,
    /// Seed of the random routing instance used with --numerics
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub freq: Option<String>,
    /// Also run the routing arithmetic and report capsule norms
    #[arg(long)]
    pub numerics: bool,
    /// Exponential constants written by `calibrate`
    #[arg(long, value_name = "FILE")]
    pub exp_params: Option<PathBuf>,
    /// Also write the per-step schedule as CSV
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Configs to compare [default: all bundled]
    #[arg(long, value_delimiter = ',')]
    pub config: Vec<String>,
    /// Scenarios, as table columns [default: the first config's list]
    #[arg(long, value_delimiter = ',')]
    pub scenario: Vec<String>,
    #[arg(long)]
    pub freq: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Configs to sweep [default: all bundled]
    #[arg(long, value_delimiter = ',')]
    pub config: Vec<String>,
    /// Vault clocks [default: 312.5MHz,625MHz,937.5MHz]
    #[arg(long, value_delimiter = ',')]
    pub freq: Vec<String>,
    #[arg(long, default_value = "pim-capsnet")]
    pub scenario: String,
}

fn parse_freqs(raw: &[String]) -> Result<Vec<f64>, CliError> {
    raw.iter()
        .map(|f| parse_frequency(f).map_err(|e| CliError::Config(format!("--freq: {e}"))))
        .collect()
}

fn parse_scenario(raw: &str) -> Result<Scenario, CliError> {
    raw.parse()
        .map_err(|e: pimcaps::sim::SimError| CliError::Config(e.to_string()))
}

fn load_many(raw: &[String]) -> Result<Vec<BenchmarkConfig>, CliError> {
    if raw.is_empty() {
        return Ok(bundled());
    }
    let cfgs = raw.iter().map(|c| load_config(c)).collect::<Result<Vec<_>, _>>()?;
    for (i, c) in cfgs.iter().enumerate() {
        if cfgs[..i].iter().any(|o| o.name == c.name) {
            return Err(CliError::Config(format!("config name '{}' given twice", c.name)));
        }
    }
    Ok(cfgs)
}

/// Runs one verb and returns the files written.
pub fn run(cli: &Cli, env_out: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    let out_dir = |cfg: Option<&BenchmarkConfig>| {
        resolve_out_dir(cli.out.as_deref(), cfg.and_then(|c| c.out_dir.as_deref()), env_out)
    };
    match &cli.command {
        Command::Plan(a) => {
            let cfg = load_config(&a.config)?;
            let rows = commands::plan(&cfg, &parse_freqs(&a.freq)?)?;
            let path = out_dir(Some(&cfg)).join(format!("{}.plan.csv", cfg.name));
            write_csv(
                &path,
                PlanRow::CSV_HEADER,
                &rows.iter().map(PlanRow::csv_row).collect::<Vec<_>>(),
            )?;
            Ok(vec![path])
        }
        Command::Simulate(a) => {
            let cfg = load_config(&a.config)?;
            let exp_params = match &a.exp_params {
                None => ExpApproxParams::default(),
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                    ExpApproxParams::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                }
            };
            let req = SimulateRequest {
                scenario: parse_scenario(&a.scenario)?,
                dim: a.dim.as_deref().map(str::parse::<DistributionDim>).transpose()?,
                seed: a.seed,
                freq: a
                    .freq
                    .as_deref()
                    .map(parse_frequency)
                    .transpose()
                    .map_err(CliError::Config)?,
                numerics: a.numerics,
                trace: a.trace,
                exp_params,
            };
            let (report, trace) = commands::simulate(&cfg, &req)?;
            let dir = out_dir(Some(&cfg));
            let stem = format!("{}.{}", cfg.name, req.scenario);
            let json = dir.join(format!("{stem}.json"));
            write_json(&json, &report)?;
            let mut written = vec![json];
            if a.trace {
                let path = dir.join(format!("{stem}.trace.csv"));
                write_csv(
                    &path,
                    TraceRow::CSV_HEADER,
                    &trace.iter().map(TraceRow::csv_row).collect::<Vec<_>>(),
                )?;
                written.push(path);
            }
            Ok(written)
        }
        Command::Calibrate(a) => {
            let params = commands::calibrate(a.samples, None, a.seed)?;
            let path = out_dir(None).join("exp-params.json");
            write_atomic(&path, format!("{}\n", params.to_json()).as_bytes())?;
            Ok(vec![path])
        }
        Command::Compare(a) => {
            let cfgs = load_many(&a.config)?;
            let scenarios = if a.scenario.is_empty() {
                cfgs[0].scenarios.clone()
            } else {
                a.scenario
                    .iter()
                    .map(|s| parse_scenario(s))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let freq = a
                .freq
                .as_deref()
                .map(parse_frequency)
                .transpose()
                .map_err(CliError::Config)?;
            let rows = commands::compare(&cfgs, &scenarios, freq)?;
            let dir = out_dir(single(&cfgs));
            let mut written = Vec::new();
            let tables: [(&str, Column); 3] = [
                ("compare.speedup.csv", |r| r.rp_speedup),
                ("compare.overall.csv", |r| r.overall_speedup),
                ("compare.energy.csv", |r| r.energy_norm),
            ];
            for (name, value) in tables {
                let (header, lines) = commands::compare_table(&rows, &scenarios, value);
                let path = dir.join(name);
                write_csv(&path, &header, &lines)?;
                written.push(path);
            }
            let json = dir.join("compare.json");
            write_json(&json, &rows)?;
            written.push(json);
            Ok(written)
        }
        Command::Sweep(a) => {
            let cfgs = load_many(&a.config)?;
            let freqs = if a.freq.is_empty() {
                DEFAULT_SWEEP_HZ.to_vec()
            } else {
                parse_freqs(&a.freq)?
            };
            let scenario = parse_scenario(&a.scenario)?;
            let mut lines = Vec::new();
            for cfg in &cfgs {
                lines.extend(commands::sweep(cfg, &freqs, scenario)?.iter().map(SweepCell::csv_row));
            }
            let path = out_dir(single(&cfgs)).join("sweep.csv");
            write_csv(&path, SweepCell::CSV_HEADER, &lines)?;
            Ok(vec![path])
        }
    }
}

type Column = fn(&CompareRow) -> f64;

fn single(cfgs: &[BenchmarkConfig]) -> Option<&BenchmarkConfig> {
    match cfgs {
        [one] => Some(one),
        _ => None,
    }
}

/// Directory holding the report schemas.
pub fn schema_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/schemas"))
}
