//! The five experiments. Each returns plain records; rendering and file
//! output live in [`crate::run`].

use pimcaps::arith::{calibrate_exp_recovery, ExpApproxParams, PeConfig, DEFAULT_CALIBRATION_RANGE};
use pimcaps::capsnet::{capsule_norms, NetworkConfig};
use pimcaps::hmc::HmcConfig;
use pimcaps::par::{self, Execution};
use pimcaps::planner::{frequency_sweep, select_dimension, CostParams, CostReport, DistributionDim};
use pimcaps::sim::{end_to_end, host_roofline_seconds, run_rp, EndToEnd, Scenario, SimMetrics, SimOptions, TraceRow};
use serde::{Deserialize, Serialize};

use crate::config::BenchmarkConfig;
use crate::error::CliError;

pub fn hmc_at(cfg: &BenchmarkConfig, freq: Option<f64>) -> HmcConfig {
    let hmc = cfg.hmc();
    match freq {
        Some(f) => hmc.with_frequency(f),
        None => hmc,
    }
}

pub fn planner_report(cfg: &BenchmarkConfig, hmc: &HmcConfig) -> Result<CostReport, CliError> {
    Ok(select_dimension(
        &cfg.network,
        &CostParams::from_hardware(&cfg.network, hmc),
    )?)
}

pub fn host_seconds(cfg: &BenchmarkConfig, opts: &SimOptions) -> f64 {
    cfg.host_latency
        .unwrap_or_else(|| host_roofline_seconds(&cfg.network, &opts.gpu))
}

fn simulate_metrics(
    cfg: &BenchmarkConfig,
    dim: DistributionDim,
    scenario: Scenario,
    hmc: &HmcConfig,
    opts: &SimOptions,
) -> Result<SimMetrics, CliError> {
    run_rp(&cfg.network, dim, scenario, hmc, &PeConfig::default(), opts)
        .map(|r| r.metrics)
        .map_err(|e| CliError::sim(&format!("{} {scenario}", cfg.name), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub config: String,
    pub vault_freq_hz: f64,
    pub dim: DistributionDim,
    pub e: f64,
    pub m: f64,
    pub s: f64,
    pub selected: bool,
}

impl PlanRow {
    pub const CSV_HEADER: &'static str = "config,vault_freq_hz,dim,e,m,s,selected";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.config, self.vault_freq_hz, self.dim, self.e, self.m, self.s, self.selected
        )
    }
}

/// One row per dimension and frequency; the config's clock when `freqs` is
/// empty.
pub fn plan(cfg: &BenchmarkConfig, freqs: &[f64]) -> Result<Vec<PlanRow>, CliError> {
    let base = CostParams::from_hardware(&cfg.network, &cfg.hmc());
    let freqs = if freqs.is_empty() {
        vec![cfg.vault_freq_hz]
    } else {
        freqs.to_vec()
    };
    let mut rows = Vec::new();
    for (f, report) in frequency_sweep(&cfg.network, &base, &freqs)? {
        rows.extend(report.costs.iter().map(|c| PlanRow {
            config: cfg.name.clone(),
            vault_freq_hz: f,
            dim: c.dim,
            e: c.e,
            m: c.m,
            s: c.s,
            selected: c.dim == report.selected,
        }));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateRequest {
    pub scenario: Scenario,
    pub dim: Option<DistributionDim>,
    pub seed: u64,
    pub freq: Option<f64>,
    pub numerics: bool,
    pub trace: bool,
    pub exp_params: ExpApproxParams,
}

impl Default for SimulateRequest {
    fn default() -> Self {
        SimulateRequest {
            scenario: Scenario::PimCapsNet,
            dim: None,
            seed: 0,
            freq: None,
            numerics: false,
            trace: false,
            exp_params: ExpApproxParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config: String,
    pub network: NetworkConfig,
    pub scenario: String,
    /// Distribution simulated; `None` on the host.
    pub dim: Option<DistributionDim>,
    pub planner_dim: DistributionDim,
    pub seed: u64,
    pub host_seconds: f64,
    pub metrics: SimMetrics,
    pub end_to_end: EndToEnd,
    /// `‖v‖` per (sample, high-level capsule), when numerics were run.
    pub capsule_norms: Option<Vec<f32>>,
}

pub fn simulate(cfg: &BenchmarkConfig, req: &SimulateRequest) -> Result<(SimulateReport, Vec<TraceRow>), CliError> {
    let hmc = hmc_at(cfg, req.freq);
    let planner_dim = planner_report(cfg, &hmc)?.selected;
    let dim = req.dim.unwrap_or(planner_dim);
    let opts = SimOptions {
        seed: req.seed,
        exp_params: req.exp_params,
        numerics: req.numerics,
        trace: req.trace,
        ..SimOptions::default()
    };
    let context = format!("{} {}", cfg.name, req.scenario);
    let run = run_rp(&cfg.network, dim, req.scenario, &hmc, &PeConfig::default(), &opts)
        .map_err(|e| CliError::sim(&context, e))?;
    let host = host_seconds(cfg, &opts);
    let e2e = end_to_end(req.scenario, &cfg.network, &run.metrics, host, cfg.n_batches, &hmc)
        .map_err(|e| CliError::sim(&context, e))?;
    let report = SimulateReport {
        config: cfg.name.clone(),
        network: cfg.network,
        scenario: req.scenario.name().to_string(),
        dim: run.metrics.dim,
        planner_dim,
        seed: req.seed,
        host_seconds: host,
        metrics: run.metrics,
        end_to_end: e2e,
        capsule_norms: run.v.as_ref().map(capsule_norms),
    };
    Ok((report, run.trace))
}

pub fn calibrate(samples: usize, range: Option<(f32, f32)>, seed: u64) -> Result<ExpApproxParams, CliError> {
    calibrate_exp_recovery(samples, range.unwrap_or(DEFAULT_CALIBRATION_RANGE), seed)
        .map_err(|e| CliError::Config(format!("calibrate: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub config: String,
    pub scenario: String,
    /// Distribution used; `None` on the host.
    pub dim: Option<DistributionDim>,
    pub vault_freq_hz: f64,
    pub rp_cycles: u64,
    pub rp_seconds: f64,
    /// Baseline routing time over this scenario's routing time.
    pub rp_speedup: f64,
    pub overall_seconds: f64,
    pub overall_speedup: f64,
    pub energy_rel: f64,
    /// `energy_rel` over the baseline's.
    pub energy_norm: f64,
    pub intervault_bytes: u64,
}

/// Runs every (config, scenario) pair at the planner's dimension, normalized
/// against the host baseline of the same config.
pub fn compare(
    cfgs: &[BenchmarkConfig],
    scenarios: &[Scenario],
    freq: Option<f64>,
) -> Result<Vec<CompareRow>, CliError> {
    let per_config = par::map_slice(Execution::default(), cfgs, |cfg| compare_one(cfg, scenarios, freq));
    Ok(per_config
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect())
}

fn compare_one(cfg: &BenchmarkConfig, scenarios: &[Scenario], freq: Option<f64>) -> Result<Vec<CompareRow>, CliError> {
    let hmc = hmc_at(cfg, freq);
    let opts = SimOptions::default();
    let dim = planner_report(cfg, &hmc)?.selected;
    let host = host_seconds(cfg, &opts);
    let run = |sc: Scenario| -> Result<(SimMetrics, EndToEnd), CliError> {
        let m = simulate_metrics(cfg, dim, sc, &hmc, &opts)?;
        let e = end_to_end(sc, &cfg.network, &m, host, cfg.n_batches, &hmc)
            .map_err(|e| CliError::sim(&format!("{} {sc}", cfg.name), e))?;
        Ok((m, e))
    };
    let (base, base_e2e) = run(Scenario::BaselineModel)?;
    let mut rows = Vec::with_capacity(scenarios.len());
    for &sc in scenarios {
        let (m, e2e) = if sc == Scenario::BaselineModel {
            (base.clone(), base_e2e.clone())
        } else {
            run(sc)?
        };
        rows.push(CompareRow {
            config: cfg.name.clone(),
            scenario: sc.name().to_string(),
            dim: m.dim,
            vault_freq_hz: hmc.vault_freq_hz,
            rp_cycles: m.total_cycles,
            rp_seconds: m.seconds,
            rp_speedup: base.seconds / m.seconds,
            overall_seconds: e2e.seconds,
            overall_speedup: base_e2e.seconds / e2e.seconds,
            energy_rel: m.energy_rel,
            energy_norm: m.energy_rel / base.energy_rel,
            intervault_bytes: m.intervault_bytes,
        });
    }
    Ok(rows)
}

/// Rows are configs, columns are scenarios, cells are `value(row)`.
pub fn compare_table(
    rows: &[CompareRow],
    scenarios: &[Scenario],
    value: fn(&CompareRow) -> f64,
) -> (String, Vec<String>) {
    let header = std::iter::once("config")
        .chain(scenarios.iter().map(|s| s.name()))
        .collect::<Vec<_>>()
        .join(",");
    let mut configs: Vec<&str> = Vec::new();
    for r in rows {
        if !configs.contains(&r.config.as_str()) {
            configs.push(&r.config);
        }
    }
    let lines = configs
        .into_iter()
        .map(|c| {
            let cells = scenarios.iter().map(|s| {
                rows.iter()
                    .find(|r| r.config == c && r.scenario == s.name())
                    .map(|r| value(r).to_string())
                    .unwrap_or_default()
            });
            std::iter::once(c.to_string())
                .chain(cells)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    (header, lines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub config: String,
    pub scenario: String,
    pub vault_freq_hz: f64,
    pub dim: DistributionDim,
    pub total_cycles: u64,
    pub seconds: f64,
    /// Baseline routing time over this cell's routing time.
    pub speedup: f64,
    /// The planner's choice at this frequency.
    pub planner_dim: DistributionDim,
    /// Fastest simulated dimension at this frequency.
    pub sim_best: bool,
}

impl SweepCell {
    pub const CSV_HEADER: &'static str =
        "config,scenario,vault_freq_hz,dim,total_cycles,seconds,speedup,planner_dim,planner_pick,sim_best";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.config,
            self.scenario,
            self.vault_freq_hz,
            self.dim,
            self.total_cycles,
            self.seconds,
            self.speedup,
            self.planner_dim,
            self.dim == self.planner_dim,
            self.sim_best
        )
    }
}

/// Simulated speedup of every (frequency, dimension) cell, plus the planner's
/// pick per frequency.
pub fn sweep(cfg: &BenchmarkConfig, freqs: &[f64], scenario: Scenario) -> Result<Vec<SweepCell>, CliError> {
    if scenario == Scenario::BaselineModel {
        return Err(CliError::Config("sweep needs an in-memory scenario".into()));
    }
    let base = CostParams::from_hardware(&cfg.network, &cfg.hmc());
    let picks = frequency_sweep(&cfg.network, &base, freqs)?;
    let grid: Vec<(f64, DistributionDim)> = freqs
        .iter()
        .flat_map(|&f| DistributionDim::ALL.into_iter().map(move |d| (f, d)))
        .collect();
    let opts = SimOptions::default();
    let results = par::map_slice(Execution::default(), &grid, |&(f, dim)| {
        let hmc = hmc_at(cfg, Some(f));
        let base = simulate_metrics(cfg, dim, Scenario::BaselineModel, &hmc, &opts)?;
        let m = simulate_metrics(cfg, dim, scenario, &hmc, &opts)?;
        Ok::<_, CliError>((base.seconds, m))
    });
    let mut cells = Vec::with_capacity(grid.len());
    for (((f, dim), result), pick) in grid
        .iter()
        .zip(results)
        .zip(picks.iter().flat_map(|(_, r)| std::iter::repeat_n(r.selected, 3)))
    {
        let (base_seconds, m) = result?;
        cells.push(SweepCell {
            config: cfg.name.clone(),
            scenario: scenario.name().to_string(),
            vault_freq_hz: *f,
            dim: *dim,
            total_cycles: m.total_cycles,
            seconds: m.seconds,
            speedup: base_seconds / m.seconds,
            planner_dim: pick,
            sim_best: false,
        });
    }
    for chunk in cells.chunks_mut(DistributionDim::ALL.len()) {
        let best = (0..chunk.len())
            .min_by_key(|&i| chunk[i].total_cycles)
            .expect("three cells");
        chunk[best].sim_best = true;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small() -> BenchmarkConfig {
        parse_config(
            "name = small\nbatch_size = 4\nlow_caps = 64\nhigh_caps = 8\nn_batches = 4\n",
            "small",
        )
        .unwrap()
    }

    #[test]
    fn plan_marks_one_row_per_frequency() {
        let rows = plan(&small(), &[312.5e6, 937.5e6]).unwrap();
        assert_eq!(rows.len(), 6);
        for chunk in rows.chunks(3) {
            assert_eq!(chunk.iter().filter(|r| r.selected).count(), 1);
        }
    }

    #[test]
    fn plan_csv_round_trips() {
        for row in plan(&small(), &[]).unwrap() {
            let line = row.csv_row();
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[3].parse::<f64>().unwrap(), row.e);
            assert_eq!(cells[4].parse::<f64>().unwrap(), row.m);
            assert_eq!(cells[5].parse::<f64>().unwrap(), row.s);
        }
    }

    #[test]
    fn compare_normalizes_to_the_baseline() {
        let rows = compare(&[small()], &Scenario::ALL, None).unwrap();
        assert_eq!(rows.len(), Scenario::ALL.len());
        let base = &rows[0];
        assert_eq!(base.scenario, "baseline");
        assert_eq!(
            (base.rp_speedup, base.overall_speedup, base.energy_norm),
            (1.0, 1.0, 1.0)
        );
        let (header, lines) = compare_table(&rows, &Scenario::ALL, |r| r.rp_speedup);
        assert_eq!(header.split(',').count(), 1 + Scenario::ALL.len());
        assert_eq!(lines.len(), 1);
    }

    #[test]
    fn sweep_has_one_best_cell_per_frequency() {
        let cells = sweep(&small(), &[312.5e6, 625e6, 937.5e6], Scenario::PimCapsNet).unwrap();
        assert_eq!(cells.len(), 9);
        for chunk in cells.chunks(3) {
            assert_eq!(chunk.iter().filter(|c| c.sim_best).count(), 1);
            assert!(chunk.iter().all(|c| c.planner_dim == chunk[0].planner_dim));
        }
        assert!(sweep(&small(), &[312.5e6], Scenario::BaselineModel).is_err());
    }

    #[test]
    fn simulate_defaults_to_the_planner_dimension() {
        let (report, trace) = simulate(&small(), &SimulateRequest::default()).unwrap();
        assert_eq!(report.dim, Some(report.planner_dim));
        assert!(trace.is_empty());
        let req = SimulateRequest {
            dim: Some(DistributionDim::H),
            trace: true,
            ..SimulateRequest::default()
        };
        let (report, trace) = simulate(&small(), &req).unwrap();
        assert_eq!(report.dim, Some(DistributionDim::H));
        assert!(!trace.is_empty());
    }
}
