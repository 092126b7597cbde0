//! Experiment orchestration: configuration, Monte Carlo sweeps and
//! machine-readable results.
//!
//! A sweep runs every `(scheme, sweep value, seed)` cell of the grid on an
//! independent, seed-paired channel trajectory and reduces the post-burn-in
//! slot log to per-run metrics. Reported rates come from the deployable
//! operating point — integer quantization bits and the exact quantizer
//! model with a re-derived MMSE receiver — while the relaxed-bit rates are
//! kept alongside for rounding-loss measurements.
//!
//! The CSV artifact contains only deterministic columns, so identical
//! configs and seeds reproduce it byte for byte; wall-clock timing travels
//! in the JSON-lines variant.

use crate::model::UtilitySpec;
use crate::scenario::{effective_delay_slots, full_delay_slots, Scenario};
use crate::schemes::{by_name, SchemeId};
use crate::ssca::{RunLog, ScheduleSpec};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Scenario parameters in user-facing units (dBm, km/h, ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_rrh: usize,
    pub n_users: usize,
    pub antennas_per_rrh: usize,
    pub rf_chains_per_rrh: usize,
    pub paths_per_link: usize,
    pub cell_radius_m: f64,
    pub angle_spread_deg: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub tx_power_dbm: f64,
    pub carrier_hz: f64,
    pub user_speed_kmh: f64,
    pub slot_duration_ms: f64,
    pub slots_per_frame: usize,
    pub n_frames: usize,
    pub csi_delay_ms: f64,
    pub fronthaul_capacity_bps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_rrh: 4,
            n_users: 8,
            antennas_per_rrh: 64,
            rf_chains_per_rrh: 16,
            paths_per_link: 6,
            cell_radius_m: 500.0,
            angle_spread_deg: 10.0,
            bandwidth_hz: 1.0e6,
            noise_psd_dbm_per_hz: -169.0,
            tx_power_dbm: 23.0,
            carrier_hz: 2.14e9,
            user_speed_kmh: 3.0,
            slot_duration_ms: 1.0,
            slots_per_frame: 10,
            n_frames: 1000,
            csi_delay_ms: 4.0,
            fronthaul_capacity_bps: 64.0e6,
        }
    }
}

impl ScenarioConfig {
    /// Resolves to SI units and linear scales. A fronthaul capacity whose
    /// bit budget `C/(2 B_W)` is not an integer is floored to the nearest
    /// feasible capacity with a logged warning.
    pub fn to_scenario(&self) -> Result<Scenario> {
        if self.rf_chains_per_rrh > self.antennas_per_rrh {
            return Err(Error::Config(format!(
                "rf_chains_per_rrh ({}) exceeds antennas_per_rrh ({})",
                self.rf_chains_per_rrh, self.antennas_per_rrh
            )));
        }
        let noise_power_w =
            10f64.powf((self.noise_psd_dbm_per_hz - 30.0) / 10.0) * self.bandwidth_hz;
        let tx_power_w = 10f64.powf((self.tx_power_dbm - 30.0) / 10.0);
        let doppler_hz =
            self.user_speed_kmh / 3.6 * self.carrier_hz / crate::scenario::SPEED_OF_LIGHT;
        let slot_s = self.slot_duration_ms * 1e-3;
        let delay_s = self.csi_delay_ms * 1e-3;
        let mut capacity = self.fronthaul_capacity_bps;
        let budget = capacity / (2.0 * self.bandwidth_hz);
        if (budget - budget.round()).abs() > 1e-9 {
            let floored = budget.floor();
            capacity = floored * 2.0 * self.bandwidth_hz;
            log::warn!(
                "fronthaul bit budget {budget} is not an integer; flooring capacity to {capacity} bps ({floored} bits)"
            );
        }
        Ok(Scenario {
            n_rrh: self.n_rrh,
            n_users: self.n_users,
            n_antennas: self.antennas_per_rrh,
            n_rf: self.rf_chains_per_rrh,
            n_paths: self.paths_per_link,
            cell_radius_m: self.cell_radius_m,
            angle_spread_rad: self.angle_spread_deg.to_radians(),
            noise_power_w,
            tx_power_w,
            doppler_hz,
            slot_duration_s: slot_s,
            slots_per_frame: self.slots_per_frame,
            n_frames: self.n_frames,
            full_csi_delay_slots: full_delay_slots(delay_s, slot_s),
            eff_csi_delay_slots: effective_delay_slots(
                self.rf_chains_per_rrh,
                self.antennas_per_rrh,
                delay_s,
                slot_s,
            ),
            fronthaul_capacity_bps: capacity,
            bandwidth_hz: self.bandwidth_hz,
        })
    }
}

/// What the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    FronthaulCapacity,
    AntennasPerRrh,
    CsiDelayMs,
    None,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::FronthaulCapacity => "fronthaul_capacity",
            SweepParameter::AntennasPerRrh => "antennas_per_rrh",
            SweepParameter::CsiDelayMs => "csi_delay_ms",
            SweepParameter::None => "none",
        }
    }

    /// Applies a sweep value to a copy of the scenario configuration.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut cfg = base.clone();
        match self {
            SweepParameter::FronthaulCapacity => cfg.fronthaul_capacity_bps = value,
            SweepParameter::AntennasPerRrh => cfg.antennas_per_rrh = value.round() as usize,
            SweepParameter::CsiDelayMs => cfg.csi_delay_ms = value,
            SweepParameter::None => {}
        }
        cfg
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fronthaul_capacity" => Ok(SweepParameter::FronthaulCapacity),
            "antennas_per_rrh" => Ok(SweepParameter::AntennasPerRrh),
            "csi_delay_ms" => Ok(SweepParameter::CsiDelayMs),
            "none" => Ok(SweepParameter::None),
            other => Err(Error::Config(format!(
                "unknown sweep parameter '{other}'; expected fronthaul_capacity, antennas_per_rrh, csi_delay_ms or none"
            ))),
        }
    }
}

/// Output file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::Config(format!(
                "unknown output format '{other}'; expected csv or jsonl"
            ))),
        }
    }
}

/// Sweep grid, seeds and output destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub schemes: Vec<String>,
    pub sweep_parameter: SweepParameter,
    pub sweep_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_path: String,
    pub format: OutputFormat,
    pub burn_in_frames: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            schemes: SchemeId::ALL.iter().map(|s| s.name().to_string()).collect(),
            sweep_parameter: SweepParameter::None,
            sweep_values: Vec::new(),
            seeds: vec![1, 2, 3],
            output_path: "results.csv".into(),
            format: OutputFormat::Csv,
            burn_in_frames: 10,
        }
    }
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub utility: UtilitySpec,
    pub schedules: ScheduleSpec,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            utility: UtilitySpec::ProportionalFair { epsilon: 1e-3 },
            schedules: ScheduleSpec::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// Desk-scale preset (canonical CI configuration).
pub const DESK_PRESET: &str = include_str!("../../../configs/desk.toml");
/// Full-scale preset (hours of runtime; not CI-gated).
pub const PAPER_PRESET: &str = include_str!("../../../configs/paper.toml");

impl ExperimentConfig {
    /// Parses a TOML document; unknown keys are rejected with their name.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Self::from_toml_str(DESK_PRESET),
            "paper" => Self::from_toml_str(PAPER_PRESET),
            other => Err(Error::Config(format!(
                "unknown preset '{other}'; expected desk or paper"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must be non-empty".into()));
        }
        if self.experiment.schemes.is_empty() {
            return Err(Error::Config("experiment.schemes must be non-empty".into()));
        }
        for s in &self.experiment.schemes {
            s.parse::<SchemeId>()?;
        }
        if self.experiment.sweep_parameter != SweepParameter::None
            && self.experiment.sweep_values.is_empty()
        {
            return Err(Error::Config(
                "sweep_values must be non-empty when a sweep parameter is set".into(),
            ));
        }
        if let UtilitySpec::ProportionalFair { epsilon } = self.utility {
            if epsilon <= 0.0 {
                return Err(Error::Config("utility.epsilon must be positive".into()));
            }
        }
        self.scenario.to_scenario().map(|_| ())
    }

    /// Epsilon used in the reported proportional-fairness metric.
    fn metric_epsilon(&self) -> f64 {
        match self.utility {
            UtilitySpec::ProportionalFair { epsilon } => epsilon,
            UtilitySpec::SumRate => 1e-3,
        }
    }
}

/// One row of the result table: the metrics of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub sweep_parameter: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    /// Post-burn-in average sum rate, bit/s/Hz, integer bits + exact quantizer.
    pub sum_rate_bits: f64,
    /// Worst per-user post-burn-in average rate, bit/s/Hz.
    pub worst_rate_bits: f64,
    /// Proportional-fairness utility of the per-user average rates (nats).
    pub pfs_utility: f64,
    /// Same sum rate under the solver's relaxed real-valued bits.
    pub sum_rate_relaxed_bits: f64,
    pub pfs_utility_relaxed: f64,
    pub frames: usize,
    pub burn_in_frames: usize,
    /// Fingerprint of the consumed channel trajectory (seed-pairing check).
    pub channel_hash: u64,
    /// Wall-clock runtime; excluded from the CSV artifact.
    pub wall_time_s: f64,
}

/// A failed grid cell; the sweep records it and continues.
#[derive(Debug, Clone)]
pub struct RowFailure {
    pub scheme: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub message: String,
}

/// All rows in deterministic order plus any per-row failures.
#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RowFailure>,
}

const NATS_TO_BITS: f64 = std::f64::consts::LOG2_E;

/// Reduces a run log to per-run metrics over the post-burn-in slots.
pub fn reduce_run(
    log: &RunLog,
    n_users: usize,
    burn_in_frames: usize,
    slots_per_frame: usize,
    pfs_epsilon: f64,
) -> (f64, f64, f64, f64, f64) {
    let skip = burn_in_frames * slots_per_frame;
    let used: Vec<_> = log.slots.iter().skip(skip).collect();
    let count = used.len().max(1) as f64;
    let mut avg_exact = vec![0.0; n_users];
    let mut avg_relaxed = vec![0.0; n_users];
    for slot in &used {
        for k in 0..n_users {
            avg_exact[k] += slot.rates_exact[k] / count;
            avg_relaxed[k] += slot.rates_relaxed[k] / count;
        }
    }
    let sum_exact: f64 = avg_exact.iter().sum::<f64>() * NATS_TO_BITS;
    let worst_exact = avg_exact
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        * NATS_TO_BITS;
    let pfs_exact: f64 = avg_exact.iter().map(|r| (r + pfs_epsilon).ln()).sum();
    let sum_relaxed: f64 = avg_relaxed.iter().sum::<f64>() * NATS_TO_BITS;
    let pfs_relaxed: f64 = avg_relaxed.iter().map(|r| (r + pfs_epsilon).ln()).sum();
    (sum_exact, worst_exact, pfs_exact, sum_relaxed, pfs_relaxed)
}

fn run_cell(
    config: &ExperimentConfig,
    scheme_name: &str,
    value: Option<f64>,
    seed: u64,
) -> Result<ResultRow> {
    let scenario_cfg = match value {
        Some(v) => config.experiment.sweep_parameter.apply(&config.scenario, v),
        None => config.scenario.clone(),
    };
    let scenario = scenario_cfg.to_scenario()?;
    let scheme = by_name(scheme_name)?;
    let start = std::time::Instant::now();
    let log = scheme.run(&scenario, &config.utility, &config.schedules, seed)?;
    let wall = start.elapsed().as_secs_f64();
    let (sum_exact, worst_exact, pfs_exact, sum_relaxed, pfs_relaxed) = reduce_run(
        &log,
        scenario.n_users,
        config.experiment.burn_in_frames,
        scenario.slots_per_frame,
        config.metric_epsilon(),
    );
    Ok(ResultRow {
        scheme: scheme_name.to_string(),
        sweep_parameter: config.experiment.sweep_parameter.name().to_string(),
        sweep_value: value,
        seed,
        sum_rate_bits: sum_exact,
        worst_rate_bits: worst_exact,
        pfs_utility: pfs_exact,
        sum_rate_relaxed_bits: sum_relaxed,
        pfs_utility_relaxed: pfs_relaxed,
        frames: scenario.n_frames,
        burn_in_frames: config.experiment.burn_in_frames,
        channel_hash: log.channel_hash,
        wall_time_s: wall,
    })
}

/// Runs the full sweep grid, in parallel across cells.
///
/// The parallelism degree honors the `THCF_PARALLELISM` environment
/// variable (0 or unset = one thread per core). Row order in the output is
/// deterministic regardless of scheduling.
pub fn run_sweep(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let values: Vec<Option<f64>> = if config.experiment.sweep_parameter == SweepParameter::None {
        vec![None]
    } else {
        config.experiment.sweep_values.iter().map(|&v| Some(v)).collect()
    };
    let mut grid = Vec::new();
    for scheme in &config.experiment.schemes {
        for &value in &values {
            for &seed in &config.experiment.seeds {
                grid.push((scheme.clone(), value, seed));
            }
        }
    }
    let threads = std::env::var("THCF_PARALLELISM")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("failed to build thread pool: {e}")))?;
    let outcomes: Vec<(String, Option<f64>, u64, Result<ResultRow>)> = pool.install(|| {
        grid.par_iter()
            .map(|(scheme, value, seed)| {
                (
                    scheme.clone(),
                    *value,
                    *seed,
                    run_cell(config, scheme, *value, *seed),
                )
            })
            .collect()
    });
    let mut table = ResultTable::default();
    for (scheme, value, seed, outcome) in outcomes {
        match outcome {
            Ok(row) => table.rows.push(row),
            Err(e) => table.failures.push(RowFailure {
                scheme,
                sweep_value: value,
                seed,
                message: e.to_string(),
            }),
        }
    }
    table.rows.sort_by(|a, b| {
        a.scheme
            .cmp(&b.scheme)
            .then(
                a.sweep_value
                    .unwrap_or(f64::NEG_INFINITY)
                    .partial_cmp(&b.sweep_value.unwrap_or(f64::NEG_INFINITY))
                    .unwrap(),
            )
            .then(a.seed.cmp(&b.seed))
    });
    Ok(table)
}

/// Formats a float with 10 significant digits (integers print plainly).
pub fn fmt_float(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{:.9e}", x)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

const CSV_HEADER: [&str; 9] = [
    "scheme",
    "sweep_parameter",
    "sweep_value",
    "seed",
    "avg_sum_rate_bps_hz",
    "worst_user_rate_bps_hz",
    "pfs_utility",
    "frames",
    "burn_in_frames",
];

/// Serializes the table to the requested format.
///
/// CSV carries the deterministic columns only (RFC-4180, header row);
/// JSON lines additionally carry the relaxed-bit metrics, the channel
/// fingerprint and the wall time, and round-trip back to an equal table.
pub fn emit_results(table: &ResultTable, path: &Path, format: OutputFormat) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::Config("result table is empty".into()));
    }
    let mut out: Vec<u8> = Vec::new();
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(CSV_HEADER)
                .map_err(|e| Error::Config(e.to_string()))?;
            for r in &table.rows {
                w.write_record([
                    r.scheme.as_str(),
                    r.sweep_parameter.as_str(),
                    &fmt_opt(r.sweep_value),
                    &r.seed.to_string(),
                    &fmt_float(r.sum_rate_bits),
                    &fmt_float(r.worst_rate_bits),
                    &fmt_float(r.pfs_utility),
                    &r.frames.to_string(),
                    &r.burn_in_frames.to_string(),
                ])
                .map_err(|e| Error::Config(e.to_string()))?;
            }
            w.flush()?;
            drop(w);
        }
        OutputFormat::Jsonl => {
            for r in &table.rows {
                let line =
                    serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
                out.extend_from_slice(line.as_bytes());
                out.push(b'\n');
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Parses a JSON-lines file back into a result table.
pub fn load_results_jsonl(path: &Path) -> Result<ResultTable> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(line).map_err(|e| Error::Config(e.to_string()))?);
    }
    Ok(ResultTable {
        rows,
        failures: Vec::new(),
    })
}
