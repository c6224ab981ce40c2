//! Experiment presets, sweeps and result files.
//!
//! The built-in scenarios are 100 servers and 10 dispatchers split into a
//! strong and a weak group. Strong servers serve `1/p` jobs per slot on
//! average, weak ones `1/(k p)` with `k = 2` (moderate) or `k = 10` (high),
//! and `p = (n_strong + n_weak / k) / n` so the total capacity is exactly
//! `n` jobs per slot. A load `x` means `lambda = x * capacity`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Monitors, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::policies::PolicyKind;
use crate::processes::{ArrivalKind, ArrivalSpec, ServiceSpec};

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESET_NAMES: [&str; 6] = [
    "moderate_10_90",
    "moderate_50_50",
    "moderate_90_10",
    "high_10_90",
    "high_50_50",
    "high_90_10",
];

pub const CSV_COLUMNS: [&str; 16] = [
    "scenario",
    "policy",
    "load",
    "seed",
    "slots",
    "mean_total_queue",
    "mean_sojourn",
    "p50",
    "p99",
    "p999",
    "messages_per_slot",
    "messages_per_job",
    "incast_p100",
    "gap_mean",
    "gap_max",
    "stability_verdict",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Strong serves twice as fast as weak.
    Moderate,
    /// Strong serves ten times as fast as weak.
    High,
}

impl Heterogeneity {
    pub fn ratio(self) -> f64 {
        match self {
            Heterogeneity::Moderate => 2.0,
            Heterogeneity::High => 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n_strong: usize,
    pub n_weak: usize,
    pub heterogeneity: Heterogeneity,
    #[serde(default = "default_dispatchers")]
    pub dispatchers: usize,
    pub policies: Vec<PolicyKind>,
    pub load_grid: Vec<f64>,
    pub slots: u64,
    /// Defaults to 10% of `slots`.
    #[serde(default)]
    pub warmup: Option<u64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub monitors: Monitors,
}

fn default_dispatchers() -> usize {
    10
}

impl Scenario {
    pub fn servers(&self) -> usize {
        self.n_strong + self.n_weak
    }

    /// The `p` of the service parameterization.
    pub fn strong_parameter(&self) -> f64 {
        let k = self.heterogeneity.ratio();
        (self.n_strong as f64 + self.n_weak as f64 / k) / self.servers() as f64
    }

    /// Strong servers first, then weak.
    pub fn services(&self) -> Vec<ServiceSpec> {
        let p = self.strong_parameter();
        let k = self.heterogeneity.ratio();
        let strong = ServiceSpec::geometric_min0(1.0 / p);
        let weak = ServiceSpec::geometric_min0(1.0 / (k * p));
        std::iter::repeat_n(strong, self.n_strong)
            .chain(std::iter::repeat_n(weak, self.n_weak))
            .collect()
    }

    pub fn capacity(&self) -> f64 {
        self.services().iter().map(|s| s.rate).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers() == 0 {
            return Err(Error::config("scenario has no servers"));
        }
        if self.dispatchers == 0 {
            return Err(Error::config("scenario has no dispatchers"));
        }
        if let Some(&bad) = self.load_grid.iter().find(|&&x| !(0.0..1.0).contains(&x)) {
            return Err(Error::config(format!("load {bad} outside [0, 1)")));
        }
        for policy in &self.policies {
            policy.validate(self.servers(), self.dispatchers)?;
        }
        if self.warmup.is_some_and(|w| w > self.slots) {
            return Err(Error::config("warm-up exceeds the horizon"));
        }
        Ok(())
    }

    pub fn config(&self, policy: PolicyKind, load: f64, seed: u64) -> SimConfig {
        let lambda = load * self.capacity();
        SimConfig {
            services: self.services(),
            arrivals: ArrivalSpec::uniform(lambda, self.dispatchers, ArrivalKind::Poisson),
            policy,
            slots: self.slots,
            warmup: self.warmup.unwrap_or(self.slots / 10),
            seed,
            monitors: self.monitors,
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let toml_err = |source| Error::Toml {
            path: origin.to_path_buf(),
            source,
        };
        let mut table: toml::Table = text.parse().map_err(toml_err)?;
        // `base = "<preset>"` pulls in a preset whose fields the file
        // overrides key by key.
        if let Some(base) = table.remove("base") {
            let name = base
                .as_str()
                .ok_or_else(|| Error::config("`base` must be a preset name"))?;
            let preset = toml::Table::try_from(preset(name)?)
                .map_err(|e| Error::config(format!("serializing preset: {e}")))?;
            for (key, value) in preset {
                table.entry(key).or_insert(value);
            }
        }
        let scenario: Scenario = toml::Value::Table(table).try_into().map_err(toml_err)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// A preset name, or a path to a TOML scenario file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Self::from_toml_str(&text, path);
        }
        preset(name_or_path)
    }
}

/// The six policies compared in every preset: JSQ, JSQ(2), JIQ,
/// LSQ-Sample(2), LSQ-Update(2m/n) and LSQ-Smart(f*(2m/n), WAF).
pub fn default_policies(servers: usize, dispatchers: usize) -> Vec<PolicyKind> {
    let p = (2.0 * dispatchers as f64 / servers as f64).min(1.0);
    vec![
        PolicyKind::Jsq,
        PolicyKind::JsqD { d: 2 },
        PolicyKind::Jiq,
        PolicyKind::LsqSample { d: 2 },
        PolicyKind::LsqUpdate { p },
        PolicyKind::LsqSmart { p },
    ]
}

pub fn preset(name: &str) -> Result<Scenario> {
    let (het, mix) = name
        .split_once('_')
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    let heterogeneity = match het {
        "moderate" => Heterogeneity::Moderate,
        "high" => Heterogeneity::High,
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    let (n_strong, n_weak) = match mix {
        "10_90" => (10, 90),
        "50_50" => (50, 50),
        "90_10" => (90, 10),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    let dispatchers = 10;
    Ok(Scenario {
        name: name.to_string(),
        n_strong,
        n_weak,
        heterogeneity,
        dispatchers,
        policies: default_policies(n_strong + n_weak, dispatchers),
        load_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
        slots: 1_000_000,
        warmup: None,
        seeds: vec![1, 2, 3],
        monitors: Monitors::default(),
    })
}

pub fn presets() -> Vec<Scenario> {
    PRESET_NAMES
        .iter()
        .map(|name| preset(name).expect("built-in preset"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub policy: PolicyKind,
    pub load: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

impl SweepRow {
    fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let r = &self.report;
        vec![
            self.scenario.clone(),
            self.policy.to_string(),
            self.load.to_string(),
            self.seed.to_string(),
            r.slots.to_string(),
            opt(r.mean_total_queue.map(|v| v.to_string())),
            opt(r.mean_sojourn.map(|v| v.to_string())),
            opt(r.sojourn_percentiles.map(|p| p.p50.to_string())),
            opt(r.sojourn_percentiles.map(|p| p.p99.to_string())),
            opt(r.sojourn_percentiles.map(|p| p.p999.to_string())),
            r.messages.per_slot.to_string(),
            opt(r.messages.per_job.map(|v| v.to_string())),
            r.incast_max.to_string(),
            opt(r.gap.as_ref().map(|g| g.mean.to_string())),
            opt(r.gap.as_ref().map(|g| g.max.to_string())),
            r.stability.verdict.to_string(),
        ]
    }
}

/// One row per (policy, load, seed), in scenario order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// A single run as written to disk: enough to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub scenario: Option<String>,
    pub load: Option<f64>,
    pub config: SimConfig,
    pub report: MetricsReport,
}

impl RunRecord {
    pub fn new(scenario: Option<String>, load: Option<f64>, config: SimConfig, report: MetricsReport) -> Self {
        RunRecord {
            schema_version: SCHEMA_VERSION,
            scenario,
            load,
            config,
            report,
        }
    }
}

fn run_file_name(policy: PolicyKind, load: f64, seed: u64) -> String {
    let policy: String = policy
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{policy}_load{load}_seed{seed}.json")
}

/// Runs every (policy, load, seed) combination on `parallelism` threads.
///
/// With `out_dir`, each run's [`RunRecord`] is written to
/// `out_dir/runs/` as soon as it finishes. The returned rows are in
/// scenario order whatever the parallelism.
pub fn run_sweep(scenario: &Scenario, parallelism: usize, out_dir: Option<&Path>) -> Result<SweepResult> {
    scenario.validate()?;
    let runs_dir = out_dir.map(|d| d.join("runs"));
    if let Some(dir) = &runs_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let jobs: Vec<(PolicyKind, f64, u64)> = scenario
        .policies
        .iter()
        .flat_map(|&policy| {
            scenario
                .load_grid
                .iter()
                .flat_map(move |&load| scenario.seeds.iter().map(move |&seed| (policy, load, seed)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(policy, load, seed)| -> Result<SweepRow> {
                let config = scenario.config(policy, load, seed);
                let report = engine::run(config.clone())?;
                info!(
                    "{} {} load={} seed={} -> {}",
                    scenario.name, policy, load, seed, report.stability.verdict
                );
                if let Some(dir) = &runs_dir {
                    let record = RunRecord::new(Some(scenario.name.clone()), Some(load), config, report.clone());
                    write_json(&record, &dir.join(run_file_name(policy, load, seed)))?;
                }
                Ok(SweepRow {
                    scenario: scenario.name.clone(),
                    policy,
                    load,
                    seed,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepResult { rows })
}

/// Renders the flat CSV: a `# schema_version=N` comment line, the header,
/// then one line per row.
pub fn csv_string(result: &SweepResult) -> String {
    let mut buf = format!("# schema_version={SCHEMA_VERSION}\n").into_bytes();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        writer.write_record(CSV_COLUMNS).expect("in-memory write");
        for row in &result.rows {
            writer.write_record(row.csv_record()).expect("in-memory write");
        }
        writer.flush().expect("in-memory write");
    }
    String::from_utf8(buf).expect("fields are UTF-8")
}

pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    fs::write(path, csv_string(result)).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// `<dir>/<scenario>.csv`.
pub fn sweep_csv_path(dir: &Path, scenario: &Scenario) -> PathBuf {
    dir.join(format!("{}.csv", scenario.name))
}
