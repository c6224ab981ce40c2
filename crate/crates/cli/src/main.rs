//! `lsq`: run single simulations, sweeps, and oracles from the shell.
//!
//! Log verbosity is read from `LSQ_LOG` (default `warn`).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use lsq_core::harness::{self, write_csv, write_json, SweepRow};
use lsq_core::validation::{self, ORACLES};
use lsq_core::{engine, Error, PolicyKind, Result, Scenario, SweepResult};

#[derive(Parser)]
#[command(name = "lsq", version, about = "Multi-dispatcher load-balancing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (policy, load, seed) configuration.
    Simulate {
        /// Preset name or path to a TOML scenario file.
        #[arg(long)]
        scenario: String,
        /// Policy id, e.g. `jsq`, `jsq-d:2`, `lsq-smart:0.2`.
        #[arg(long)]
        policy: PolicyKind,
        /// Normalized load in [0, 1).
        #[arg(long)]
        load: f64,
        /// Horizon; defaults to the scenario's.
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Defaults to 10% of the horizon.
        #[arg(long)]
        warmup: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full JSON report instead of a CSV row.
        #[arg(long)]
        json: bool,
    },
    /// Run every (policy, load, seed) combination of a scenario.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// Directory for `<scenario>.csv`, `<scenario>.json` and `runs/`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// List the built-in scenarios.
    Presets,
    /// Run a named oracle, `all`, or list them when no name is given.
    Oracle { name: Option<String> },
}

fn simulate(
    scenario: &str,
    policy: PolicyKind,
    load: f64,
    slots: Option<u64>,
    seed: u64,
    warmup: Option<u64>,
    out: Option<PathBuf>,
    json: bool,
) -> Result<()> {
    if !(0.0..1.0).contains(&load) {
        return Err(Error::Usage(format!("--load must be in [0, 1), got {load}")));
    }
    let mut scenario = Scenario::load(scenario)?;
    if let Some(slots) = slots {
        scenario.slots = slots;
        scenario.warmup = None;
    }
    if warmup.is_some() {
        scenario.warmup = warmup;
    }
    let config = scenario.config(policy, load, seed);
    config.validate()?;
    info!("{} {policy} load={load} seed={seed} slots={}", scenario.name, config.slots);
    let report = engine::run(config)?;
    let result = SweepResult {
        rows: vec![SweepRow {
            scenario: scenario.name.clone(),
            policy,
            load,
            seed,
            report: report.clone(),
        }],
    };
    match (out, json) {
        (Some(path), true) => write_json(&report, &path),
        (Some(path), false) => write_csv(&result, &path),
        (None, true) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{text}");
            Ok(())
        }
        (None, false) => {
            print!("{}", harness::csv_string(&result));
            Ok(())
        }
    }
}

fn sweep(scenario: &str, out: PathBuf, parallel: usize) -> Result<()> {
    let scenario = Scenario::load(scenario)?;
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let result = harness::run_sweep(&scenario, parallel, Some(&out))?;
    write_csv(&result, &harness::sweep_csv_path(&out, &scenario))?;
    write_json(&result, &out.join(format!("{}.json", scenario.name)))?;
    println!("{} rows written to {}", result.rows.len(), out.display());
    Ok(())
}

fn presets() {
    println!("{:<16} {:>6} {:>6} {:>6} {:>10} {:>9}", "name", "strong", "weak", "ratio", "p", "capacity");
    for s in harness::presets() {
        println!(
            "{:<16} {:>6} {:>6} {:>6} {:>10.4} {:>9.1}",
            s.name,
            s.n_strong,
            s.n_weak,
            format!("1:{}", s.heterogeneity.ratio()),
            s.strong_parameter(),
            s.capacity()
        );
    }
}

fn oracle(name: Option<String>) -> Result<bool> {
    let Some(name) = name else {
        for case in ORACLES {
            println!("{:<32} {}", case.name, case.description);
        }
        return Ok(true);
    };
    let cases: Vec<_> = if name == "all" {
        ORACLES.iter().collect()
    } else {
        vec![validation::oracle(&name)?]
    };
    let mut all_passed = true;
    for case in cases {
        let o = case.run()?;
        all_passed &= o.passed;
        println!(
            "{} {}: expected {} observed {} (tolerance {}) {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.expected,
            o.observed,
            o.tolerance,
            o.detail
        );
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LSQ_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            scenario,
            policy,
            load,
            slots,
            seed,
            warmup,
            out,
            json,
        } => simulate(&scenario, policy, load, slots, seed, warmup, out, json).map(|()| true),
        Command::Sweep { scenario, out, parallel } => sweep(&scenario, out, parallel).map(|()| true),
        Command::Presets => {
            presets();
            Ok(true)
        }
        Command::Oracle { name } => oracle(name),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
