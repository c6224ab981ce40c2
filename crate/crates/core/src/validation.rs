//! Independent oracles and statistical checks.
//!
//! The oracles here re-derive quantities from the model definition rather
//! than from engine internals: the single-queue oracle is a straight loop
//! over `Q(t+1) = max(Q(t) + a(t) - s(t), 0)` that draws from `rand_distr`
//! directly, and message accounting is recounted from slot traces.

use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::engine::{self, Monitors, SimConfig, Simulation};
use crate::error::{Error, Result};
use crate::harness;
use crate::policies::{PolicyKind, RoutingDecision};
use crate::processes::{ArrivalKind, ArrivalSpec, ServiceKind, ServiceSpec};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    HandTrace,
    ExhaustiveAccounting,
    Statistical,
    IndependentReimplementation,
}

/// Which random streams an oracle draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleStreams {
    /// The engine's arrival and server-0 service streams: the oracle must
    /// reproduce the engine's trajectory exactly.
    Engine,
    /// Streams the engine never uses: agreement is statistical.
    Independent,
}

fn draw_service(spec: &ServiceSpec, rng: &mut SimRng) -> u64 {
    match spec.kind {
        ServiceKind::Deterministic => spec.rate as u64,
        ServiceKind::GeometricMin1 if spec.rate == 1.0 => 1,
        ServiceKind::GeometricMin1 => 1 + Geometric::new(1.0 / spec.rate).unwrap().sample(rng),
        ServiceKind::GeometricMin0 => Geometric::new(1.0 / (1.0 + spec.rate)).unwrap().sample(rng),
    }
}

fn draw_arrivals(lambda: f64, kind: ArrivalKind, rng: &mut SimRng) -> u64 {
    match kind {
        ArrivalKind::Deterministic => lambda as u64,
        ArrivalKind::Poisson if lambda == 0.0 => 0,
        ArrivalKind::Poisson => Poisson::new(lambda).unwrap().sample(rng) as u64,
    }
}

/// Mean of `Q(t)` over `warmup <= t < slots` for one queue fed by one
/// dispatcher.
pub fn single_queue_oracle(
    lambda: f64,
    arrivals: ArrivalKind,
    service: ServiceSpec,
    slots: u64,
    warmup: u64,
    seed: u64,
    streams: OracleStreams,
) -> f64 {
    let (mut arrival_rng, mut service_rng) = match streams {
        OracleStreams::Engine => (
            stream_rng(seed, Stream::Arrivals),
            stream_rng(seed, Stream::Service(0)),
        ),
        OracleStreams::Independent => (
            stream_rng(seed, Stream::Oracle(0)),
            stream_rng(seed, Stream::Oracle(1)),
        ),
    };
    let mut q: u64 = 0;
    let mut sum: u128 = 0;
    for t in 0..slots {
        if t >= warmup {
            sum += q as u128;
        }
        let a = draw_arrivals(lambda, arrivals, &mut arrival_rng);
        let s = draw_service(&service, &mut service_rng);
        q = (q + a).saturating_sub(s);
    }
    let measured = slots - warmup;
    if measured == 0 {
        0.0
    } else {
        sum as f64 / measured as f64
    }
}

/// The engine run the single-queue oracle is compared against.
pub fn single_queue_config(
    lambda: f64,
    arrivals: ArrivalKind,
    service: ServiceSpec,
    slots: u64,
    warmup: u64,
    seed: u64,
) -> SimConfig {
    SimConfig {
        services: vec![service],
        arrivals: ArrivalSpec::uniform(lambda, 1, arrivals),
        policy: PolicyKind::Jsq,
        slots,
        warmup,
        seed,
        monitors: Monitors::default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub server: usize,
    pub expected: f64,
    pub estimate: f64,
    pub standard_error: f64,
}

impl DriftCheck {
    pub fn z(&self) -> f64 {
        if self.standard_error == 0.0 {
            if self.estimate == self.expected { 0.0 } else { f64::INFINITY }
        } else {
            (self.estimate - self.expected) / self.standard_error
        }
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.z().abs() <= sigmas
    }
}

/// Weighted-random routing: per-server mean of `s_i(t) - a_i(t)` against
/// `eps * mu_i / sum(mu)` with `eps = sum(mu) - lambda`.
pub fn wr_drift_test(
    services: &[ServiceSpec],
    lambda: f64,
    dispatchers: usize,
    slots: u64,
    seed: u64,
) -> Result<Vec<DriftCheck>> {
    let total: f64 = services.iter().map(|s| s.rate).sum();
    let eps = total - lambda;
    let config = SimConfig {
        services: services.to_vec(),
        arrivals: ArrivalSpec::uniform(lambda, dispatchers, ArrivalKind::Poisson),
        policy: PolicyKind::WeightedRandom,
        slots,
        warmup: 0,
        seed,
        monitors: Monitors {
            drift: true,
            ..Monitors::default()
        },
    };
    let report = engine::run(config)?;
    let estimates = report
        .drift
        .ok_or_else(|| Error::Usage("drift monitor produced no estimates".into()))?;
    Ok(estimates
        .iter()
        .zip(services)
        .enumerate()
        .map(|(i, (e, s))| DriftCheck {
            server: i,
            expected: eps * s.rate / total,
            estimate: e.mean,
            standard_error: e.standard_error,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub identical: bool,
    pub compared: usize,
    /// Index of the first differing decision.
    pub first_divergence: Option<usize>,
}

fn recorded_decisions(mut config: SimConfig) -> Result<Vec<(u64, RoutingDecision)>> {
    config.monitors.record_decisions = true;
    Ok(engine::run_detailed(config)?.decisions)
}

/// Runs JSQ and `candidate` on the same seed and compares the full
/// routing decision sequences.
pub fn jsq_equivalence_test(
    services: &[ServiceSpec],
    arrivals: &ArrivalSpec,
    slots: u64,
    seed: u64,
    candidate: PolicyKind,
) -> Result<EquivalenceReport> {
    let base = SimConfig::new(services.to_vec(), arrivals.clone(), PolicyKind::Jsq, slots, seed);
    let jsq = recorded_decisions(base.clone())?;
    let other = recorded_decisions(SimConfig {
        policy: candidate,
        ..base
    })?;
    let first_divergence = jsq
        .iter()
        .zip(&other)
        .position(|(a, b)| a != b)
        .or_else(|| (jsq.len() != other.len()).then(|| jsq.len().min(other.len())));
    Ok(EquivalenceReport {
        identical: first_divergence.is_none(),
        compared: jsq.len().min(other.len()),
        first_divergence,
    })
}

/// Ten servers in three speed classes behind three dispatchers at 80%
/// load.
pub fn mixed_equivalence_setup() -> (Vec<ServiceSpec>, ArrivalSpec) {
    let services: Vec<ServiceSpec> = (0..10)
        .map(|i| match i % 3 {
            0 => ServiceSpec::geometric_min1(4.0),
            1 => ServiceSpec::geometric_min1(2.0),
            _ => ServiceSpec::geometric_min0(0.5),
        })
        .collect();
    let total: f64 = services.iter().map(|s| s.rate).sum();
    (services, ArrivalSpec::uniform(0.8 * total, 3, ArrivalKind::Poisson))
}

/// Recounts charged messages from slot traces: `charge(decision)` for every
/// routed batch plus every delivered update. Returns (recounted, reported).
pub fn recount_messages(config: SimConfig, charge: impl Fn(&RoutingDecision) -> u64) -> Result<(u64, u64)> {
    let mut sim = Simulation::new(config)?;
    let mut recounted = 0u64;
    let mut reported = 0u64;
    while sim.slot() < sim.config().slots {
        let trace = sim.step();
        recounted += trace.decisions.iter().map(&charge).sum::<u64>() + trace.messages.len() as u64;
        reported += trace.message_count;
    }
    Ok((recounted, reported))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub name: String,
    pub kind: OracleKind,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

/// A named, standalone oracle check.
#[derive(Debug, Clone, Copy)]
pub struct OracleCase {
    pub name: &'static str,
    pub description: &'static str,
    pub kind: OracleKind,
    run: fn() -> Result<(f64, f64, f64, String)>,
}

impl OracleCase {
    pub fn run(&self) -> Result<OracleOutcome> {
        let (expected, observed, tolerance, detail) = (self.run)()?;
        Ok(OracleOutcome {
            name: self.name.to_string(),
            kind: self.kind,
            expected,
            observed,
            tolerance,
            passed: (observed - expected).abs() <= tolerance,
            detail,
        })
    }
}

fn engine_mean_queue(config: SimConfig) -> Result<f64> {
    Ok(engine::run(config)?.mean_total_queue.unwrap_or(0.0))
}

fn oracle_single_queue_zero() -> Result<(f64, f64, f64, String)> {
    let service = ServiceSpec::geometric_min1(2.0);
    let oracle = single_queue_oracle(0.0, ArrivalKind::Poisson, service, 10_000, 0, 1, OracleStreams::Independent);
    let engine = engine_mean_queue(single_queue_config(0.0, ArrivalKind::Poisson, service, 10_000, 0, 1))?;
    Ok((0.0, engine.max(oracle), 0.0, format!("oracle {oracle}, engine {engine}")))
}

fn oracle_single_queue_deterministic() -> Result<(f64, f64, f64, String)> {
    let service = ServiceSpec::deterministic(1);
    let oracle = single_queue_oracle(1.0, ArrivalKind::Deterministic, service, 10_000, 0, 1, OracleStreams::Independent);
    let engine = engine_mean_queue(single_queue_config(1.0, ArrivalKind::Deterministic, service, 10_000, 0, 1))?;
    Ok((0.0, engine.max(oracle), 0.0, format!("oracle {oracle}, engine {engine}")))
}

fn oracle_single_queue_trajectory() -> Result<(f64, f64, f64, String)> {
    let service = ServiceSpec::geometric_min1(2.0);
    let (slots, warmup) = (100_000, 1_000);
    let oracle = single_queue_oracle(0.5, ArrivalKind::Poisson, service, slots, warmup, 11, OracleStreams::Engine);
    let engine = engine_mean_queue(single_queue_config(0.5, ArrivalKind::Poisson, service, slots, warmup, 11))?;
    Ok((oracle, engine, 0.0, "shared streams, exact agreement".into()))
}

fn oracle_single_queue_statistical() -> Result<(f64, f64, f64, String)> {
    let service = ServiceSpec::geometric_min1(2.0);
    let (slots, warmup) = (1_000_000, 10_000);
    let oracle = single_queue_oracle(0.5, ArrivalKind::Poisson, service, slots, warmup, 5, OracleStreams::Independent);
    let engine = engine_mean_queue(single_queue_config(0.5, ArrivalKind::Poisson, service, slots, warmup, 5))?;
    Ok((oracle, engine, 0.02 * oracle, "independent streams, 2% relative".into()))
}

fn drift_case(services: Vec<ServiceSpec>, lambda: f64, slots: u64) -> Result<(f64, f64, f64, String)> {
    let checks = wr_drift_test(&services, lambda, 1, slots, 3)?;
    let worst = checks
        .iter()
        .max_by(|a, b| a.z().abs().total_cmp(&b.z().abs()))
        .expect("at least one server");
    let detail = checks
        .iter()
        .map(|c| format!("server {}: {:.4} +- {:.4} (expected {:.4})", c.server, c.estimate, c.standard_error, c.expected))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((0.0, worst.z().abs(), 3.0, detail))
}

fn oracle_wr_drift_equal() -> Result<(f64, f64, f64, String)> {
    drift_case(vec![ServiceSpec::geometric_min1(2.0); 2], 3.0, 200_000)
}

fn oracle_wr_drift_unequal() -> Result<(f64, f64, f64, String)> {
    drift_case(
        vec![ServiceSpec::geometric_min1(1.0), ServiceSpec::geometric_min1(3.0)],
        2.0,
        200_000,
    )
}

fn oracle_wr_drift_preset() -> Result<(f64, f64, f64, String)> {
    let scenario = harness::preset("moderate_50_50")?;
    let checks = wr_drift_test(&scenario.services(), 90.0, scenario.dispatchers, 1_000_000, 1)?;
    let worst = checks
        .iter()
        .max_by(|a, b| a.z().abs().total_cmp(&b.z().abs()))
        .expect("100 servers");
    Ok((0.0, worst.z().abs(), 3.0, format!("worst server {} at {:.2} SE", worst.server, worst.z())))
}

fn equivalence_case(candidate: PolicyKind, n1: bool) -> Result<(f64, f64, f64, String)> {
    let (services, arrivals) = if n1 {
        (vec![ServiceSpec::geometric_min1(2.0)], ArrivalSpec::uniform(1.5, 3, ArrivalKind::Poisson))
    } else {
        mixed_equivalence_setup()
    };
    let mut identical = 0.0;
    let mut detail = Vec::new();
    for seed in 1..=3 {
        let r = jsq_equivalence_test(&services, &arrivals, 10_000, seed, candidate)?;
        if r.identical {
            identical += 1.0;
        }
        detail.push(format!("seed {seed}: {} decisions, first divergence {:?}", r.compared, r.first_divergence));
    }
    Ok((3.0, identical, 0.0, detail.join("; ")))
}

fn oracle_jsq_full_equivalence() -> Result<(f64, f64, f64, String)> {
    equivalence_case(PolicyKind::LsqFullUpdate, false)
}

fn oracle_jsq_equivalence_single_server() -> Result<(f64, f64, f64, String)> {
    equivalence_case(PolicyKind::LsqSample { d: 1 }, true)
}

fn oracle_jsq_sample_negative() -> Result<(f64, f64, f64, String)> {
    let (services, arrivals) = mixed_equivalence_setup();
    let r = jsq_equivalence_test(&services, &arrivals, 10_000, 1, PolicyKind::LsqSample { d: 2 })?;
    Ok((0.0, f64::from(u8::from(r.identical)), 0.0, format!("first divergence {:?}", r.first_divergence)))
}

fn oracle_hand_trace() -> Result<(f64, f64, f64, String)> {
    // Q = 2 preloaded, a = 3 arrive, s = 4: Q' = 1.
    let config = SimConfig {
        services: vec![ServiceSpec::deterministic(4)],
        arrivals: ArrivalSpec::uniform(3.0, 1, ArrivalKind::Deterministic),
        policy: PolicyKind::Jsq,
        slots: 1,
        warmup: 0,
        seed: 0,
        monitors: Monitors::default(),
    };
    let mut sim = Simulation::new(config)?;
    sim.preload(0, 2);
    sim.step();
    let q = sim.queue_lengths()[0] as f64;
    Ok((1.0, q, 0.0, "Q=2, a=3, s=4".into()))
}

fn accounting_case(policy: PolicyKind, charge: fn(&RoutingDecision) -> u64) -> Result<(f64, f64, f64, String)> {
    let (services, arrivals) = mixed_equivalence_setup();
    let config = SimConfig::new(services, arrivals, policy, 10_000, 2);
    let (recounted, reported) = recount_messages(config, charge)?;
    Ok((recounted as f64, reported as f64, 0.0, format!("{policy}")))
}

fn oracle_accounting_jsq_d() -> Result<(f64, f64, f64, String)> {
    accounting_case(PolicyKind::JsqD { d: 2 }, |_| 2)
}

fn oracle_accounting_lsq_sample() -> Result<(f64, f64, f64, String)> {
    // Samples come back as delivered messages, so routing itself is free.
    accounting_case(PolicyKind::LsqSample { d: 2 }, |_| 0)
}

fn oracle_accounting_jsq() -> Result<(f64, f64, f64, String)> {
    // Three dispatchers in the setup.
    accounting_case(PolicyKind::Jsq, |d| 3 * d.jobs)
}

pub const ORACLES: &[OracleCase] = &[
    OracleCase {
        name: "hand-trace",
        description: "Q=2, a=3, s=4 leaves one job",
        kind: OracleKind::HandTrace,
        run: oracle_hand_trace,
    },
    OracleCase {
        name: "single-queue-zero",
        description: "no arrivals keeps the queue empty",
        kind: OracleKind::IndependentReimplementation,
        run: oracle_single_queue_zero,
    },
    OracleCase {
        name: "single-queue-deterministic",
        description: "a=1, s=1 every slot is served in the same slot",
        kind: OracleKind::IndependentReimplementation,
        run: oracle_single_queue_deterministic,
    },
    OracleCase {
        name: "single-queue-trajectory",
        description: "queue recursion on the engine's own streams matches exactly",
        kind: OracleKind::IndependentReimplementation,
        run: oracle_single_queue_trajectory,
    },
    OracleCase {
        name: "single-queue",
        description: "Poisson(0.5) into geometric mean 2, independent streams, within 2%",
        kind: OracleKind::Statistical,
        run: oracle_single_queue_statistical,
    },
    OracleCase {
        name: "wr-drift-equal",
        description: "weighted random, mu=[2,2], lambda=3: drift 0.5 per server",
        kind: OracleKind::Statistical,
        run: oracle_wr_drift_equal,
    },
    OracleCase {
        name: "wr-drift-unequal",
        description: "weighted random, mu=[1,3], lambda=2: drifts 0.5 and 1.5",
        kind: OracleKind::Statistical,
        run: oracle_wr_drift_unequal,
    },
    OracleCase {
        name: "wr-drift-preset",
        description: "weighted random on moderate_50_50 at lambda=90, every server within 3 SE",
        kind: OracleKind::Statistical,
        run: oracle_wr_drift_preset,
    },
    OracleCase {
        name: "jsq-equivalence",
        description: "JSQ and full-update LSQ make identical decisions, 3 seeds",
        kind: OracleKind::IndependentReimplementation,
        run: oracle_jsq_full_equivalence,
    },
    OracleCase {
        name: "jsq-equivalence-single-server",
        description: "with one server every policy matches JSQ",
        kind: OracleKind::HandTrace,
        run: oracle_jsq_equivalence_single_server,
    },
    OracleCase {
        name: "jsq-sample-negative",
        description: "LSQ-Sample(2) does not reproduce JSQ",
        kind: OracleKind::HandTrace,
        run: oracle_jsq_sample_negative,
    },
    OracleCase {
        name: "accounting-jsq",
        description: "JSQ is charged m messages per job",
        kind: OracleKind::ExhaustiveAccounting,
        run: oracle_accounting_jsq,
    },
    OracleCase {
        name: "accounting-jsq-d",
        description: "JSQ(2) is charged two probes per routed batch",
        kind: OracleKind::ExhaustiveAccounting,
        run: oracle_accounting_jsq_d,
    },
    OracleCase {
        name: "accounting-lsq-sample",
        description: "LSQ-Sample(2) is charged exactly its delivered samples",
        kind: OracleKind::ExhaustiveAccounting,
        run: oracle_accounting_lsq_sample,
    },
];

pub fn oracle(name: &str) -> Result<&'static OracleCase> {
    ORACLES
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Usage(format!("unknown oracle `{name}`")))
}

pub fn run_oracle(name: &str) -> Result<OracleOutcome> {
    oracle(name)?.run()
}
