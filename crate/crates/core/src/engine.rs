//! The slot-phased simulation loop.
//!
//! Each slot runs four phases in a fixed order:
//!
//! 1. every dispatcher draws its arrivals `a^j(t)`;
//! 2. every dispatcher with arrivals routes its whole batch to one server
//!    (and picks its push-sample targets), all against start-of-slot state;
//! 3. every server draws `s_i(t)` and completes `min(Q_i + a_i, s_i)` jobs
//!    in FIFO order;
//! 4. servers emit pull messages, push samples are answered with the
//!    post-service lengths, and every message is delivered before the next
//!    slot's routing.
//!
//! Monitors observe the state at slot start, before arrivals.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    self, message_rates, stability_estimate, DriftEstimate, GapStats, InvariantReport,
    MetricsReport, RefreshStats, SojournHistogram, StabilityParams,
};
use crate::policies::{Policy, PolicyKind, RoutingDecision, UpdateMessage};
use crate::processes::{capacity, ArrivalSampler, ArrivalSpec, ServiceSampler, ServiceSpec, SlackReport};
use crate::rng::{stream_rng, SimRng, Stream};

/// Optional instrumentation. All monitors are read-only: switching one on
/// or off never changes the simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Monitors {
    /// Queue dynamics, FIFO order, policy bookkeeping and conservation.
    pub check_invariants: bool,
    pub gaps: bool,
    pub refresh_ages: bool,
    /// Per-server mean of `s_i(t) - a_i(t)`.
    pub drift: bool,
    /// Keep every routing decision (for equivalence tests).
    pub record_decisions: bool,
    pub stability: StabilityParams,
}

impl Default for Monitors {
    fn default() -> Self {
        Monitors {
            check_invariants: true,
            gaps: true,
            refresh_ages: true,
            drift: false,
            record_decisions: false,
            stability: StabilityParams::default(),
        }
    }
}

/// A complete, self-contained experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub services: Vec<ServiceSpec>,
    pub arrivals: ArrivalSpec,
    pub policy: PolicyKind,
    pub slots: u64,
    /// Slots excluded from time averages and sojourn statistics.
    pub warmup: u64,
    pub seed: u64,
    #[serde(default)]
    pub monitors: Monitors,
}

impl SimConfig {
    /// Config with the default warm-up of 10% of the horizon.
    pub fn new(
        services: Vec<ServiceSpec>,
        arrivals: ArrivalSpec,
        policy: PolicyKind,
        slots: u64,
        seed: u64,
    ) -> Self {
        SimConfig {
            services,
            arrivals,
            policy,
            slots,
            warmup: slots / 10,
            seed,
            monitors: Monitors::default(),
        }
    }

    pub fn servers(&self) -> usize {
        self.services.len()
    }

    pub fn dispatchers(&self) -> usize {
        self.arrivals.dispatchers()
    }

    pub fn slack(&self) -> SlackReport {
        capacity(&self.services, &self.arrivals)
    }

    pub fn validate(&self) -> Result<()> {
        if self.services.is_empty() {
            return Err(Error::config("at least one server is required"));
        }
        for (i, s) in self.services.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::config(format!("server {i}: {e}")))?;
        }
        self.arrivals.validate()?;
        self.policy.validate(self.servers(), self.dispatchers())?;
        if self.warmup > self.slots {
            return Err(Error::config(format!(
                "warm-up ({}) exceeds the horizon ({})",
                self.warmup, self.slots
            )));
        }
        Ok(())
    }
}

/// Jobs that entered one server's FIFO together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobBatch {
    pub arrival_slot: u64,
    pub dispatcher: u32,
    pub count: u64,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub fifo: VecDeque<JobBatch>,
    pub service: ServiceSpec,
}

/// What happened in one slot. Reused between slots.
#[derive(Debug, Clone, Default)]
pub struct SlotTrace {
    pub slot: u64,
    /// `Q_i(t)` before arrivals.
    pub queue_start: Vec<u64>,
    pub dispatcher_arrivals: Vec<u64>,
    pub decisions: Vec<RoutingDecision>,
    pub server_arrivals: Vec<u64>,
    pub potential_service: Vec<u64>,
    pub completions: Vec<u64>,
    /// Messages delivered to dispatchers at the end of the slot.
    pub messages: Vec<UpdateMessage>,
    /// All charged messages, including probes that update no view.
    pub message_count: u64,
    pub incast_max: u32,
}

/// Raw per-slot series over the measurement window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSeries {
    pub total_queue: Vec<u64>,
    /// Mean `|Q_i - view_j[i]|` over all pairs, per slot. Empty for
    /// policies without views.
    pub mean_gap: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub series: RunSeries,
    /// `(slot, decision)` pairs when `record_decisions` is on.
    pub decisions: Vec<(u64, RoutingDecision)>,
}

#[derive(Debug, Default)]
struct Collector {
    measured_slots: u64,
    total_queue_sum: u128,
    sojourn: SojournHistogram,
    jobs_arrived: u64,
    completions: u64,
    arrival_events: u64,
    slots_with_arrivals: u64,
    messages: u64,
    incast: BTreeMap<u32, u64>,
    gap_sum: Vec<u64>,
    gap_max: u64,
    age_max: u64,
    age_sum: u128,
    age_samples: u64,
    age_violations: u64,
    drift_sum: Vec<f64>,
    drift_sq: Vec<f64>,
    series: RunSeries,
}

pub struct Simulation {
    config: SimConfig,
    servers_n: usize,
    dispatchers_m: usize,
    slot: u64,
    policy: Box<dyn Policy>,
    reads_truth: bool,
    has_views: bool,
    refresh_bound: Option<u64>,

    arrivals: ArrivalSampler,
    services: Vec<ServiceSampler>,
    arrival_rng: SimRng,
    service_rngs: Vec<SimRng>,
    dispatcher_rngs: Vec<SimRng>,
    server_rngs: Vec<SimRng>,

    servers: Vec<ServerState>,
    queue_lengths: Vec<u64>,
    total_queue: u64,
    last_refresh: Vec<i64>,
    last_completed_arrival: Vec<u64>,

    trace: SlotTrace,
    push_buf: Vec<usize>,
    samples: Vec<(usize, usize)>,
    incast_counts: Vec<u32>,

    total_arrived: u64,
    total_completed: u64,
    invariants: InvariantReport,
    decisions: Vec<(u64, RoutingDecision)>,
    collector: Collector,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let n = config.servers();
        let m = config.dispatchers();
        let seed = config.seed;
        let rates: Vec<f64> = config.services.iter().map(|s| s.rate).collect();
        let policy = config.policy.build(&rates, m)?;
        let monitors = config.monitors;
        let has_views = config.policy.has_views();
        let refresh_bound = match config.policy {
            PolicyKind::LsqRoundRobin { c_up } => Some(c_up),
            PolicyKind::LsqFullUpdate => Some(1),
            _ => None,
        };
        let collector = Collector {
            gap_sum: if has_views && monitors.gaps { vec![0; n * m] } else { Vec::new() },
            drift_sum: if monitors.drift { vec![0.0; n] } else { Vec::new() },
            drift_sq: if monitors.drift { vec![0.0; n] } else { Vec::new() },
            ..Collector::default()
        };
        Ok(Simulation {
            servers_n: n,
            dispatchers_m: m,
            slot: 0,
            reads_truth: policy.reads_true_queues(),
            policy,
            has_views,
            refresh_bound,
            arrivals: ArrivalSampler::new(&config.arrivals)?,
            services: config
                .services
                .iter()
                .map(ServiceSampler::new)
                .collect::<Result<_>>()?,
            arrival_rng: stream_rng(seed, Stream::Arrivals),
            service_rngs: (0..n).map(|i| stream_rng(seed, Stream::Service(i))).collect(),
            dispatcher_rngs: (0..m).map(|j| stream_rng(seed, Stream::Dispatcher(j))).collect(),
            server_rngs: (0..n).map(|i| stream_rng(seed, Stream::Server(i))).collect(),
            servers: config
                .services
                .iter()
                .map(|&service| ServerState {
                    fifo: VecDeque::new(),
                    service,
                })
                .collect(),
            queue_lengths: vec![0; n],
            total_queue: 0,
            // Views start equal to the (empty) truth, as if refreshed just
            // before slot 0.
            last_refresh: if has_views { vec![-1; n * m] } else { Vec::new() },
            last_completed_arrival: vec![0; n],
            trace: SlotTrace {
                queue_start: vec![0; n],
                dispatcher_arrivals: vec![0; m],
                server_arrivals: vec![0; n],
                potential_service: vec![0; n],
                completions: vec![0; n],
                ..SlotTrace::default()
            },
            push_buf: Vec::new(),
            samples: Vec::new(),
            incast_counts: vec![0; n],
            total_arrived: 0,
            total_completed: 0,
            invariants: InvariantReport {
                checked: monitors.check_invariants,
                conservation_holds: true,
                ..InvariantReport::default()
            },
            decisions: Vec::new(),
            collector,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Next slot to run.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn queue_lengths(&self) -> &[u64] {
        &self.queue_lengths
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn policy(&self) -> &dyn Policy {
        self.policy.as_ref()
    }

    pub fn last_trace(&self) -> &SlotTrace {
        &self.trace
    }

    /// Puts `count` jobs in server `i`'s queue before the next slot, as if
    /// they had arrived in slot 0 from dispatcher 0. Views are untouched.
    pub fn preload(&mut self, server: usize, count: u64) {
        if count == 0 {
            return;
        }
        self.servers[server].fifo.push_back(JobBatch {
            arrival_slot: self.slot,
            dispatcher: 0,
            count,
        });
        self.queue_lengths[server] += count;
        self.total_queue += count;
        self.total_arrived += count;
    }

    /// Executes one slot and returns its trace.
    pub fn step(&mut self) -> &SlotTrace {
        let t = self.slot;
        let n = self.servers_n;
        let m = self.dispatchers_m;
        let monitors = self.config.monitors;
        let measuring = t >= self.config.warmup;

        let trace = &mut self.trace;
        trace.slot = t;
        trace.queue_start.copy_from_slice(&self.queue_lengths);
        trace.decisions.clear();
        trace.messages.clear();
        trace.message_count = 0;
        trace.incast_max = 0;
        trace.server_arrivals.fill(0);

        if measuring {
            self.observe_slot_start(t);
        }

        // Phase 1.
        let trace = &mut self.trace;
        self.arrivals
            .sample_into(&mut self.arrival_rng, &mut trace.dispatcher_arrivals);

        // Phase 2: every dispatcher sees the start-of-slot queues.
        self.samples.clear();
        let mut touched = 0u32;
        for j in 0..m {
            let jobs = trace.dispatcher_arrivals[j];
            if jobs == 0 {
                continue;
            }
            let rng = &mut self.dispatcher_rngs[j];
            let truth = self.reads_truth.then_some(&self.queue_lengths[..]);
            let routed = self.policy.route(j, jobs, truth, rng);
            let i = routed.server;
            trace.message_count += routed.messages;
            trace.decisions.push(RoutingDecision {
                dispatcher: j,
                server: i,
                jobs,
            });
            trace.server_arrivals[i] += jobs;
            self.servers[i].fifo.push_back(JobBatch {
                arrival_slot: t,
                dispatcher: j as u32,
                count: jobs,
            });
            self.incast_counts[i] += 1;
            trace.incast_max = trace.incast_max.max(self.incast_counts[i]);
            touched += 1;

            self.push_buf.clear();
            self.policy.push_targets(j, jobs, rng, &mut self.push_buf);
            self.samples.extend(self.push_buf.iter().map(|&i| (j, i)));
        }
        if touched > 0 {
            for d in &trace.decisions {
                self.incast_counts[d.server] = 0;
            }
        }

        // Phase 3.
        let warmup = self.config.warmup;
        let mut slot_completions = 0u64;
        for i in 0..n {
            let s = self.services[i].sample(&mut self.service_rngs[i]);
            let q = self.queue_lengths[i];
            let a = trace.server_arrivals[i];
            let mut remaining = s.min(q + a);
            let completed = remaining;
            let fifo = &mut self.servers[i].fifo;
            while remaining > 0 {
                let front = fifo.front_mut().expect("queue holds q + a jobs");
                let take = front.count.min(remaining);
                if measuring && front.arrival_slot >= warmup {
                    self.collector.sojourn.add(t - front.arrival_slot, take);
                }
                if monitors.check_invariants {
                    if front.arrival_slot < self.last_completed_arrival[i] {
                        self.invariants.fifo_violations += 1;
                    }
                    self.last_completed_arrival[i] = front.arrival_slot;
                }
                front.count -= take;
                remaining -= take;
                if front.count == 0 {
                    fifo.pop_front();
                }
            }
            let next = q + a - completed;
            if monitors.check_invariants && next != (q + a).saturating_sub(s) {
                self.invariants.queue_dynamics_violations += 1;
            }
            if monitors.drift && measuring {
                let diff = s as f64 - a as f64;
                self.collector.drift_sum[i] += diff;
                self.collector.drift_sq[i] += diff * diff;
            }
            self.queue_lengths[i] = next;
            trace.potential_service[i] = s;
            trace.completions[i] = completed;
            slot_completions += completed;
        }
        let slot_arrivals: u64 = trace.dispatcher_arrivals.iter().sum();
        self.total_queue = self.total_queue + slot_arrivals - slot_completions;
        self.total_arrived += slot_arrivals;
        self.total_completed += slot_completions;

        // Phase 4: generate and deliver.
        for i in 0..n {
            self.policy.server_update(
                t,
                i,
                trace.completions[i],
                self.queue_lengths[i],
                &mut self.server_rngs[i],
                &mut trace.messages,
            );
        }
        for &(j, i) in &self.samples {
            trace.messages.push(UpdateMessage {
                server: i,
                queue_length: self.queue_lengths[i],
                dispatcher: j,
                slot: t,
            });
        }
        for msg in &trace.messages {
            self.policy.on_message(msg);
            if self.has_views {
                self.last_refresh[msg.dispatcher * n + msg.server] = t as i64;
            }
        }
        trace.message_count += trace.messages.len() as u64;

        if monitors.check_invariants && self.policy.check_consistency().is_err() {
            self.invariants.consistency_violations += 1;
        }
        if monitors.record_decisions {
            self.decisions
                .extend(trace.decisions.iter().map(|&d| (t, d)));
        }
        if measuring {
            let c = &mut self.collector;
            c.jobs_arrived += slot_arrivals;
            c.completions += slot_completions;
            c.arrival_events += trace.decisions.len() as u64;
            c.slots_with_arrivals += u64::from(!trace.decisions.is_empty());
            c.messages += trace.message_count;
            *c.incast.entry(trace.incast_max).or_default() += 1;
        }

        self.slot += 1;
        &self.trace
    }

    fn observe_slot_start(&mut self, t: u64) {
        let n = self.servers_n;
        let monitors = self.config.monitors;
        let c = &mut self.collector;
        c.measured_slots += 1;
        c.total_queue_sum += self.total_queue as u128;
        c.series.total_queue.push(self.total_queue);

        if !self.has_views || !(monitors.gaps || monitors.refresh_ages) {
            return;
        }
        let mut slot_gap = 0u64;
        for j in 0..self.dispatchers_m {
            let view = self.policy.local_view(j).expect("view-based policy");
            let base = j * n;
            if monitors.gaps {
                for (i, (&q, &v)) in self.queue_lengths.iter().zip(view).enumerate() {
                    let gap = q.abs_diff(v);
                    c.gap_sum[base + i] += gap;
                    slot_gap += gap;
                    c.gap_max = c.gap_max.max(gap);
                }
            }
            if monitors.refresh_ages {
                for &last in &self.last_refresh[base..base + n] {
                    let age = (t as i64 - last) as u64;
                    c.age_max = c.age_max.max(age);
                    c.age_sum += age as u128;
                    if self.refresh_bound.is_some_and(|b| age > b) {
                        c.age_violations += 1;
                    }
                }
                c.age_samples += n as u64;
            }
        }
        if monitors.gaps {
            c.series
                .mean_gap
                .push(slot_gap as f64 / (n * self.dispatchers_m) as f64);
        }
    }

    /// Runs the remaining slots and assembles the report.
    pub fn run_to_end(mut self) -> RunOutcome {
        while self.slot < self.config.slots {
            self.step();
        }
        self.finish()
    }

    fn finish(mut self) -> RunOutcome {
        let monitors = self.config.monitors;
        let c = std::mem::take(&mut self.collector);
        let slots = c.measured_slots;
        let backlog: u64 = self.queue_lengths.iter().sum();
        let mut invariants = self.invariants;
        invariants.conservation_holds = self.total_arrived == self.total_completed + backlog
            && backlog == self.total_queue
            && self
                .servers
                .iter()
                .zip(&self.queue_lengths)
                .all(|(s, &q)| s.fifo.iter().map(|b| b.count).sum::<u64>() == q);

        let pairs = (self.servers_n * self.dispatchers_m) as f64;
        let gap = (self.has_views && monitors.gaps && slots > 0).then(|| GapStats {
            mean: c.gap_sum.iter().sum::<u64>() as f64 / (pairs * slots as f64),
            max: c.gap_max,
            per_pair: c.gap_sum.iter().map(|&g| g as f64 / slots as f64).collect(),
        });
        let refresh = (self.has_views && monitors.refresh_ages && c.age_samples > 0).then(|| {
            RefreshStats {
                max_age: c.age_max,
                mean_age: c.age_sum as f64 / c.age_samples as f64,
                bound: self.refresh_bound,
                violations: c.age_violations,
            }
        });
        let drift = (monitors.drift && slots > 1).then(|| {
            c.drift_sum
                .iter()
                .zip(&c.drift_sq)
                .map(|(&sum, &sq)| {
                    let k = slots as f64;
                    let mean = sum / k;
                    let var = ((sq - k * mean * mean) / (k - 1.0)).max(0.0);
                    DriftEstimate {
                        mean,
                        standard_error: (var / k).sqrt(),
                    }
                })
                .collect()
        });
        let series_f64: Vec<f64> = c.series.total_queue.iter().map(|&q| q as f64).collect();
        let stability = stability_estimate(&series_f64, &monitors.stability);
        let sojourn_ccdf = metrics::sojourn_ccdf(&c.sojourn, &c.sojourn.default_thresholds())
            .unwrap_or_default();

        let report = MetricsReport {
            policy: self.config.policy.to_string(),
            seed: self.config.seed,
            slots: self.config.slots,
            warmup: self.config.warmup,
            measured_slots: slots,
            mean_total_queue: (slots > 0).then(|| c.total_queue_sum as f64 / slots as f64),
            jobs_arrived: c.jobs_arrived,
            jobs_completed: c.sojourn.total(),
            throughput: (slots > 0).then(|| c.completions as f64 / slots as f64),
            mean_sojourn: c.sojourn.mean(),
            sojourn_percentiles: c.sojourn.percentiles(),
            sojourn_ccdf,
            incast_max: c.incast.keys().next_back().copied().unwrap_or(0),
            incast_histogram: c.incast,
            slots_with_arrivals: c.slots_with_arrivals,
            messages: message_rates(c.messages, slots, c.jobs_arrived, c.arrival_events),
            gap,
            refresh,
            drift,
            stability,
            invariants,
        };
        RunOutcome {
            report,
            series: c.series,
            decisions: self.decisions,
        }
    }
}

/// Validates `config`, runs it to the horizon and returns the report.
pub fn run(config: SimConfig) -> Result<MetricsReport> {
    Ok(Simulation::new(config)?.run_to_end().report)
}

/// Like [`run`] but also returns the raw series and recorded decisions.
pub fn run_detailed(config: SimConfig) -> Result<RunOutcome> {
    Ok(Simulation::new(config)?.run_to_end())
}
