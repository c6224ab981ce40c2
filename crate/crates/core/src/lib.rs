//! Slotted-time simulator for load balancing with many dispatchers over
//! heterogeneous servers.
//!
//! ```text
//!  arrivals ──▶ dispatchers ──route──▶ servers (FIFO) ──service──▶ done
//!                   ▲                        │
//!                   └──── samples / updates ─┘
//! ```
//!
//! [`engine`] runs the slot loop, [`policies`] holds JSQ, JSQ(d), JIQ,
//! weighted-random and the local-shortest-queue family, [`metrics`] turns
//! a run into a [`MetricsReport`], [`harness`] provides the experiment
//! presets and sweeps, and [`validation`] carries the independent oracles.

pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod policies;
pub mod processes;
pub mod rng;
pub mod validation;

pub use engine::{run, run_detailed, Monitors, RunOutcome, RunSeries, SimConfig, Simulation, SlotTrace};
pub use error::{Error, Result};
pub use harness::{preset, Heterogeneity, Scenario, SweepResult, SweepRow};
pub use metrics::{MetricsReport, StabilityParams, StabilityVerdict};
pub use policies::{Policy, PolicyKind, RoutingDecision, UpdateMessage};
pub use processes::{ArrivalKind, ArrivalSpec, ServiceKind, ServiceSpec, SlackReport};
