//! Arrival and potential-service processes.
//!
//! Both are i.i.d. over slots and depend only on their spec and rng, never
//! on simulator state.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    Poisson,
    /// Every dispatcher receives exactly its (integral) rate each slot.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub total_rate: f64,
    pub per_dispatcher_rates: Vec<f64>,
    pub kind: ArrivalKind,
}

impl ArrivalSpec {
    /// Splits `total_rate` evenly over `dispatchers`.
    pub fn uniform(total_rate: f64, dispatchers: usize, kind: ArrivalKind) -> Self {
        let share = if dispatchers == 0 {
            0.0
        } else {
            total_rate / dispatchers as f64
        };
        ArrivalSpec {
            total_rate,
            per_dispatcher_rates: vec![share; dispatchers],
            kind,
        }
    }

    pub fn dispatchers(&self) -> usize {
        self.per_dispatcher_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_dispatcher_rates.is_empty() {
            return Err(Error::config("arrival spec needs at least one dispatcher"));
        }
        if !self.total_rate.is_finite() || self.total_rate < 0.0 {
            return Err(Error::config(format!(
                "arrival rate must be finite and non-negative, got {}",
                self.total_rate
            )));
        }
        for (j, &r) in self.per_dispatcher_rates.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::config(format!(
                    "dispatcher {j} arrival rate must be finite and non-negative, got {r}"
                )));
            }
            if self.kind == ArrivalKind::Deterministic && r.fract() != 0.0 {
                return Err(Error::config(format!(
                    "deterministic arrivals need integral rates, dispatcher {j} has {r}"
                )));
            }
        }
        let sum: f64 = self.per_dispatcher_rates.iter().sum();
        if (sum - self.total_rate).abs() > 1e-9 * self.total_rate.max(1.0) {
            return Err(Error::config(format!(
                "per-dispatcher rates sum to {sum}, expected {}",
                self.total_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    /// Geometric on {1, 2, ...} with success probability `1 / rate`.
    GeometricMin1,
    /// Geometric on {0, 1, ...} with mean `rate`, i.e. success probability
    /// `1 / (1 + rate)`. Admits means below one job per slot.
    GeometricMin0,
    /// Exactly `rate` jobs every slot.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub kind: ServiceKind,
    /// Mean potential service in jobs per slot.
    pub rate: f64,
}

impl ServiceSpec {
    pub fn geometric_min1(rate: f64) -> Self {
        ServiceSpec {
            kind: ServiceKind::GeometricMin1,
            rate,
        }
    }

    pub fn geometric_min0(rate: f64) -> Self {
        ServiceSpec {
            kind: ServiceKind::GeometricMin0,
            rate,
        }
    }

    pub fn deterministic(rate: u64) -> Self {
        ServiceSpec {
            kind: ServiceKind::Deterministic,
            rate: rate as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rate;
        if !r.is_finite() {
            return Err(Error::config(format!("service rate must be finite, got {r}")));
        }
        match self.kind {
            ServiceKind::GeometricMin1 if r < 1.0 => Err(Error::config(format!(
                "geometric_min1 service needs rate >= 1, got {r}"
            ))),
            ServiceKind::GeometricMin0 if r <= 0.0 => Err(Error::config(format!(
                "geometric_min0 service needs rate > 0, got {r}"
            ))),
            ServiceKind::Deterministic if r < 0.0 || r.fract() != 0.0 => Err(Error::config(
                format!("deterministic service needs a non-negative integral rate, got {r}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Pre-built sampler for one dispatcher-set's arrivals.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    per_dispatcher: Vec<ArrivalDraw>,
}

#[derive(Debug, Clone)]
enum ArrivalDraw {
    Zero,
    Poisson(Poisson<f64>),
    Fixed(u64),
}

impl ArrivalSampler {
    pub fn new(spec: &ArrivalSpec) -> Result<Self> {
        spec.validate()?;
        let per_dispatcher = spec
            .per_dispatcher_rates
            .iter()
            .map(|&r| match spec.kind {
                _ if r == 0.0 => ArrivalDraw::Zero,
                ArrivalKind::Poisson => ArrivalDraw::Poisson(
                    Poisson::new(r).expect("validated rate is positive and finite"),
                ),
                ArrivalKind::Deterministic => ArrivalDraw::Fixed(r as u64),
            })
            .collect();
        Ok(ArrivalSampler { per_dispatcher })
    }

    pub fn dispatchers(&self) -> usize {
        self.per_dispatcher.len()
    }

    /// Fills `out[j]` with `a^j(t)`. Dispatchers are drawn in index order.
    pub fn sample_into(&self, rng: &mut SimRng, out: &mut [u64]) {
        debug_assert_eq!(out.len(), self.per_dispatcher.len());
        for (slot, draw) in out.iter_mut().zip(&self.per_dispatcher) {
            *slot = match draw {
                ArrivalDraw::Zero => 0,
                ArrivalDraw::Poisson(p) => p.sample(rng) as u64,
                ArrivalDraw::Fixed(k) => *k,
            };
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceSampler(ServiceDraw);

#[derive(Debug, Clone)]
enum ServiceDraw {
    Fixed(u64),
    Min1(Geometric),
    Min0(Geometric),
}

impl ServiceSampler {
    pub fn new(spec: &ServiceSpec) -> Result<Self> {
        spec.validate()?;
        let draw = match spec.kind {
            ServiceKind::Deterministic => ServiceDraw::Fixed(spec.rate as u64),
            ServiceKind::GeometricMin1 if spec.rate == 1.0 => ServiceDraw::Fixed(1),
            ServiceKind::GeometricMin1 => {
                ServiceDraw::Min1(Geometric::new(1.0 / spec.rate).expect("q in (0, 1)"))
            }
            ServiceKind::GeometricMin0 => {
                ServiceDraw::Min0(Geometric::new(1.0 / (1.0 + spec.rate)).expect("q in (0, 1)"))
            }
        };
        Ok(ServiceSampler(draw))
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> u64 {
        match &self.0 {
            ServiceDraw::Fixed(k) => *k,
            ServiceDraw::Min1(g) => 1 + g.sample(rng),
            ServiceDraw::Min0(g) => g.sample(rng),
        }
    }
}

/// Draws one slot of per-dispatcher arrivals.
pub fn sample_arrivals(spec: &ArrivalSpec, rng: &mut SimRng) -> Result<Vec<u64>> {
    let sampler = ArrivalSampler::new(spec)?;
    let mut out = vec![0; sampler.dispatchers()];
    sampler.sample_into(rng, &mut out);
    Ok(out)
}

/// Draws one slot of potential service `s_i(t)`.
pub fn sample_service(spec: &ServiceSpec, rng: &mut SimRng) -> Result<u64> {
    Ok(ServiceSampler::new(spec)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    /// Sum of mean service rates.
    pub capacity: f64,
    /// `capacity - total arrival rate`.
    pub slack: f64,
}

impl SlackReport {
    pub fn admissible(&self) -> bool {
        self.slack > 0.0
    }
}

pub fn capacity(services: &[ServiceSpec], arrival: &ArrivalSpec) -> SlackReport {
    let capacity: f64 = services.iter().map(|s| s.rate).sum();
    SlackReport {
        capacity,
        slack: capacity - arrival.total_rate,
    }
}

/// Uniform draw used by a few policies; kept here so every integer draw in
/// the crate goes through one place.
#[inline]
pub(crate) fn uniform_index(rng: &mut SimRng, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        0
    } else {
        rng.random_range(0..len)
    }
}
