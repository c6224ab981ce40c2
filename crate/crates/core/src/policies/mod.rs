//! Dispatcher routing policies and server update rules.
//!
//! Every policy implements [`Policy`]. The engine drives it through four
//! hooks per slot: `route` for each dispatcher with arrivals,
//! `push_targets` for the servers that dispatcher samples, `server_update`
//! for each server after service, and `on_message` to deliver every
//! message before the next slot begins.
//!
//! Only JSQ and JSQ(d) are granted the true queue vector at routing time
//! (see [`Policy::reads_true_queues`]); everything else routes from its
//! own state.

mod baseline;
mod lsq;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processes::uniform_index;
use crate::rng::SimRng;

pub use baseline::{Jiq, Jsq, JsqD, WeightedRandom};
pub use lsq::{LocalViews, Lsq, PullRule, PushRule};

/// `<server, queue length>` addressed to one dispatcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMessage {
    pub server: usize,
    pub queue_length: u64,
    pub dispatcher: usize,
    pub slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub dispatcher: usize,
    pub server: usize,
    pub jobs: u64,
}

/// Result of one routing call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routed {
    pub server: usize,
    /// Control messages charged to this decision (queries answered from
    /// the true state, e.g. JSQ(d)'s probes).
    pub messages: u64,
}

impl Routed {
    pub fn free(server: usize) -> Self {
        Routed {
            server,
            messages: 0,
        }
    }
}

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    /// Whether `route` must be given the true queue lengths.
    fn reads_true_queues(&self) -> bool {
        false
    }

    /// Picks the server receiving all `jobs` of `dispatcher` this slot.
    /// `true_queues` is `Some` only when [`Policy::reads_true_queues`].
    fn route(
        &mut self,
        dispatcher: usize,
        jobs: u64,
        true_queues: Option<&[u64]>,
        rng: &mut SimRng,
    ) -> Routed;

    /// Servers whose post-service length `dispatcher` learns at the end of
    /// this slot.
    fn push_targets(
        &mut self,
        _dispatcher: usize,
        _jobs: u64,
        _rng: &mut SimRng,
        _out: &mut Vec<usize>,
    ) {
    }

    /// Called once per server per slot after service with the number of
    /// jobs completed and the post-service queue length.
    fn server_update(
        &mut self,
        _slot: u64,
        _server: usize,
        _completed: u64,
        _queue_length: u64,
        _rng: &mut SimRng,
        _out: &mut Vec<UpdateMessage>,
    ) {
    }

    fn on_message(&mut self, msg: &UpdateMessage);

    /// Dispatcher's local view, for view-based policies.
    fn local_view(&self, _dispatcher: usize) -> Option<&[u64]> {
        None
    }

    /// Internal bookkeeping check; `Err` describes the first mismatch.
    fn check_consistency(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Index of a minimum entry, uniform over ties.
///
/// Draws from `rng` only when the minimum is tied.
#[inline]
pub fn pick_min(values: &[u64], rng: &mut SimRng) -> usize {
    debug_assert!(!values.is_empty());
    let mut min = u64::MAX;
    let mut ties = 0usize;
    let mut first = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v < min {
            min = v;
            ties = 1;
            first = i;
        } else if v == min {
            ties += 1;
        }
    }
    if ties == 1 {
        return first;
    }
    let k = uniform_index(rng, ties);
    values[first..]
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v == min)
        .nth(k)
        .map(|(i, _)| first + i)
        .expect("k < ties")
}

/// Index of a maximum entry, uniform over ties.
pub fn pick_max(values: &[u64], rng: &mut SimRng) -> usize {
    debug_assert!(!values.is_empty());
    let max = *values.iter().max().expect("non-empty");
    let ties = values.iter().filter(|&&v| v == max).count();
    let k = uniform_index(rng, ties);
    values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v == max)
        .nth(k)
        .map(|(i, _)| i)
        .expect("k < ties")
}

pub fn argmin_random_tiebreak(values: &[u64], rng: &mut SimRng) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Usage("argmin of an empty vector".into()));
    }
    Ok(pick_min(values, rng))
}

/// Policy selection as it appears in configs and on the command line.
///
/// String form: `jsq`, `jsq-d:<d>`, `jiq`, `wr`, `lsq-sample:<d>`,
/// `lsq-update:<p>`, `lsq-smart:<p>`, `lsq-rr:<c_up>`, `lsq-full`,
/// `low-push:<r>`, `low-pull:<r>`, `hybrid:<r>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Jsq,
    JsqD { d: usize },
    Jiq,
    WeightedRandom,
    LsqSample { d: usize },
    LsqUpdate { p: f64 },
    /// `f*(p)` send probability with worst-approximation-first targeting.
    LsqSmart { p: f64 },
    /// Deterministic refresh of every view entry once per `c_up` slots.
    LsqRoundRobin { c_up: u64 },
    /// Every view entry refreshed at the end of every slot.
    LsqFullUpdate,
    LowCommPush { r: f64 },
    LowCommPull { r: f64 },
    Hybrid { r: f64 },
}

impl PolicyKind {
    pub fn validate(&self, servers: usize, dispatchers: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidPolicy {
            id: self.to_string(),
            reason,
        };
        match *self {
            PolicyKind::JsqD { d } | PolicyKind::LsqSample { d } => {
                if d == 0 || d > servers {
                    return Err(bad(format!("d must be in 1..={servers}")));
                }
            }
            PolicyKind::LsqUpdate { p } | PolicyKind::LsqSmart { p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(bad("p must be in (0, 1]".into()));
                }
            }
            PolicyKind::LsqRoundRobin { c_up } => {
                if c_up == 0 || (c_up as usize) < dispatchers {
                    return Err(bad(format!(
                        "c_up must be at least the number of dispatchers ({dispatchers})"
                    )));
                }
            }
            PolicyKind::LowCommPush { r } | PolicyKind::LowCommPull { r } | PolicyKind::Hybrid { r } => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(bad("r must be positive".into()));
                }
            }
            PolicyKind::Jsq | PolicyKind::Jiq | PolicyKind::WeightedRandom | PolicyKind::LsqFullUpdate => {}
        }
        Ok(())
    }

    /// Whether the policy keeps per-dispatcher local views.
    pub fn has_views(&self) -> bool {
        !matches!(
            self,
            PolicyKind::Jsq | PolicyKind::JsqD { .. } | PolicyKind::Jiq | PolicyKind::WeightedRandom
        )
    }

    pub fn build(&self, service_rates: &[f64], dispatchers: usize) -> Result<Box<dyn Policy>> {
        let n = service_rates.len();
        self.validate(n, dispatchers)?;
        let m = dispatchers;
        Ok(match *self {
            PolicyKind::Jsq => Box::new(Jsq::new(m)),
            PolicyKind::JsqD { d } => Box::new(JsqD::new(n, d)),
            PolicyKind::Jiq => Box::new(Jiq::new(n, m)),
            PolicyKind::WeightedRandom => Box::new(WeightedRandom::new(service_rates)?),
            PolicyKind::LsqSample { d } => Box::new(Lsq::new(*self, n, m, PushRule::Sample { d }, PullRule::None)),
            PolicyKind::LsqUpdate { p } => Box::new(Lsq::new(*self, n, m, PushRule::None, PullRule::Update { p })),
            PolicyKind::LsqSmart { p } => Box::new(Lsq::new(*self, n, m, PushRule::None, PullRule::smart(p, n, m))),
            PolicyKind::LsqRoundRobin { c_up } => {
                Box::new(Lsq::new(*self, n, m, PushRule::None, PullRule::RoundRobin { c_up }))
            }
            PolicyKind::LsqFullUpdate => Box::new(Lsq::new(*self, n, m, PushRule::None, PullRule::Full)),
            PolicyKind::LowCommPush { r } => Box::new(Lsq::new(
                *self,
                n,
                m,
                PushRule::Bernoulli { prob: (r / m as f64).min(1.0) },
                PullRule::None,
            )),
            PolicyKind::LowCommPull { r } => Box::new(Lsq::new(
                *self,
                n,
                m,
                PushRule::None,
                PullRule::Bernoulli { prob: (r / n as f64).min(1.0) },
            )),
            PolicyKind::Hybrid { r } => Box::new(Lsq::new(
                *self,
                n,
                m,
                PushRule::Bernoulli { prob: (r / m as f64).min(1.0) },
                PullRule::IdleOnly,
            )),
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Jsq => write!(f, "jsq"),
            PolicyKind::JsqD { d } => write!(f, "jsq-d:{d}"),
            PolicyKind::Jiq => write!(f, "jiq"),
            PolicyKind::WeightedRandom => write!(f, "wr"),
            PolicyKind::LsqSample { d } => write!(f, "lsq-sample:{d}"),
            PolicyKind::LsqUpdate { p } => write!(f, "lsq-update:{p}"),
            PolicyKind::LsqSmart { p } => write!(f, "lsq-smart:{p}"),
            PolicyKind::LsqRoundRobin { c_up } => write!(f, "lsq-rr:{c_up}"),
            PolicyKind::LsqFullUpdate => write!(f, "lsq-full"),
            PolicyKind::LowCommPush { r } => write!(f, "low-push:{r}"),
            PolicyKind::LowCommPull { r } => write!(f, "low-pull:{r}"),
            PolicyKind::Hybrid { r } => write!(f, "hybrid:{r}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |reason: &str| Error::InvalidPolicy {
            id: s.to_string(),
            reason: reason.to_string(),
        };
        let (name, arg) = match s.split_once(':') {
            Some((name, arg)) => (name, Some(arg)),
            None => (s, None),
        };
        let int = |arg: Option<&str>| -> Result<u64> {
            arg.ok_or_else(|| bad("missing integer parameter"))?
                .parse()
                .map_err(|_| bad("parameter is not an integer"))
        };
        let float = |arg: Option<&str>| -> Result<f64> {
            arg.ok_or_else(|| bad("missing numeric parameter"))?
                .parse()
                .map_err(|_| bad("parameter is not a number"))
        };
        let no_arg = |kind: PolicyKind| match arg {
            None => Ok(kind),
            Some(_) => Err(bad("takes no parameter")),
        };
        match name.to_ascii_lowercase().as_str() {
            "jsq" => no_arg(PolicyKind::Jsq),
            "jsq-d" => Ok(PolicyKind::JsqD { d: int(arg)? as usize }),
            "jiq" => no_arg(PolicyKind::Jiq),
            "wr" => no_arg(PolicyKind::WeightedRandom),
            "lsq-sample" => Ok(PolicyKind::LsqSample { d: int(arg)? as usize }),
            "lsq-update" => Ok(PolicyKind::LsqUpdate { p: float(arg)? }),
            "lsq-smart" => Ok(PolicyKind::LsqSmart { p: float(arg)? }),
            "lsq-rr" => Ok(PolicyKind::LsqRoundRobin { c_up: int(arg)? }),
            "lsq-full" => no_arg(PolicyKind::LsqFullUpdate),
            "low-push" => Ok(PolicyKind::LowCommPush { r: float(arg)? }),
            "low-pull" => Ok(PolicyKind::LowCommPull { r: float(arg)? }),
            "hybrid" => Ok(PolicyKind::Hybrid { r: float(arg)? }),
            _ => Err(bad("unknown policy")),
        }
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(kind: PolicyKind) -> String {
        kind.to_string()
    }
}
