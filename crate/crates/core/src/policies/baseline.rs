//! JSQ, JSQ(d), JIQ and weighted-random routing.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;

use super::{pick_min, Policy, PolicyKind, Routed, UpdateMessage};
use crate::error::{Error, Result};
use crate::processes::uniform_index;
use crate::rng::SimRng;

/// Full-information join-the-shortest-queue.
///
/// Has no messages of its own; each routed job is charged `m` messages,
/// the per-job worst case for keeping every dispatcher exact.
#[derive(Debug, Clone)]
pub struct Jsq {
    dispatchers: usize,
}

impl Jsq {
    pub fn new(dispatchers: usize) -> Self {
        Jsq { dispatchers }
    }
}

impl Policy for Jsq {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Jsq
    }

    fn reads_true_queues(&self) -> bool {
        true
    }

    fn route(&mut self, _j: usize, jobs: u64, true_queues: Option<&[u64]>, rng: &mut SimRng) -> Routed {
        let queues = true_queues.expect("jsq is granted the true queues");
        Routed {
            server: pick_min(queues, rng),
            messages: self.dispatchers as u64 * jobs,
        }
    }

    fn on_message(&mut self, _msg: &UpdateMessage) {}
}

/// Power-of-d choices: probe `d` distinct servers, join the shortest.
#[derive(Debug, Clone)]
pub struct JsqD {
    servers: usize,
    d: usize,
    sampled: Vec<usize>,
    lengths: Vec<u64>,
}

impl JsqD {
    pub fn new(servers: usize, d: usize) -> Self {
        JsqD {
            servers,
            d,
            sampled: Vec::with_capacity(d),
            lengths: Vec::with_capacity(d),
        }
    }

    /// Servers probed by the most recent `route` call.
    pub fn last_sample(&self) -> &[usize] {
        &self.sampled
    }
}

impl Policy for JsqD {
    fn kind(&self) -> PolicyKind {
        PolicyKind::JsqD { d: self.d }
    }

    fn reads_true_queues(&self) -> bool {
        true
    }

    fn route(&mut self, _j: usize, _jobs: u64, true_queues: Option<&[u64]>, rng: &mut SimRng) -> Routed {
        let queues = true_queues.expect("jsq(d) is granted the true queues");
        self.sampled.clear();
        self.sampled.extend(index::sample(rng, self.servers, self.d).iter());
        self.lengths.clear();
        self.lengths.extend(self.sampled.iter().map(|&i| queues[i]));
        let k = pick_min(&self.lengths, rng);
        Routed {
            server: self.sampled[k],
            messages: self.d as u64,
        }
    }

    fn on_message(&mut self, _msg: &UpdateMessage) {}
}

/// Join-idle-queue.
///
/// Each dispatcher keeps a set of servers it believes idle. A server that
/// completes down to an empty queue notifies one uniformly chosen
/// dispatcher. Entries can go stale when another dispatcher fills the
/// server first.
#[derive(Debug, Clone)]
pub struct Jiq {
    servers: usize,
    dispatchers: usize,
    idle: Vec<Vec<usize>>,
    member: Vec<bool>,
}

impl Jiq {
    /// All servers start idle; server `i` is registered with dispatcher
    /// `i mod m`.
    pub fn new(servers: usize, dispatchers: usize) -> Self {
        let mut jiq = Jiq {
            servers,
            dispatchers,
            idle: vec![Vec::new(); dispatchers],
            member: vec![false; servers * dispatchers],
        };
        for i in 0..servers {
            jiq.insert(i % dispatchers, i);
        }
        jiq
    }

    pub fn idle_set(&self, dispatcher: usize) -> &[usize] {
        &self.idle[dispatcher]
    }

    pub fn clear_idle(&mut self, dispatcher: usize) {
        for i in self.idle[dispatcher].drain(..) {
            self.member[dispatcher * self.servers + i] = false;
        }
    }

    pub fn insert(&mut self, dispatcher: usize, server: usize) {
        let slot = &mut self.member[dispatcher * self.servers + server];
        if !*slot {
            *slot = true;
            self.idle[dispatcher].push(server);
        }
    }
}

impl Policy for Jiq {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Jiq
    }

    fn route(&mut self, j: usize, _jobs: u64, _true_queues: Option<&[u64]>, rng: &mut SimRng) -> Routed {
        let set = &mut self.idle[j];
        if set.is_empty() {
            return Routed::free(uniform_index(rng, self.servers));
        }
        let k = uniform_index(rng, set.len());
        let server = set.swap_remove(k);
        self.member[j * self.servers + server] = false;
        Routed::free(server)
    }

    fn server_update(
        &mut self,
        slot: u64,
        server: usize,
        completed: u64,
        queue_length: u64,
        rng: &mut SimRng,
        out: &mut Vec<UpdateMessage>,
    ) {
        if completed > 0 && queue_length == 0 {
            out.push(UpdateMessage {
                server,
                queue_length,
                dispatcher: uniform_index(rng, self.dispatchers),
                slot,
            });
        }
    }

    fn on_message(&mut self, msg: &UpdateMessage) {
        if msg.queue_length == 0 {
            self.insert(msg.dispatcher, msg.server);
        }
    }
}

/// Routes proportionally to mean service rates, ignoring all queue state.
#[derive(Debug, Clone)]
pub struct WeightedRandom {
    weights: WeightedIndex<f64>,
}

impl WeightedRandom {
    pub fn new(service_rates: &[f64]) -> Result<Self> {
        let weights = WeightedIndex::new(service_rates)
            .map_err(|e| Error::config(format!("weighted-random needs positive service rates: {e}")))?;
        Ok(WeightedRandom { weights })
    }
}

impl Policy for WeightedRandom {
    fn kind(&self) -> PolicyKind {
        PolicyKind::WeightedRandom
    }

    fn route(&mut self, _j: usize, _jobs: u64, _true_queues: Option<&[u64]>, rng: &mut SimRng) -> Routed {
        Routed::free(self.weights.sample(rng))
    }

    fn on_message(&mut self, _msg: &UpdateMessage) {}
}
