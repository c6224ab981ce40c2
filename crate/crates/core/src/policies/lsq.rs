//! Local-shortest-queue policies.
//!
//! Each dispatcher routes to the minimum of its own local view and adds
//! the jobs it sent to that entry. Views are otherwise only ever
//! overwritten with a server's true length, by a push sample or a pull
//! message. The variants differ only in when those overwrites happen,
//! which is captured by a [`PushRule`] and a [`PullRule`].

use rand::seq::index;
use rand::Rng;

use super::{pick_max, pick_min, Policy, PolicyKind, Routed, UpdateMessage};
use crate::processes::uniform_index;
use crate::rng::SimRng;

/// `m x n` matrix of local queue-length estimates, row per dispatcher.
#[derive(Debug, Clone)]
pub struct LocalViews {
    servers: usize,
    entries: Vec<u64>,
}

impl LocalViews {
    pub fn new(servers: usize, dispatchers: usize) -> Self {
        LocalViews {
            servers,
            entries: vec![0; servers * dispatchers],
        }
    }

    pub fn view(&self, dispatcher: usize) -> &[u64] {
        let start = dispatcher * self.servers;
        &self.entries[start..start + self.servers]
    }

    pub fn get(&self, dispatcher: usize, server: usize) -> u64 {
        self.entries[dispatcher * self.servers + server]
    }

    /// Routes to the local minimum and self-increments it by `jobs`.
    pub fn route(&mut self, dispatcher: usize, jobs: u64, rng: &mut SimRng) -> usize {
        let start = dispatcher * self.servers;
        let row = &mut self.entries[start..start + self.servers];
        let server = pick_min(row, rng);
        row[server] += jobs;
        server
    }

    pub fn overwrite(&mut self, dispatcher: usize, server: usize, queue_length: u64) {
        self.entries[dispatcher * self.servers + server] = queue_length;
    }
}

/// When a dispatcher samples servers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PushRule {
    None,
    /// `d` distinct uniform servers in every slot with arrivals.
    Sample { d: usize },
    /// One uniform server, sampled with probability `prob`, in every slot
    /// with arrivals.
    Bernoulli { prob: f64 },
}

/// When a server sends its length to a dispatcher.
#[derive(Debug, Clone, PartialEq)]
pub enum PullRule {
    None,
    /// On completion: to a uniform dispatcher, always if idle, else w.p. `p`.
    Update { p: f64 },
    /// On completion: `f*(p)` send probability, worst-approximation-first
    /// destination. `shadows[i * m + j]` is server `i`'s record of
    /// dispatcher `j`'s view of it.
    Smart { p: f64, shadows: Vec<u64>, dispatchers: usize, gaps: Vec<u64> },
    /// Server `i` updates dispatcher `(t + i) mod c_up` at slot `t`, when
    /// that index names a dispatcher.
    RoundRobin { c_up: u64 },
    /// Every server updates every dispatcher every slot.
    Full,
    /// On completion: to a uniform dispatcher w.p. `prob`.
    Bernoulli { prob: f64 },
    /// On becoming idle: to a uniform dispatcher.
    IdleOnly,
}

impl PullRule {
    pub fn smart(p: f64, servers: usize, dispatchers: usize) -> Self {
        PullRule::Smart {
            p,
            shadows: vec![0; servers * dispatchers],
            dispatchers,
            gaps: Vec::with_capacity(dispatchers),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lsq {
    kind: PolicyKind,
    servers: usize,
    dispatchers: usize,
    views: LocalViews,
    push: PushRule,
    pull: PullRule,
}

impl Lsq {
    pub fn new(kind: PolicyKind, servers: usize, dispatchers: usize, push: PushRule, pull: PullRule) -> Self {
        Lsq {
            kind,
            servers,
            dispatchers,
            views: LocalViews::new(servers, dispatchers),
            push,
            pull,
        }
    }

    pub fn views(&self) -> &LocalViews {
        &self.views
    }

    pub fn views_mut(&mut self) -> &mut LocalViews {
        &mut self.views
    }

    /// Server `i`'s record of dispatcher `j`'s view, for smart servers.
    pub fn shadow(&self, server: usize, dispatcher: usize) -> Option<u64> {
        match &self.pull {
            PullRule::Smart { shadows, dispatchers, .. } => Some(shadows[server * dispatchers + dispatcher]),
            _ => None,
        }
    }

    /// Sets both a view entry and the matching shadow; used to stage
    /// scenarios in tests.
    pub fn seed_view(&mut self, dispatcher: usize, server: usize, value: u64) {
        self.views.overwrite(dispatcher, server, value);
        if let PullRule::Smart { shadows, dispatchers, .. } = &mut self.pull {
            shadows[server * *dispatchers + dispatcher] = value;
        }
    }
}

impl Policy for Lsq {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn route(&mut self, j: usize, jobs: u64, _true_queues: Option<&[u64]>, rng: &mut SimRng) -> Routed {
        let server = self.views.route(j, jobs, rng);
        if let PullRule::Smart { shadows, dispatchers, .. } = &mut self.pull {
            shadows[server * *dispatchers + j] += jobs;
        }
        Routed::free(server)
    }

    fn push_targets(&mut self, _j: usize, jobs: u64, rng: &mut SimRng, out: &mut Vec<usize>) {
        if jobs == 0 {
            return;
        }
        match self.push {
            PushRule::None => {}
            PushRule::Sample { d } => out.extend(index::sample(rng, self.servers, d).iter()),
            PushRule::Bernoulli { prob } => {
                let server = uniform_index(rng, self.servers);
                if prob >= 1.0 || rng.random_bool(prob) {
                    out.push(server);
                }
            }
        }
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
        let m = self.dispatchers;
        let msg = |dispatcher| UpdateMessage {
            server,
            queue_length,
            dispatcher,
            slot,
        };
        match &mut self.pull {
            PullRule::None => {}
            PullRule::Update { p } => {
                if completed == 0 {
                    return;
                }
                let j = uniform_index(rng, m);
                if queue_length == 0 || *p >= 1.0 || rng.random_bool(*p) {
                    out.push(msg(j));
                }
            }
            PullRule::Smart { p, shadows, dispatchers, gaps } => {
                if completed == 0 {
                    return;
                }
                let row = &mut shadows[server * *dispatchers..(server + 1) * *dispatchers];
                gaps.clear();
                gaps.extend(row.iter().map(|&v| v.abs_diff(queue_length)));
                let worst = *gaps.iter().max().expect("at least one dispatcher");
                let send = worst >= queue_length || *p >= 1.0 || rng.random_bool(*p);
                if send {
                    let j = pick_max(gaps, rng);
                    row[j] = queue_length;
                    out.push(msg(j));
                }
            }
            PullRule::RoundRobin { c_up } => {
                let j = (slot + server as u64) % *c_up;
                if (j as usize) < m {
                    out.push(msg(j as usize));
                }
            }
            PullRule::Full => out.extend((0..m).map(msg)),
            PullRule::Bernoulli { prob } => {
                if completed == 0 {
                    return;
                }
                let j = uniform_index(rng, m);
                if *prob >= 1.0 || rng.random_bool(*prob) {
                    out.push(msg(j));
                }
            }
            PullRule::IdleOnly => {
                if completed > 0 && queue_length == 0 {
                    out.push(msg(uniform_index(rng, m)));
                }
            }
        }
    }

    fn on_message(&mut self, msg: &UpdateMessage) {
        self.views.overwrite(msg.dispatcher, msg.server, msg.queue_length);
    }

    fn local_view(&self, dispatcher: usize) -> Option<&[u64]> {
        Some(self.views.view(dispatcher))
    }

    fn check_consistency(&self) -> Result<(), String> {
        if let PullRule::Smart { shadows, dispatchers, .. } = &self.pull {
            for i in 0..self.servers {
                for j in 0..*dispatchers {
                    let shadow = shadows[i * dispatchers + j];
                    let view = self.views.get(j, i);
                    if shadow != view {
                        return Err(format!(
                            "server {i} shadows dispatcher {j} as {shadow}, view is {view}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
