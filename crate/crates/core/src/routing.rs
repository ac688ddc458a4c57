//! Request routing: offline shortest paths, per-server cache state, waiting
//! times and waiting-penalized online routing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, Placement, Request, RouteAssignment, TokenCost};
use crate::topology::{feasible_subgraph, CostedPath, Node, SubEdge};

/// Default cap on the number of enumerated paths for exact online routing.
pub const DEFAULT_PATH_BUDGET: usize = 1_000_000;

/// How cache capacity is counted on a server.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheAccounting {
    /// Slots of one full-length block cache; a hop of `k` blocks needs `k`.
    #[default]
    Slots,
    /// Bytes; a hop of `k` blocks needs `ceil(k * s_c(request))`.
    Bytes,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub request: u64,
    /// Absolute time at which the session releases its caches.
    pub end: f64,
    pub demand: u64,
}

/// Sessions holding cache on one server, sorted by end time (then id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub capacity: u64,
    pub accounting: CacheAccounting,
    sessions: Vec<Session>,
}

impl ServerState {
    pub fn new(capacity: u64, accounting: CacheAccounting) -> Self {
        Self {
            capacity,
            accounting,
            sessions: Vec::new(),
        }
    }

    /// Empty state for `server` under `placement`. Servers without blocks
    /// get capacity 0.
    pub fn for_server(
        cluster: &Cluster,
        placement: &Placement,
        server: usize,
        accounting: CacheAccounting,
    ) -> Self {
        let m = placement.count(server);
        if m == 0 {
            return Self::new(0, accounting);
        }
        let model = cluster.model();
        let free = cluster.server(server).memory - model.block_bytes * f64::from(m);
        let capacity = match accounting {
            CacheAccounting::Slots => (free / model.max_cache_bytes()).floor(),
            CacheAccounting::Bytes => free.floor(),
        };
        Self::new(capacity.max(0.0) as u64, accounting)
    }

    /// Cache units a hop of `blocks` needs for a request whose per-block
    /// cache is `cache_bytes`.
    pub fn demand(&self, blocks: u32, cache_bytes: f64) -> u64 {
        match self.accounting {
            CacheAccounting::Slots => u64::from(blocks),
            CacheAccounting::Bytes => (f64::from(blocks) * cache_bytes).ceil() as u64,
        }
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn committed(&self) -> u64 {
        self.sessions.iter().map(|s| s.demand).sum()
    }

    /// Earliest absolute time `>= now` at which `needed` units are free,
    /// assuming sessions release atomically at their end times.
    pub fn available_at(&self, now: f64, needed: u64) -> Result<f64> {
        if needed > self.capacity {
            return Err(Error::NeverAvailable {
                needed,
                capacity: self.capacity,
            });
        }
        let mut held = self.committed();
        if held + needed <= self.capacity {
            return Ok(now);
        }
        for s in &self.sessions {
            held -= s.demand;
            if held + needed <= self.capacity {
                return Ok(s.end.max(now));
            }
        }
        unreachable!("needed <= capacity is met once every session has ended")
    }

    /// Waiting time from `now` until `needed` units are free.
    pub fn waiting_time(&self, now: f64, needed: u64) -> Result<f64> {
        Ok(self.available_at(now, needed)? - now)
    }

    /// Adds a session holding `demand` units over `[start, end)`. Sessions
    /// already recorded are treated as holding their units until their end.
    pub fn admit(&mut self, request: u64, start: f64, end: f64, demand: u64) -> Result<()> {
        let overlapping: u64 = self
            .sessions
            .iter()
            .filter(|s| s.end > start)
            .map(|s| s.demand)
            .sum();
        if overlapping + demand > self.capacity {
            return Err(Error::CapacityViolated(format!(
                "request {request}: {overlapping} + {demand} units exceed capacity {}",
                self.capacity
            )));
        }
        let session = Session {
            request,
            end,
            demand,
        };
        let at = self
            .sessions
            .partition_point(|s| (s.end, s.request) <= (end, request));
        self.sessions.insert(at, session);
        Ok(())
    }

    /// Removes the session of `request`, returning it.
    pub fn release(&mut self, request: u64) -> Option<Session> {
        let at = self.sessions.iter().position(|s| s.request == request)?;
        Some(self.sessions.remove(at))
    }

    /// Drops sessions that ended at or before `now`.
    pub fn expire(&mut self, now: f64) {
        self.sessions.retain(|s| s.end > now);
    }
}

/// Fresh states for every server of the cluster.
pub fn initial_states(
    cluster: &Cluster,
    placement: &Placement,
    accounting: CacheAccounting,
) -> Vec<ServerState> {
    (0..cluster.num_servers())
        .map(|j| ServerState::for_server(cluster, placement, j, accounting))
        .collect()
}

/// A routing decision for one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub route: RouteAssignment,
    /// Largest waiting time over the hops.
    pub wait_time: f64,
    /// Sum over hops of waiting time plus `l_out` times the hop time.
    pub path_cost: f64,
    /// `wait_time` plus `l_out` times the summed hop times.
    pub completion_estimate: f64,
    /// Absolute time at which every hop has room.
    pub start: f64,
    /// Cache units held at each hop.
    pub demands: Vec<u64>,
}

/// Least-cost route under `cost`, without regard to load.
pub fn offline_route_with(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
    cost: TokenCost,
) -> Result<CostedPath> {
    let graph = feasible_subgraph(cluster, placement, client);
    graph
        .shortest_path(|e| Some(cost.edge_time(cluster, client, e.to, e.blocks)))
        .ok_or_else(|| Error::NoFeasiblePath(cluster.clients()[client].id.clone()))
}

/// Least-cost route under decode per-token hop times.
pub fn offline_route(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
) -> Result<RouteAssignment> {
    Ok(offline_route_with(cluster, placement, client, TokenCost::Decode)?.route)
}

fn request_cache_bytes(cluster: &Cluster, request: &Request) -> f64 {
    cluster
        .model()
        .cache_bytes_for(request.input_len, request.output_len)
}

/// Waiting-penalized shortest path: each edge into server `j` costs the
/// time until `j` can hold the hop's caches plus `l_out` times the hop time
/// under `cost`. Servers that can never hold the hop are avoided.
pub fn ws_route(
    cluster: &Cluster,
    placement: &Placement,
    states: &[ServerState],
    request: &Request,
    now: f64,
    cost: TokenCost,
) -> Result<RoutingOutcome> {
    let client = request.client;
    let l_out = f64::from(request.output_len);
    let cache_bytes = request_cache_bytes(cluster, request);
    let graph = feasible_subgraph(cluster, placement, client);
    let path = graph
        .shortest_path(|e| match e.to {
            Node::Server(j) => {
                let state = &states[j];
                let wait = state
                    .waiting_time(now, state.demand(e.blocks, cache_bytes))
                    .ok()?;
                Some(wait + l_out * cost.hop_time(cluster, client, j, e.blocks))
            }
            _ => Some(0.0),
        })
        .ok_or_else(|| Error::NoFeasiblePath(cluster.clients()[client].id.clone()))?;
    outcome_for(cluster, states, request, now, cost, &path.edges)
}

/// Evaluates a fixed route: per-hop availability, waits and both cost forms.
pub fn outcome_for(
    cluster: &Cluster,
    states: &[ServerState],
    request: &Request,
    now: f64,
    cost: TokenCost,
    edges: &[SubEdge],
) -> Result<RoutingOutcome> {
    let client = request.client;
    let l_out = f64::from(request.output_len);
    let cache_bytes = request_cache_bytes(cluster, request);
    let mut hops = Vec::new();
    let mut demands = Vec::new();
    let mut start = now;
    let mut path_cost = 0.0;
    let mut travel = 0.0;
    for e in edges {
        let Node::Server(j) = e.to else { continue };
        let state = &states[j];
        let demand = state.demand(e.blocks, cache_bytes);
        let available = state.available_at(now, demand)?;
        let hop = cost.hop_time(cluster, client, j, e.blocks);
        path_cost += (available - now) + l_out * hop;
        travel += hop;
        start = start.max(available);
        hops.push(crate::model::Hop {
            server: j,
            blocks: e.blocks,
        });
        demands.push(demand);
    }
    let wait_time = start - now;
    Ok(RoutingOutcome {
        route: RouteAssignment { client, hops },
        wait_time,
        path_cost,
        completion_estimate: wait_time + l_out * travel,
        start,
        demands,
    })
}

/// Records the session of `request` on every hop of `outcome`, holding its
/// caches over `[outcome.start, outcome.start + duration)`.
pub fn admit_session(
    states: &mut [ServerState],
    request: u64,
    outcome: &RoutingOutcome,
    duration: f64,
) -> Result<()> {
    let end = outcome.start + duration;
    for (i, (hop, &demand)) in outcome.route.hops.iter().zip(&outcome.demands).enumerate() {
        if let Err(e) = states[hop.server].admit(request, outcome.start, end, demand) {
            for undo in &outcome.route.hops[..i] {
                states[undo.server].release(request);
            }
            return Err(e);
        }
    }
    Ok(())
}

/// Individually optimal routing: over every feasible route, minimizes the
/// largest hop wait plus `l_out` times the summed hop times. Ties keep the
/// first route in depth-first order.
pub fn solve_online_exact(
    cluster: &Cluster,
    placement: &Placement,
    states: &[ServerState],
    request: &Request,
    now: f64,
    cost: TokenCost,
    budget: usize,
) -> Result<RoutingOutcome> {
    let graph = feasible_subgraph(cluster, placement, request.client);
    let mut best: Option<RoutingOutcome> = None;
    for edges in graph.paths(budget)? {
        let Ok(outcome) = outcome_for(cluster, states, request, now, cost, &edges) else {
            continue;
        };
        if best
            .as_ref()
            .is_none_or(|b| outcome.completion_estimate < b.completion_estimate)
        {
            best = Some(outcome);
        }
    }
    best.ok_or_else(|| Error::NoFeasiblePath(cluster.clients()[request.client].id.clone()))
}
