//! Exhaustive joint placement and routing for tiny instances.
//!
//! Every server takes one contiguous range (or none when it cannot store a
//! single block). For each placement that covers the model, requests are
//! assigned feasible routes by depth-first search with memory residuals,
//! pruned by the sum of unconstrained per-request minima.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockRange, Cluster, Placement, Request, RouteAssignment, TokenCost};
use crate::topology::feasible_subgraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactLimits {
    pub max_blocks: u32,
    pub max_servers: usize,
    pub max_requests: usize,
    pub max_paths_per_client: usize,
}

impl Default for ExactLimits {
    fn default() -> Self {
        Self {
            max_blocks: 5,
            max_servers: 4,
            max_requests: 5,
            max_paths_per_client: 100_000,
        }
    }
}

/// What the solver minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactObjective {
    /// Sum over requests of the decode per-token route time.
    PerToken,
    /// Sum over requests of the full generation time.
    TotalTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub placement: Placement,
    pub routes: Vec<RouteAssignment>,
    pub objective: f64,
    pub placements_visited: u64,
    pub assignments_visited: u64,
}

impl ExactSolution {
    pub fn mean_objective(&self) -> f64 {
        self.objective / self.routes.len().max(1) as f64
    }
}

/// Per-token objective when all requests share lengths, total time otherwise.
pub fn default_objective(requests: &[Request]) -> ExactObjective {
    match requests.first() {
        Some(first)
            if requests
                .iter()
                .all(|r| r.input_len == first.input_len && r.output_len == first.output_len) =>
        {
            ExactObjective::PerToken
        }
        _ => ExactObjective::TotalTime,
    }
}

pub fn solve_exact(
    cluster: &Cluster,
    requests: &[Request],
    limits: &ExactLimits,
) -> Result<ExactSolution> {
    solve_exact_with(cluster, requests, limits, default_objective(requests))
}

struct Candidate {
    cost: f64,
    /// Bytes of cache held per server (dense, zero where unused).
    usage: Vec<(usize, f64)>,
    route: RouteAssignment,
}

struct Search<'a> {
    groups: &'a [usize],
    candidates: Vec<Vec<Candidate>>,
    suffix_bound: Vec<f64>,
    residual: Vec<f64>,
    chosen: Vec<usize>,
    cost: f64,
    best: Option<(f64, Vec<usize>)>,
    visited: u64,
}

impl Search<'_> {
    fn run(&mut self, r: usize) {
        if r == self.groups.len() {
            self.visited += 1;
            if self.best.as_ref().is_none_or(|(b, _)| self.cost < *b) {
                self.best = Some((self.cost, self.chosen.clone()));
            }
            return;
        }
        // identical requests take routes in non-decreasing candidate order
        let from = if r > 0 && self.groups[r] == self.groups[r - 1] {
            self.chosen[r - 1]
        } else {
            0
        };
        for i in from..self.candidates[r].len() {
            let cand = &self.candidates[r][i];
            let lower = self.cost + cand.cost + self.suffix_bound[r + 1];
            if self.best.as_ref().is_some_and(|(b, _)| lower >= *b) {
                // candidates are sorted by cost, later ones cannot do better
                break;
            }
            if cand.usage.iter().any(|&(j, u)| u > self.residual[j]) {
                continue;
            }
            for &(j, u) in &cand.usage {
                self.residual[j] -= u;
            }
            self.cost += cand.cost;
            self.chosen.push(i);
            self.run(r + 1);
            self.chosen.pop();
            let cand = &self.candidates[r][i];
            self.cost -= cand.cost;
            for &(j, u) in &cand.usage {
                self.residual[j] += u;
            }
        }
    }
}

pub fn solve_exact_with(
    cluster: &Cluster,
    requests: &[Request],
    limits: &ExactLimits,
    objective: ExactObjective,
) -> Result<ExactSolution> {
    let model = cluster.model();
    if cluster.blocks() > limits.max_blocks
        || cluster.num_servers() > limits.max_servers
        || requests.len() > limits.max_requests
    {
        return Err(Error::BudgetExceeded(format!(
            "exact search is limited to L <= {}, {} servers and {} requests (got L = {}, {} servers, {} requests)",
            limits.max_blocks,
            limits.max_servers,
            limits.max_requests,
            cluster.blocks(),
            cluster.num_servers(),
            requests.len()
        )));
    }
    if requests.is_empty() {
        return Err(Error::Contract(
            "exact search needs at least one request".into(),
        ));
    }
    for r in requests {
        model.check_lengths(r.input_len, r.output_len)?;
        if r.client >= cluster.num_clients() {
            return Err(Error::Contract(format!(
                "request {} names unknown client {}",
                r.id, r.client
            )));
        }
    }

    // requests grouped so identical ones are adjacent
    let mut order: Vec<usize> = (0..requests.len()).collect();
    let key = |r: &Request| (r.client, r.input_len, r.output_len);
    order.sort_by_key(|&i| (key(&requests[i]), i));
    let mut groups = Vec::with_capacity(order.len());
    for (pos, &i) in order.iter().enumerate() {
        let g = if pos > 0 && key(&requests[order[pos - 1]]) == key(&requests[i]) {
            groups[pos - 1]
        } else {
            pos
        };
        groups.push(g);
    }

    let options: Vec<Vec<Option<BlockRange>>> = (0..cluster.num_servers())
        .map(|j| {
            let memory = cluster.server(j).memory;
            let mut opts = Vec::new();
            for first in 1..=cluster.blocks() {
                for count in 1..=(cluster.blocks() - first + 1) {
                    if model.block_bytes * f64::from(count) <= memory {
                        opts.push(Some(BlockRange::new(first, count)));
                    }
                }
            }
            if opts.is_empty() {
                opts.push(None);
            }
            opts
        })
        .collect();

    let mut index = vec![0usize; options.len()];
    let mut placements_visited = 0u64;
    let mut assignments_visited = 0u64;
    let mut best: Option<(f64, Placement, Vec<RouteAssignment>)> = None;

    loop {
        let ranges: Vec<_> = index.iter().zip(&options).map(|(&i, o)| o[i]).collect();
        let placement =
            Placement::new(cluster.blocks(), ranges).expect("ranges lie inside the model");
        if placement.is_feasible() {
            placements_visited += 1;
            if let Some((cost, routes, visited)) = assign(
                cluster,
                &placement,
                requests,
                &order,
                &groups,
                objective,
                limits,
                best.as_ref().map(|b| b.0),
            )? {
                assignments_visited += visited;
                if best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, placement, routes));
                }
            }
        }
        // advance the mixed-radix counter
        let mut s = options.len();
        loop {
            if s == 0 {
                let Some((objective, placement, routes)) = best else {
                    return Err(Error::Infeasible(
                        "no placement admits every request within memory".into(),
                    ));
                };
                return Ok(ExactSolution {
                    placement,
                    routes,
                    objective,
                    placements_visited,
                    assignments_visited,
                });
            }
            s -= 1;
            index[s] += 1;
            if index[s] < options[s].len() {
                break;
            }
            index[s] = 0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn assign(
    cluster: &Cluster,
    placement: &Placement,
    requests: &[Request],
    order: &[usize],
    groups: &[usize],
    objective: ExactObjective,
    limits: &ExactLimits,
    incumbent: Option<f64>,
) -> Result<Option<(f64, Vec<RouteAssignment>, u64)>> {
    let model = cluster.model();
    let mut paths_by_client: Vec<Option<Vec<RouteAssignment>>> = vec![None; cluster.num_clients()];
    let mut candidates = Vec::with_capacity(order.len());
    for &i in order {
        let r = &requests[i];
        if paths_by_client[r.client].is_none() {
            let graph = feasible_subgraph(cluster, placement, r.client);
            let paths = graph.paths(limits.max_paths_per_client)?;
            paths_by_client[r.client] = Some(paths.iter().map(|p| graph.route_of(p)).collect());
        }
        let cache = model.cache_bytes_for(r.input_len, r.output_len);
        let cost_of = |route: &RouteAssignment| match objective {
            ExactObjective::PerToken => TokenCost::Decode.route_time(cluster, route),
            ExactObjective::TotalTime => {
                crate::model::route_total_time(cluster, route, r.input_len, r.output_len)
            }
        };
        let mut list: Vec<Candidate> = paths_by_client[r.client]
            .as_ref()
            .expect("filled above")
            .iter()
            .map(|route| Candidate {
                cost: cost_of(route),
                usage: route
                    .hops
                    .iter()
                    .map(|h| (h.server, f64::from(h.blocks) * cache))
                    .collect(),
                route: route.clone(),
            })
            .collect();
        list.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        if list.is_empty() {
            return Ok(None);
        }
        candidates.push(list);
    }

    let mut suffix_bound = vec![0.0; order.len() + 1];
    for r in (0..order.len()).rev() {
        suffix_bound[r] = suffix_bound[r + 1] + candidates[r][0].cost;
    }
    if incumbent.is_some_and(|b| suffix_bound[0] >= b) {
        return Ok(None);
    }
    let residual = (0..cluster.num_servers())
        .map(|j| cluster.server(j).memory - model.block_bytes * f64::from(placement.count(j)))
        .collect();
    let mut search = Search {
        groups,
        candidates,
        suffix_bound,
        residual,
        chosen: Vec::with_capacity(order.len()),
        cost: 0.0,
        best: incumbent.map(|b| (b, Vec::new())),
        visited: 0,
    };
    search.run(0);
    let visited = search.visited;
    match search.best {
        Some((cost, chosen)) if !chosen.is_empty() => {
            let mut routes = vec![None; requests.len()];
            for (pos, &i) in order.iter().enumerate() {
                routes[i] = Some(search.candidates[pos][chosen[pos]].route.clone());
            }
            Ok(Some((
                cost,
                routes
                    .into_iter()
                    .map(|r| r.expect("every request routed"))
                    .collect(),
                visited,
            )))
        }
        _ => Ok(None),
    }
}
