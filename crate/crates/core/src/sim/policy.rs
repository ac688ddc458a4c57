use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{route_total_time, Cluster, Placement, Request, TokenCost};
use crate::petals::{
    optimized_number, optimized_order, petals_place, petals_route, random_arrival_order,
    DEFAULT_CACHE_SLOTS,
};
use crate::placement::{cg_block_placement, max_guaranteed_requests, tune_target, PlacementPlan};
use crate::routing::{
    offline_route_with, solve_online_exact, ws_route, RoutingOutcome, ServerState,
    DEFAULT_PATH_BUDGET,
};

use super::workload::WorkloadSpec;

/// Placement plus routing combination driven by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Greedy conservative placement with waiting-penalized routing.
    Proposed,
    /// Baseline placement and routing.
    Petals,
    /// Baseline with servers placed fastest-first.
    OptimizedOrder,
    /// Baseline with the conservative block counts.
    OptimizedNumber,
    /// Baseline placement with individually optimal routing.
    OptimizedRr,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Proposed,
        PolicyKind::Petals,
        PolicyKind::OptimizedOrder,
        PolicyKind::OptimizedNumber,
        PolicyKind::OptimizedRr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::Petals => "petals",
            PolicyKind::OptimizedOrder => "optimized-order",
            PolicyKind::OptimizedNumber => "optimized-number",
            PolicyKind::OptimizedRr => "optimized-rr",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Scenario(format!("unknown policy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Target concurrent requests; sized from the workload when absent.
    #[serde(default)]
    pub target: Option<u64>,
    /// Caches reserved per block by the baseline placement.
    #[serde(default = "default_cache_slots")]
    pub cache_slots: u32,
    /// Path enumeration cap for individually optimal routing.
    #[serde(default = "default_budget")]
    pub path_budget: usize,
}

fn default_cache_slots() -> u32 {
    DEFAULT_CACHE_SLOTS
}

fn default_budget() -> usize {
    DEFAULT_PATH_BUDGET
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            target: None,
            cache_slots: DEFAULT_CACHE_SLOTS,
            path_budget: DEFAULT_PATH_BUDGET,
        }
    }

    pub fn with_target(mut self, target: u64) -> Self {
        self.target = Some(target);
        self
    }
}

/// Sizes the target concurrency from the workload: the expected number of
/// arrivals during one session plus one standard deviation, iterated a few
/// times because the session length depends on the placement it sizes.
pub fn auto_target(cluster: &Cluster, workload: &WorkloadSpec) -> Result<u64> {
    let (input_len, output_len) = workload.lengths.max_lengths();
    let rate = workload.mean_rate();
    let clients: Vec<usize> = if workload.clients.is_empty() {
        (0..cluster.num_clients()).collect()
    } else {
        workload.clients.clone()
    };
    let mut target = max_guaranteed_requests(cluster).max(1);
    for _ in 0..8 {
        let plan = cg_block_placement(cluster, target)?;
        let mut duration: f64 = 0.0;
        for &c in &clients {
            let cost = TokenCost::Averaged {
                input_len,
                output_len,
            };
            let route = offline_route_with(cluster, plan.placement(), c, cost)?.route;
            duration = duration.max(route_total_time(cluster, &route, input_len, output_len));
        }
        let next = if rate.is_finite() {
            tune_target(rate, duration, cluster)
        } else {
            max_guaranteed_requests(cluster).max(1)
        };
        if next == target {
            break;
        }
        target = next;
    }
    Ok(target)
}

/// A policy with its placement computed for one run.
#[derive(Clone, Debug)]
pub struct PreparedPolicy {
    pub config: PolicyConfig,
    pub target: u64,
    pub placement: Placement,
    /// The greedy plan, for policies that use it.
    pub plan: Option<PlacementPlan>,
}

impl PreparedPolicy {
    /// Computes the placement; `seed` drives the baseline's arrival order.
    pub fn prepare(
        cluster: &Cluster,
        workload: &WorkloadSpec,
        config: &PolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        let target = match config.target {
            Some(0) => {
                return Err(Error::Contract(
                    "target concurrent requests must be at least 1".into(),
                ))
            }
            Some(t) => t,
            None => auto_target(cluster, workload)?,
        };
        let arrival = || random_arrival_order(cluster.num_servers(), seed);
        let (placement, plan) = match config.kind {
            PolicyKind::Proposed => {
                let plan = cg_block_placement(cluster, target)?;
                (plan.placement().clone(), Some(plan))
            }
            PolicyKind::Petals | PolicyKind::OptimizedRr => {
                (petals_place(cluster, &arrival(), config.cache_slots)?, None)
            }
            PolicyKind::OptimizedOrder => (optimized_order(cluster, config.cache_slots), None),
            PolicyKind::OptimizedNumber => (optimized_number(cluster, &arrival(), target)?, None),
        };
        Ok(Self {
            config: config.clone(),
            target,
            placement,
            plan,
        })
    }

    /// Chooses a route for `request` given the current server states.
    pub fn decide(
        &self,
        cluster: &Cluster,
        states: &[ServerState],
        request: &Request,
        now: f64,
    ) -> Result<RoutingOutcome> {
        let cost = TokenCost::Averaged {
            input_len: request.input_len,
            output_len: request.output_len,
        };
        match self.config.kind {
            PolicyKind::Proposed => ws_route(cluster, &self.placement, states, request, now, cost),
            PolicyKind::Petals | PolicyKind::OptimizedOrder | PolicyKind::OptimizedNumber => {
                petals_route(cluster, &self.placement, states, request, now)
            }
            PolicyKind::OptimizedRr => solve_online_exact(
                cluster,
                &self.placement,
                states,
                request,
                now,
                cost,
                self.config.path_budget,
            ),
        }
    }
}
