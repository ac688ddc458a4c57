//! Closed-form guarantees for the greedy placement: the per-token upper
//! bound, the per-client lower bound, their ratio, and the completion-time
//! bound used online.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, Hop, Request, RouteAssignment, TokenCost};
use crate::placement::{block_counts_for, PlacementPlan};
use crate::routing::RoutingOutcome;

/// Per-token upper bound of the greedy placement under decode hop times.
pub fn cg_upper_bound(cluster: &Cluster, plan: &PlacementPlan) -> f64 {
    cg_upper_bound_with(cluster, plan, TokenCost::Decode)
}

/// `sum_{k<=K} t~_k m_k - tau_K (sum_{k<=K} m_k - L)` over the covering
/// servers, with amortized times taken under `cost` and the worst client.
pub fn cg_upper_bound_with(cluster: &Cluster, plan: &PlacementPlan, cost: TokenCost) -> f64 {
    let covering = plan.covering_servers();
    let mut sum = 0.0;
    let mut blocks = 0u32;
    for &j in covering {
        let m = plan.counts[j];
        let amortized = cost.tau(cluster, j) + cost.max_rtt(cluster, j) / f64::from(m);
        sum += amortized * f64::from(m);
        blocks += m;
    }
    let last = *covering
        .last()
        .expect("a feasible plan covers with at least one server");
    sum - cost.tau(cluster, last) * f64::from(blocks - cluster.blocks())
}

/// The route whose worst-client cost the upper bound equals: the covering
/// servers in order, the last one processing only what is left.
pub fn worst_case_route(cluster: &Cluster, plan: &PlacementPlan, client: usize) -> RouteAssignment {
    let mut left = cluster.blocks();
    let hops = plan
        .covering_servers()
        .iter()
        .map(|&j| {
            let k = plan.counts[j].min(left);
            left -= k;
            Hop {
                server: j,
                blocks: k,
            }
        })
        .collect();
    RouteAssignment { client, hops }
}

/// Per-token lower bound for `client`: the fractional fill of `L` blocks by
/// servers sorted by `tau_j + t_cj / m_j`, where `m_j` is the largest count
/// that still leaves room for one cache per block.
pub fn lower_bound(cluster: &Cluster, client: usize) -> Result<f64> {
    let counts = block_counts_for(cluster, 1.0);
    let mut servers: Vec<(f64, u32)> = (0..cluster.num_servers())
        .filter(|&j| counts[j] > 0)
        .map(|j| {
            let m = counts[j];
            (
                cluster.server(j).tau + cluster.rtt(client, j) / f64::from(m),
                m,
            )
        })
        .collect();
    servers.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut left = cluster.blocks();
    let mut total = 0.0;
    for (amortized, m) in servers {
        let take = m.min(left);
        total += amortized * f64::from(take);
        left -= take;
        if left == 0 {
            return Ok(total);
        }
    }
    Err(Error::Infeasible(format!(
        "servers can hold at most {} of {} blocks with one cache each",
        cluster.blocks() - left,
        cluster.blocks()
    )))
}

/// Request-weighted average of the per-client lower bounds.
pub fn weighted_lower_bound(cluster: &Cluster, requests: &[Request]) -> Result<f64> {
    if requests.is_empty() {
        return Err(Error::Contract(
            "at least one request is needed to weight the lower bound".into(),
        ));
    }
    let mut per_client = vec![0usize; cluster.num_clients()];
    for r in requests {
        per_client[r.client] += 1;
    }
    let mut total = 0.0;
    for (c, &n) in per_client.iter().enumerate() {
        if n > 0 {
            total += n as f64 * lower_bound(cluster, c)?;
        }
    }
    Ok(total / requests.len() as f64)
}

/// Upper bound over the request-weighted lower bound.
pub fn approximation_ratio(
    cluster: &Cluster,
    plan: &PlacementPlan,
    requests: &[Request],
) -> Result<f64> {
    Ok(cg_upper_bound(cluster, plan) / weighted_lower_bound(cluster, requests)?)
}

/// The three bound figures reported together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub upper: f64,
    pub lower: f64,
    pub ratio: f64,
}

pub fn bound_summary(
    cluster: &Cluster,
    plan: &PlacementPlan,
    requests: &[Request],
) -> Result<BoundSummary> {
    let upper = cg_upper_bound(cluster, plan);
    let lower = weighted_lower_bound(cluster, requests)?;
    Ok(BoundSummary {
        upper,
        lower,
        ratio: upper / lower,
    })
}

/// Completion-time guarantee for a request: `l_out` times the per-token
/// bound while at most `target` sessions are active, the routed path cost
/// otherwise. `per_token_bound` must come from [`cg_upper_bound_with`] under
/// the cost the routing used.
pub fn online_completion_bound(
    per_token_bound: f64,
    outcome: &RoutingOutcome,
    output_len: u32,
    concurrent: u64,
    target: u64,
) -> f64 {
    if concurrent <= target {
        f64::from(output_len) * per_token_bound
    } else {
        outcome.path_cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::placement::cg_block_placement;

    const T: f64 = 0.1;
    const TAU: f64 = 0.02;

    fn fig5(servers: usize) -> Cluster {
        let model = unit_model(3, 3.0, 1.0);
        let s: Vec<_> = (0..servers)
            .map(|i| server(&format!("s{i}"), 12.0, TAU))
            .collect();
        cluster(model, s, &[&vec![T; servers]])
    }

    #[test]
    fn fig5_bounds() {
        let c = fig5(9);
        let plan = cg_block_placement(&c, 9).unwrap();
        let upper = cg_upper_bound(&c, &plan);
        assert!((upper - 3.0 * (T + TAU)).abs() < 1e-12);
        let lower = lower_bound(&c, 0).unwrap();
        assert!((lower - (T + 3.0 * TAU)).abs() < 1e-12);
        let reqs: Vec<_> = (0..9)
            .map(|i| Request {
                id: i,
                client: 0,
                arrival: 0.0,
                input_len: 1,
                output_len: 1,
            })
            .collect();
        let ratio = approximation_ratio(&c, &plan, &reqs).unwrap();
        assert!((ratio - 3.0 * (T + TAU) / (T + 3.0 * TAU)).abs() < 1e-12);
    }

    #[test]
    fn single_server_bounds_meet() {
        let model = unit_model(4, 1.0, 1.0);
        let c = cluster(model, vec![server("a", 8.0, 0.05)], &[&[0.2]]);
        let plan = cg_block_placement(&c, 1).unwrap();
        assert_eq!(plan.covering, 1);
        let upper = cg_upper_bound(&c, &plan);
        assert!((upper - (0.2 + 0.05 * 4.0)).abs() < 1e-12);
        assert!((lower_bound(&c, 0).unwrap() - upper).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_is_worst_case_route_cost() {
        let model = unit_model(5, 1.0, 1.0);
        let s = vec![
            server("a", 7.0, 0.01),
            server("b", 9.0, 0.03),
            server("c", 5.0, 0.02),
        ];
        let c = cluster(model, s, &[&[0.1, 0.3, 0.2], &[0.4, 0.1, 0.05]]);
        let plan = cg_block_placement(&c, 1).unwrap();
        let route = worst_case_route(&c, &plan, 0);
        assert_eq!(route.total_blocks(), 5);
        let worst: f64 = route
            .hops
            .iter()
            .map(|h| c.max_rtt(h.server) + c.server(h.server).tau * f64::from(h.blocks))
            .sum();
        assert!((worst - cg_upper_bound(&c, &plan)).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_infeasible() {
        let model = unit_model(5, 3.0, 1.0);
        let c = cluster(model, vec![server("a", 8.0, 0.1)], &[&[0.1]]);
        assert!(matches!(lower_bound(&c, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn online_bound_branches() {
        let outcome = RoutingOutcome {
            route: RouteAssignment {
                client: 0,
                hops: vec![],
            },
            wait_time: 1.0,
            path_cost: 42.0,
            completion_estimate: 40.0,
            start: 1.0,
            demands: vec![],
        };
        assert_eq!(online_completion_bound(0.5, &outcome, 128, 3, 3), 64.0);
        assert_eq!(online_completion_bound(0.5, &outcome, 128, 4, 3), 42.0);
    }
}
