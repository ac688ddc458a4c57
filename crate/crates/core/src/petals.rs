//! Baseline placement and routing modeled on the PETALS heuristics, plus
//! the two single-change variants used in ablations.
//!
//! The baseline reserves a fixed number of full-length caches per hosted
//! block regardless of load, visits servers in arrival order and puts each on
//! the window with the least hosted throughput. Routing is a shortest path
//! under decode hop times that ignores queueing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Cluster, Placement, Request, TokenCost};
use crate::placement::{
    amortized_order, block_counts_for, conservative_block_counts, place_sequentially, WindowRule,
};
use crate::routing::{outcome_for, RoutingOutcome, ServerState};
use crate::topology::{feasible_subgraph, Node};

/// Default number of full-length caches reserved per hosted block.
pub const DEFAULT_CACHE_SLOTS: u32 = 1;

/// Block counts under a fixed reservation of `cache_slots` caches per block.
pub fn petals_block_counts(cluster: &Cluster, cache_slots: u32) -> Vec<u32> {
    block_counts_for(cluster, f64::from(cache_slots))
}

/// Server ids in a seeded random arrival order.
pub fn random_arrival_order(servers: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..servers).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Baseline placement. The result may leave blocks uncovered; check
/// [`Placement::is_feasible`].
pub fn petals_place(
    cluster: &Cluster,
    arrival_order: &[usize],
    cache_slots: u32,
) -> Result<Placement> {
    check_order(cluster, arrival_order)?;
    let counts = petals_block_counts(cluster, cache_slots);
    Ok(place_sequentially(cluster, arrival_order, &counts, WindowRule::LeastThroughput).placement)
}

/// Baseline windows and counts, servers visited fastest-first.
pub fn optimized_order(cluster: &Cluster, cache_slots: u32) -> Placement {
    let counts = petals_block_counts(cluster, cache_slots);
    let order = amortized_order(cluster, &counts);
    place_sequentially(cluster, &order, &counts, WindowRule::LeastThroughput).placement
}

/// Baseline windows and arrival order with the conservative counts for
/// `target` concurrent requests.
pub fn optimized_number(
    cluster: &Cluster,
    arrival_order: &[usize],
    target: u64,
) -> Result<Placement> {
    check_order(cluster, arrival_order)?;
    let counts = conservative_block_counts(cluster, target)?;
    Ok(place_sequentially(cluster, arrival_order, &counts, WindowRule::LeastThroughput).placement)
}

fn check_order(cluster: &Cluster, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; cluster.num_servers()];
    for &j in order {
        if j >= seen.len() || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Contract(format!(
                "arrival order {order:?} is not a permutation of the servers"
            )));
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::Contract(format!(
            "arrival order {order:?} misses servers"
        )));
    }
    Ok(())
}

/// Shortest path under decode hop times, skipping only servers whose total
/// capacity is below the hop's demand. The returned outcome carries the
/// waits the request will actually incur on that route.
pub fn petals_route(
    cluster: &Cluster,
    placement: &Placement,
    states: &[ServerState],
    request: &Request,
    now: f64,
) -> Result<RoutingOutcome> {
    let client = request.client;
    let cache_bytes = cluster
        .model()
        .cache_bytes_for(request.input_len, request.output_len);
    let graph = feasible_subgraph(cluster, placement, client);
    let path = graph
        .shortest_path(|e| match e.to {
            Node::Server(j) => {
                let state = &states[j];
                (state.demand(e.blocks, cache_bytes) <= state.capacity)
                    .then(|| TokenCost::Decode.hop_time(cluster, client, j, e.blocks))
            }
            _ => Some(0.0),
        })
        .ok_or_else(|| Error::NoFeasiblePath(cluster.clients()[client].id.clone()))?;
    outcome_for(
        cluster,
        states,
        request,
        now,
        TokenCost::Decode,
        &path.edges,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::BlockRange;
    use crate::placement::cg_block_placement;
    use crate::routing::{initial_states, offline_route, CacheAccounting};

    fn mixed() -> Cluster {
        // two large fast servers and four small slow ones, L = 6
        let model = unit_model(6, 2.0, 1.0);
        let mut s = vec![server("big0", 40.0, 0.01), server("big1", 40.0, 0.01)];
        s.extend((0..4).map(|i| server(&format!("small{i}"), 12.0, 0.05)));
        cluster(model, s, &[&[0.05, 0.05, 0.1, 0.1, 0.1, 0.1]])
    }

    #[test]
    fn first_server_starts_at_block_one() {
        let c = mixed();
        let p = petals_place(&c, &[3, 0, 1, 2, 4, 5], 1).unwrap();
        assert_eq!(p.range(3).unwrap().first, 1);
    }

    #[test]
    fn fixed_reservation_gives_large_servers_more_blocks() {
        let c = mixed();
        let target = 5;
        let cg = cg_block_placement(&c, target).unwrap();
        let petals = petals_place(&c, &[0, 1, 2, 3, 4, 5], 1).unwrap();
        assert!(petals.count(0) > cg.placement().count(0));
        // the reservation does not depend on load
        assert_eq!(petals_block_counts(&c, 1), vec![6, 6, 4, 4, 4, 4]);
    }

    #[test]
    fn order_matters() {
        let c = mixed();
        let a = petals_place(&c, &random_arrival_order(6, 1), 1).unwrap();
        let b = petals_place(&c, &random_arrival_order(6, 2), 1).unwrap();
        assert_ne!(random_arrival_order(6, 1), random_arrival_order(6, 2));
        assert_ne!(a, b);
        assert_eq!(a, petals_place(&c, &random_arrival_order(6, 1), 1).unwrap());
    }

    #[test]
    fn bad_order_rejected() {
        let c = mixed();
        assert!(petals_place(&c, &[0, 0, 1, 2, 3, 4], 1).is_err());
        assert!(petals_place(&c, &[0, 1], 1).is_err());
    }

    #[test]
    fn cg_order_and_counts_reproduce_cg_when_tiling_is_exact() {
        // counts sum to L exactly, so both rules tile left to right
        let model = unit_model(6, 1.0, 1.0);
        let s = vec![
            server("a", 9.0, 0.01),
            server("b", 6.0, 0.02),
            server("c", 3.0, 0.03),
        ];
        let c = cluster(model, s, &[&[0.1, 0.1, 0.1]]);
        let plan = cg_block_placement(&c, 2).unwrap();
        assert_eq!(plan.counts.iter().sum::<u32>(), 6);
        let via_petals =
            place_sequentially(&c, &plan.order, &plan.counts, WindowRule::LeastThroughput)
                .placement;
        assert_eq!(&via_petals, plan.placement());
    }

    #[test]
    fn variants_change_one_input() {
        let c = mixed();
        let order = [5, 4, 3, 2, 1, 0];
        let number = optimized_number(&c, &order, 5).unwrap();
        let counts = conservative_block_counts(&c, 5).unwrap();
        for (j, &m) in counts.iter().enumerate() {
            assert_eq!(number.count(j), m);
        }
        let ord = optimized_order(&c, 1);
        for j in 0..6 {
            assert_eq!(ord.count(j), petals_block_counts(&c, 1)[j]);
        }
        // fastest server goes first, so it starts at block 1
        assert_eq!(ord.range(0).unwrap().first, 1);
    }

    #[test]
    fn petals_route_ignores_queueing() {
        let model = unit_model(2, 1.0, 1.0);
        let c = cluster(
            model,
            vec![server("fast", 4.0, 0.1), server("slow", 4.0, 0.5)],
            &[&[0.1, 0.1]],
        );
        let p = Placement::new(2, vec![Some(BlockRange::new(1, 2)); 2]).unwrap();
        let mut states = initial_states(&c, &p, CacheAccounting::Slots);
        let r = Request {
            id: 0,
            client: 0,
            arrival: 0.0,
            input_len: 1,
            output_len: 4,
        };
        let idle = petals_route(&c, &p, &states, &r, 0.0).unwrap();
        assert_eq!(idle.route, offline_route(&c, &p, 0).unwrap());
        states[0].admit(9, 0.0, 10.0, 2).unwrap();
        let busy = petals_route(&c, &p, &states, &r, 0.0).unwrap();
        assert_eq!(busy.route.servers(), vec![0]);
        assert_eq!(busy.wait_time, 10.0);

        let missing = Placement::new(2, vec![Some(BlockRange::new(1, 1)), None]).unwrap();
        let states = initial_states(&c, &missing, CacheAccounting::Slots);
        assert!(matches!(
            petals_route(&c, &missing, &states, &r, 0.0),
            Err(Error::NoFeasiblePath(_))
        ));
    }
}
