#![allow(dead_code)]

use std::collections::BTreeMap;

use bprr_core::model::{Affine, ClientSpec, Cluster, ModelSpec, Request, ServerSpec};

/// Model with the per-block cache size set directly.
pub fn unit_model(blocks: u32, block_bytes: f64, cache_bytes: f64) -> ModelSpec {
    ModelSpec {
        blocks,
        d_model: 1,
        dtype_bytes: 1,
        block_bytes,
        max_input_tokens: 16,
        max_output_tokens: 64,
        max_sequence_length: None,
        cache_bytes: Some(cache_bytes),
    }
}

pub fn server(id: &str, memory: f64, tau: f64) -> ServerSpec {
    ServerSpec {
        id: id.into(),
        memory,
        tau,
        tau_prefill: Affine::new(tau, 0.0),
    }
}

/// Cluster with clients `c0, c1, ...`; `rtts[c][j]` is the RTT from client
/// `c` to server `j`.
pub fn cluster(model: ModelSpec, servers: Vec<ServerSpec>, rtts: &[Vec<f64>]) -> Cluster {
    let clients = rtts
        .iter()
        .enumerate()
        .map(|(c, row)| ClientSpec {
            id: format!("c{c}"),
            rtt: servers
                .iter()
                .zip(row)
                .map(|(s, &t)| (s.id.clone(), t))
                .collect(),
            rtt_prefill: BTreeMap::new(),
        })
        .collect();
    Cluster::new(model, servers, clients).unwrap()
}

/// `n` requests at time 0 at maximum lengths, spread over clients
/// round-robin.
pub fn requests(n: usize, cluster: &Cluster) -> Vec<Request> {
    let model = cluster.model();
    (0..n)
        .map(|i| Request {
            id: i as u64,
            client: i % cluster.num_clients(),
            arrival: 0.0,
            input_len: model.max_input_tokens,
            output_len: model.max_output_tokens,
        })
        .collect()
}

/// The instance where the greedy placement is far from optimal: `L = 3`,
/// identical servers with `M = (L + 1) s_m`, `s_m = L s_c`, one client at
/// RTT `t`, per-block time `tau`.
pub fn greedy_gap_instance(servers: usize, t: f64, tau: f64) -> Cluster {
    let model = unit_model(3, 3.0, 1.0);
    let servers = (0..servers)
        .map(|j| server(&format!("s{j}"), 12.0, tau))
        .collect::<Vec<_>>();
    let rtt = vec![t; servers.len()];
    cluster(model, servers, &[rtt])
}
