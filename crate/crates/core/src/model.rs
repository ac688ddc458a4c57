//! Domain types and the closed-form time and memory models.
//!
//! Times are seconds (`f64`), memory is bytes. Servers and clients are
//! addressed by their position in the [`Cluster`]; string ids are only used
//! at the serialization boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{self, Node};

/// `intercept + slope * x`, used for input-length dependent prefill costs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    #[serde(default)]
    pub slope: f64,
}

impl Affine {
    pub const fn new(intercept: f64, slope: f64) -> Self {
        Self { intercept, slope }
    }

    pub const fn constant(value: f64) -> Self {
        Self {
            intercept: value,
            slope: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    fn is_valid(&self) -> bool {
        self.intercept.is_finite()
            && self.slope.is_finite()
            && self.intercept >= 0.0
            && self.slope >= 0.0
    }
}

/// The served LLM: block count, per-block parameter size and the attention
/// cache size parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Number of transformer blocks `L`.
    pub blocks: u32,
    pub d_model: u64,
    pub dtype_bytes: u64,
    /// Parameter bytes of one block (`s_m`).
    pub block_bytes: f64,
    pub max_input_tokens: u32,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sequence_length: Option<u32>,
    /// Overrides the derived per-block cache size of a maximum-length
    /// request. Per-request sizes scale with the token count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_bytes: Option<f64>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidModel(msg.to_string()));
        if self.blocks == 0 {
            return bad("block count must be at least 1");
        }
        if self.d_model == 0 || self.dtype_bytes == 0 {
            return bad("d_model and dtype_bytes must be positive");
        }
        if !(self.block_bytes.is_finite() && self.block_bytes > 0.0) {
            return bad("block_bytes must be positive");
        }
        if self.max_input_tokens == 0 || self.max_output_tokens == 0 {
            return bad("maximum input and output lengths must be positive");
        }
        if let Some(limit) = self.max_sequence_length {
            if self.max_input_tokens + self.max_output_tokens > limit {
                return Err(Error::InvalidModel(format!(
                    "max input + output tokens ({}) exceeds max sequence length {limit}",
                    self.max_input_tokens + self.max_output_tokens
                )));
            }
        }
        if let Some(c) = self.cache_bytes {
            if !(c.is_finite() && c > 0.0) {
                return bad("cache_bytes override must be positive");
            }
        }
        Ok(())
    }

    /// Cache bytes per block of a maximum-length request (`s_c`).
    pub fn max_cache_bytes(&self) -> f64 {
        self.cache_bytes_for(self.max_input_tokens, self.max_output_tokens)
    }

    /// Per-block cache bytes of a request with the given lengths.
    pub fn cache_bytes_for(&self, input_len: u32, output_len: u32) -> f64 {
        let tokens = f64::from(input_len) + f64::from(output_len);
        match self.cache_bytes {
            Some(max) => {
                let max_tokens =
                    f64::from(self.max_input_tokens) + f64::from(self.max_output_tokens);
                max * tokens / max_tokens
            }
            None => 2.0 * self.d_model as f64 * tokens * self.dtype_bytes as f64,
        }
    }

    pub fn check_lengths(&self, input_len: u32, output_len: u32) -> Result<()> {
        if input_len == 0 || output_len == 0 {
            return Err(Error::Contract(format!(
                "input and output lengths must be at least 1 (got {input_len}, {output_len})"
            )));
        }
        if input_len > self.max_input_tokens {
            return Err(Error::Contract(format!(
                "input length {input_len} exceeds maximum {}",
                self.max_input_tokens
            )));
        }
        if output_len > self.max_output_tokens {
            return Err(Error::Contract(format!(
                "output length {output_len} exceeds maximum {}",
                self.max_output_tokens
            )));
        }
        Ok(())
    }
}

/// Attention cache bytes per block for one request:
/// `2 * d_model * (l_in + l_out) * dtype_bytes`.
pub fn cache_size(model: &ModelSpec, input_len: u32, output_len: u32) -> Result<f64> {
    if input_len == 0 || output_len == 0 {
        return Err(Error::Contract(format!(
            "cache size needs positive lengths (got {input_len}, {output_len})"
        )));
    }
    Ok(model.cache_bytes_for(input_len, output_len))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: String,
    /// Effective GPU memory `M_j` in bytes.
    #[serde(rename = "memory_bytes")]
    pub memory: f64,
    /// Decoding time per token per block.
    pub tau: f64,
    /// Prefill time per block as a function of input length.
    pub tau_prefill: Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: String,
    /// Per-token RTT to each server, by server id.
    pub rtt: BTreeMap<String, f64>,
    /// Prefill RTT as a function of input length. Servers missing here fall
    /// back to the constant per-token RTT.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rtt_prefill: BTreeMap<String, Affine>,
}

/// Wire form of a [`Cluster`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterDoc {
    pub model: ModelSpec,
    pub servers: Vec<ServerSpec>,
    pub clients: Vec<ClientSpec>,
    /// Server pairs that may not be adjacent on a chain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forbidden_links: Vec<(String, String)>,
}

/// Validated cluster with dense RTT tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClusterDoc", into = "ClusterDoc")]
pub struct Cluster {
    model: ModelSpec,
    servers: Vec<ServerSpec>,
    clients: Vec<ClientSpec>,
    forbidden: BTreeSet<(usize, usize)>,
    rtt: Vec<Vec<f64>>,
    rtt_prefill: Vec<Vec<Affine>>,
}

impl TryFrom<ClusterDoc> for Cluster {
    type Error = Error;

    fn try_from(doc: ClusterDoc) -> Result<Self> {
        let mut cluster = Cluster::new(doc.model, doc.servers, doc.clients)?;
        for (a, b) in &doc.forbidden_links {
            let i = cluster.server_index(a)?;
            let j = cluster.server_index(b)?;
            cluster.forbidden.insert((i, j));
        }
        Ok(cluster)
    }
}

impl From<Cluster> for ClusterDoc {
    fn from(c: Cluster) -> Self {
        let forbidden_links = c
            .forbidden
            .iter()
            .map(|&(i, j)| (c.servers[i].id.clone(), c.servers[j].id.clone()))
            .collect();
        ClusterDoc {
            model: c.model,
            servers: c.servers,
            clients: c.clients,
            forbidden_links,
        }
    }
}

impl Cluster {
    pub fn new(
        model: ModelSpec,
        servers: Vec<ServerSpec>,
        clients: Vec<ClientSpec>,
    ) -> Result<Self> {
        model.validate()?;
        let invalid = |msg: String| Err(Error::InvalidCluster(msg));

        let mut index = HashMap::new();
        let min_memory = model.block_bytes + model.max_cache_bytes();
        for (j, s) in servers.iter().enumerate() {
            if index.insert(s.id.as_str(), j).is_some() {
                return invalid(format!("duplicate server id `{}`", s.id));
            }
            if !(s.tau.is_finite() && s.tau > 0.0) {
                return invalid(format!("server `{}`: tau must be positive", s.id));
            }
            if !s.tau_prefill.is_valid() {
                return invalid(format!(
                    "server `{}`: tau_prefill must be non-negative",
                    s.id
                ));
            }
            if !(s.memory.is_finite() && s.memory >= min_memory) {
                return invalid(format!(
                    "server `{}`: memory {} cannot hold one block plus one cache ({min_memory})",
                    s.id, s.memory
                ));
            }
        }

        let mut seen = BTreeSet::new();
        let mut rtt = Vec::with_capacity(clients.len());
        let mut rtt_prefill = Vec::with_capacity(clients.len());
        for c in &clients {
            if !seen.insert(c.id.as_str()) {
                return invalid(format!("duplicate client id `{}`", c.id));
            }
            for key in c.rtt.keys().chain(c.rtt_prefill.keys()) {
                if !index.contains_key(key.as_str()) {
                    return invalid(format!(
                        "client `{}` references unknown server `{key}`",
                        c.id
                    ));
                }
            }
            let mut row = Vec::with_capacity(servers.len());
            let mut prefill_row = Vec::with_capacity(servers.len());
            for s in &servers {
                let Some(&t) = c.rtt.get(&s.id) else {
                    return invalid(format!(
                        "client `{}` has no rtt entry for server `{}`",
                        c.id, s.id
                    ));
                };
                if !(t.is_finite() && t > 0.0) {
                    return invalid(format!("rtt ({}, {}) must be positive", c.id, s.id));
                }
                let p = c
                    .rtt_prefill
                    .get(&s.id)
                    .copied()
                    .unwrap_or(Affine::constant(t));
                if !p.is_valid() {
                    return invalid(format!(
                        "rtt_prefill ({}, {}) must be non-negative",
                        c.id, s.id
                    ));
                }
                row.push(t);
                prefill_row.push(p);
            }
            rtt.push(row);
            rtt_prefill.push(prefill_row);
        }

        Ok(Self {
            model,
            servers,
            clients,
            forbidden: BTreeSet::new(),
            rtt,
            rtt_prefill,
        })
    }

    /// Forbids the directed server pair `(from, to)` from being adjacent on a chain.
    pub fn forbid_link(&mut self, from: usize, to: usize) {
        self.forbidden.insert((from, to));
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn blocks(&self) -> u32 {
        self.model.blocks
    }

    pub fn servers(&self) -> &[ServerSpec] {
        &self.servers
    }

    pub fn server(&self, j: usize) -> &ServerSpec {
        &self.servers[j]
    }

    pub fn clients(&self) -> &[ClientSpec] {
        &self.clients
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn server_index(&self, id: &str) -> Result<usize> {
        self.servers
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::InvalidCluster(format!("unknown server `{id}`")))
    }

    pub fn client_index(&self, id: &str) -> Result<usize> {
        self.clients
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::InvalidCluster(format!("unknown client `{id}`")))
    }

    /// Per-token RTT `t_cj`.
    pub fn rtt(&self, client: usize, server: usize) -> f64 {
        self.rtt[client][server]
    }

    pub fn rtt_prefill(&self, client: usize, server: usize) -> Affine {
        self.rtt_prefill[client][server]
    }

    /// `t_*j`: the largest per-token RTT of any client to server `j`.
    pub fn max_rtt(&self, server: usize) -> f64 {
        self.rtt.iter().map(|row| row[server]).fold(0.0, f64::max)
    }

    pub fn link_allowed(&self, from: usize, to: usize) -> bool {
        from != to && !self.forbidden.contains(&(from, to))
    }

    pub fn forbidden_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.forbidden.iter().copied()
    }

    pub fn to_doc(&self) -> ClusterDoc {
        self.clone().into()
    }
}

/// Contiguous block range hosted by a server: blocks `first ..= first + count - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRange {
    #[serde(rename = "a")]
    pub first: u32,
    #[serde(rename = "m")]
    pub count: u32,
}

impl BlockRange {
    pub const fn new(first: u32, count: u32) -> Self {
        Self { first, count }
    }

    /// `a + m`, the first block index after this range.
    pub const fn end(&self) -> u32 {
        self.first + self.count
    }

    pub const fn last(&self) -> u32 {
        self.first + self.count - 1
    }

    pub const fn contains(&self, block: u32) -> bool {
        block >= self.first && block < self.end()
    }
}

/// Per-server block ranges. `None` marks a server that hosts nothing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPlacement")]
pub struct Placement {
    blocks: u32,
    ranges: Vec<Option<BlockRange>>,
}

#[derive(Deserialize)]
struct RawPlacement {
    blocks: u32,
    ranges: Vec<Option<BlockRange>>,
}

impl TryFrom<RawPlacement> for Placement {
    type Error = Error;

    fn try_from(raw: RawPlacement) -> Result<Self> {
        Placement::new(raw.blocks, raw.ranges)
    }
}

impl Placement {
    pub fn new(blocks: u32, ranges: Vec<Option<BlockRange>>) -> Result<Self> {
        for (j, r) in ranges.iter().enumerate() {
            if let Some(r) = r {
                if r.first == 0 || r.count == 0 || r.last() > blocks {
                    return Err(Error::Contract(format!(
                        "server {j}: range (a={}, m={}) outside [1, {blocks}]",
                        r.first, r.count
                    )));
                }
            }
        }
        Ok(Self { blocks, ranges })
    }

    pub fn empty(blocks: u32, servers: usize) -> Self {
        Self {
            blocks,
            ranges: vec![None; servers],
        }
    }

    pub fn blocks(&self) -> u32 {
        self.blocks
    }

    pub fn ranges(&self) -> &[Option<BlockRange>] {
        &self.ranges
    }

    pub fn range(&self, server: usize) -> Option<BlockRange> {
        self.ranges.get(server).copied().flatten()
    }

    pub fn count(&self, server: usize) -> u32 {
        self.range(server).map_or(0, |r| r.count)
    }

    pub fn num_servers(&self) -> usize {
        self.ranges.len()
    }

    pub fn hosting_count(&self, block: u32) -> usize {
        self.ranges
            .iter()
            .flatten()
            .filter(|r| r.contains(block))
            .count()
    }

    pub fn uncovered_blocks(&self) -> Vec<u32> {
        (1..=self.blocks)
            .filter(|&b| self.hosting_count(b) == 0)
            .collect()
    }

    /// Every block is hosted by at least one server.
    pub fn is_feasible(&self) -> bool {
        (1..=self.blocks).all(|b| self.hosting_count(b) > 0)
    }

    pub fn to_doc(&self, cluster: &Cluster) -> PlacementDoc {
        PlacementDoc {
            blocks: self.blocks,
            servers: self
                .ranges
                .iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    r.map(|r| PlacedRange {
                        server: cluster.server(j).id.clone(),
                        range: r,
                    })
                })
                .collect(),
        }
    }

    pub fn from_doc(cluster: &Cluster, doc: &PlacementDoc) -> Result<Self> {
        if doc.blocks != cluster.blocks() {
            return Err(Error::Scenario(format!(
                "placement is for {} blocks, model has {}",
                doc.blocks,
                cluster.blocks()
            )));
        }
        let mut ranges = vec![None; cluster.num_servers()];
        for p in &doc.servers {
            let j = cluster.server_index(&p.server)?;
            if ranges[j].is_some() {
                return Err(Error::Scenario(format!(
                    "server `{}` placed twice",
                    p.server
                )));
            }
            ranges[j] = Some(p.range);
        }
        Placement::new(doc.blocks, ranges)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedRange {
    pub server: String,
    #[serde(flatten)]
    pub range: BlockRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementDoc {
    pub blocks: u32,
    pub servers: Vec<PlacedRange>,
}

/// One inference request (session).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub client: usize,
    pub arrival: f64,
    pub input_len: u32,
    pub output_len: u32,
}

/// A server on a route and the number of blocks it processes for the request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub server: usize,
    pub blocks: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RouteAssignment {
    pub client: usize,
    pub hops: Vec<Hop>,
}

impl RouteAssignment {
    /// Derives per-hop block counts for `chain` under `placement`, checking
    /// every edge including the entry and exit.
    pub fn from_chain(placement: &Placement, client: usize, chain: &[usize]) -> Result<Self> {
        let mut prev = Node::Source(client);
        let mut hops = Vec::with_capacity(chain.len());
        for &j in chain {
            let next = Node::Server(j);
            let blocks = topology::hop_blocks(placement, prev, next)
                .ok_or_else(|| infeasible_edge(prev, next))?;
            hops.push(Hop { server: j, blocks });
            prev = next;
        }
        let sink = Node::Sink(client);
        if topology::hop_blocks(placement, prev, sink).is_none() {
            return Err(infeasible_edge(prev, sink));
        }
        Ok(Self { client, hops })
    }

    pub fn servers(&self) -> Vec<usize> {
        self.hops.iter().map(|h| h.server).collect()
    }

    pub fn total_blocks(&self) -> u32 {
        self.hops.iter().map(|h| h.blocks).sum()
    }

    /// Hops paired with their predecessor node.
    pub fn edges(&self) -> impl Iterator<Item = (Node, Hop)> + '_ {
        let first = std::iter::once(Node::Source(self.client));
        let rest = self.hops.iter().map(|h| Node::Server(h.server));
        first.chain(rest).zip(self.hops.iter().copied())
    }
}

fn infeasible_edge(from: Node, to: Node) -> Error {
    Error::InfeasibleEdge {
        from: from.to_string(),
        to: to.to_string(),
    }
}

/// Which per-hop time an edge is charged: decode per-token time, first-token
/// time, or the time averaged over all output tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenCost {
    Decode,
    Prefill { input_len: u32 },
    Averaged { input_len: u32, output_len: u32 },
}

impl TokenCost {
    /// Fixed (block-independent) part of the hop time.
    pub fn rtt(&self, cluster: &Cluster, client: usize, server: usize) -> f64 {
        let t = cluster.rtt(client, server);
        match *self {
            TokenCost::Decode => t,
            TokenCost::Prefill { input_len } => cluster
                .rtt_prefill(client, server)
                .eval(f64::from(input_len)),
            TokenCost::Averaged {
                input_len,
                output_len,
            } => {
                let first = cluster
                    .rtt_prefill(client, server)
                    .eval(f64::from(input_len));
                blend(first, t, output_len)
            }
        }
    }

    /// Per-block part of the hop time.
    pub fn tau(&self, cluster: &Cluster, server: usize) -> f64 {
        let s = cluster.server(server);
        match *self {
            TokenCost::Decode => s.tau,
            TokenCost::Prefill { input_len } => s.tau_prefill.eval(f64::from(input_len)),
            TokenCost::Averaged {
                input_len,
                output_len,
            } => blend(s.tau_prefill.eval(f64::from(input_len)), s.tau, output_len),
        }
    }

    pub fn max_rtt(&self, cluster: &Cluster, server: usize) -> f64 {
        (0..cluster.num_clients())
            .map(|c| self.rtt(cluster, c, server))
            .fold(0.0, f64::max)
    }

    pub fn hop_time(&self, cluster: &Cluster, client: usize, server: usize, blocks: u32) -> f64 {
        self.rtt(cluster, client, server) + self.tau(cluster, server) * f64::from(blocks)
    }

    /// Cost of a hop into `to`; zero for the D-client.
    pub fn edge_time(&self, cluster: &Cluster, client: usize, to: Node, blocks: u32) -> f64 {
        match to {
            Node::Server(j) => self.hop_time(cluster, client, j, blocks),
            _ => 0.0,
        }
    }

    pub fn route_time(&self, cluster: &Cluster, route: &RouteAssignment) -> f64 {
        route
            .hops
            .iter()
            .map(|h| self.hop_time(cluster, route.client, h.server, h.blocks))
            .sum()
    }
}

fn blend(first: f64, rest: f64, output_len: u32) -> f64 {
    let l = f64::from(output_len);
    first / l + (l - 1.0) / l * rest
}

fn hop_between(placement: &Placement, prev: Node, server: usize) -> Result<u32> {
    let to = Node::Server(server);
    topology::hop_blocks(placement, prev, to).ok_or_else(|| infeasible_edge(prev, to))
}

/// Decode per-token time at `server` when the request arrives from `prev`:
/// `t_cj + tau_j * (a_j + m_j - a_i - m_i)`.
pub fn per_token_time(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
    prev: Node,
    server: usize,
) -> Result<f64> {
    let k = hop_between(placement, prev, server)?;
    Ok(TokenCost::Decode.hop_time(cluster, client, server, k))
}

/// First-token time at `server` for an input of `input_len` tokens.
pub fn per_token_time_first(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
    prev: Node,
    server: usize,
    input_len: u32,
) -> Result<f64> {
    if input_len == 0 || input_len > cluster.model().max_input_tokens {
        return Err(Error::Contract(format!(
            "input length {input_len} outside [1, {}]",
            cluster.model().max_input_tokens
        )));
    }
    let k = hop_between(placement, prev, server)?;
    Ok(TokenCost::Prefill { input_len }.hop_time(cluster, client, server, k))
}

/// Per-hop time averaged over all `output_len` tokens (first token included).
pub fn avg_per_token_time(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
    prev: Node,
    server: usize,
    input_len: u32,
    output_len: u32,
) -> Result<f64> {
    cluster.model().check_lengths(input_len, output_len)?;
    let k = hop_between(placement, prev, server)?;
    Ok(TokenCost::Averaged {
        input_len,
        output_len,
    }
    .hop_time(cluster, client, server, k))
}

/// Total time to generate `output_len` tokens along `chain`: the first-token
/// hop times plus `output_len - 1` rounds of decode hop times.
pub fn total_request_time(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
    chain: &[usize],
    input_len: u32,
    output_len: u32,
) -> Result<f64> {
    cluster.model().check_lengths(input_len, output_len)?;
    let route = RouteAssignment::from_chain(placement, client, chain)?;
    Ok(route_total_time(cluster, &route, input_len, output_len))
}

pub(crate) fn route_total_time(
    cluster: &Cluster,
    route: &RouteAssignment,
    input_len: u32,
    output_len: u32,
) -> f64 {
    let first = TokenCost::Prefill { input_len }.route_time(cluster, route);
    let rest = TokenCost::Decode.route_time(cluster, route);
    first + f64::from(output_len - 1) * rest
}

/// Memory in use at `server`: `s_m * m_j + sum_r k_r * s_c_r`.
pub fn server_memory_usage(
    model: &ModelSpec,
    placement: &Placement,
    server: usize,
    sessions: &[(u32, f64)],
) -> f64 {
    let blocks = placement.count(server);
    model.block_bytes * f64::from(blocks)
        + sessions
            .iter()
            .map(|&(k, sc)| f64::from(k) * sc)
            .sum::<f64>()
}

/// Amortized per-block time `tau_j + t_*j / m`.
pub fn amortized_time(cluster: &Cluster, server: usize, blocks: u32) -> f64 {
    amortized_time_with(cluster, server, blocks, TokenCost::Decode)
}

pub fn amortized_time_with(cluster: &Cluster, server: usize, blocks: u32, cost: TokenCost) -> f64 {
    cost.tau(cluster, server) + cost.max_rtt(cluster, server) / f64::from(blocks)
}

/// Number of full-chain sessions a server can cache after storing `blocks`
/// blocks: `floor((M_j - s_m m) / (s_c m))`.
pub fn server_capacity(model: &ModelSpec, server: &ServerSpec, blocks: u32) -> Result<u64> {
    let m = f64::from(blocks);
    let stored = model.block_bytes * m;
    if blocks == 0 || stored > server.memory {
        return Err(Error::Contract(format!(
            "server `{}` cannot store {blocks} blocks ({stored} > {})",
            server.id, server.memory
        )));
    }
    Ok(((server.memory - stored) / (model.max_cache_bytes() * m)).floor() as u64)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A model whose cache size is set directly, for unit-scale instances.
    pub fn unit_model(blocks: u32, block_bytes: f64, cache_bytes: f64) -> ModelSpec {
        ModelSpec {
            blocks,
            d_model: 1,
            dtype_bytes: 1,
            block_bytes,
            max_input_tokens: 32,
            max_output_tokens: 128,
            max_sequence_length: None,
            cache_bytes: Some(cache_bytes),
        }
    }

    pub fn server(id: &str, memory: f64, tau: f64) -> ServerSpec {
        ServerSpec {
            id: id.into(),
            memory,
            tau,
            tau_prefill: Affine::constant(tau),
        }
    }

    pub fn client(id: &str, servers: &[ServerSpec], rtt: &[f64]) -> ClientSpec {
        ClientSpec {
            id: id.into(),
            rtt: servers
                .iter()
                .zip(rtt)
                .map(|(s, &t)| (s.id.clone(), t))
                .collect(),
            rtt_prefill: BTreeMap::new(),
        }
    }

    pub fn cluster(model: ModelSpec, servers: Vec<ServerSpec>, rtts: &[&[f64]]) -> Cluster {
        let clients = rtts
            .iter()
            .enumerate()
            .map(|(i, r)| client(&format!("c{i}"), &servers, r))
            .collect();
        Cluster::new(model, servers, clients).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn model_with(d_model: u64, dtype: u64) -> ModelSpec {
        ModelSpec {
            blocks: 4,
            d_model,
            dtype_bytes: dtype,
            block_bytes: 1.0,
            max_input_tokens: 20,
            max_output_tokens: 128,
            max_sequence_length: None,
            cache_bytes: None,
        }
    }

    #[test]
    fn cache_size_examples() {
        assert_eq!(cache_size(&model_with(4, 2), 1, 1).unwrap(), 32.0);
        // 2 * 14336 * 148 * 2
        assert_eq!(
            cache_size(&model_with(14336, 2), 20, 128).unwrap(),
            8_486_912.0
        );
        assert!(matches!(
            cache_size(&model_with(4, 2), 1, 0),
            Err(Error::Contract(_))
        ));
    }

    fn two_server_setup() -> (Cluster, Placement) {
        let model = unit_model(12, 1.0, 0.01);
        let mut a = server("a", 100.0, 0.02);
        a.tau_prefill = Affine::new(0.05, 0.0005);
        let mut b = server("b", 100.0, 0.02);
        b.tau_prefill = Affine::new(0.05, 0.0005);
        let servers = vec![a, b];
        let mut c = client("c0", &servers, &[0.1, 0.1]);
        for s in &servers {
            c.rtt_prefill.insert(s.id.clone(), Affine::new(0.2, 0.0005));
        }
        let cluster = Cluster::new(model, servers, vec![c]).unwrap();
        let placement = Placement::new(
            12,
            vec![Some(BlockRange::new(1, 4)), Some(BlockRange::new(3, 10))],
        )
        .unwrap();
        (cluster, placement)
    }

    #[test]
    fn per_token_time_examples() {
        let (cluster, placement) = two_server_setup();
        let t = per_token_time(&cluster, &placement, 0, Node::Server(0), 1).unwrap();
        assert!((t - 0.26).abs() < 1e-12);

        let p = Placement::new(12, vec![Some(BlockRange::new(1, 5)), None]).unwrap();
        let t = per_token_time(&cluster, &p, 0, Node::Source(0), 0).unwrap();
        assert!((t - 0.2).abs() < 1e-12);

        let gap = Placement::new(
            12,
            vec![Some(BlockRange::new(1, 2)), Some(BlockRange::new(5, 3))],
        )
        .unwrap();
        assert!(matches!(
            per_token_time(&cluster, &gap, 0, Node::Server(0), 1),
            Err(Error::InfeasibleEdge { .. })
        ));
    }

    #[test]
    fn first_token_and_average() {
        let (cluster, placement) = two_server_setup();
        let first = per_token_time_first(&cluster, &placement, 0, Node::Server(0), 1, 20).unwrap();
        assert!((first - 0.69).abs() < 1e-12);
        assert!(per_token_time_first(&cluster, &placement, 0, Node::Server(0), 1, 33).is_err());

        let avg1 = avg_per_token_time(&cluster, &placement, 0, Node::Server(0), 1, 20, 1).unwrap();
        assert_eq!(avg1, first);
        let avg2 = avg_per_token_time(&cluster, &placement, 0, Node::Server(0), 1, 20, 2).unwrap();
        assert!((avg2 - 0.475).abs() < 1e-12);
    }

    #[test]
    fn total_time_matches_per_hop_sum() {
        let (cluster, placement) = two_server_setup();
        let total = total_request_time(&cluster, &placement, 0, &[0, 1], 20, 10).unwrap();
        // hop 1 processes 4 blocks, hop 2 processes 8
        let first = (0.21 + 0.06 * 4.0) + (0.21 + 0.06 * 8.0);
        let decode = (0.1 + 0.02 * 4.0) + (0.1 + 0.02 * 8.0);
        assert!((total - (first + 9.0 * decode)).abs() < 1e-12);

        let single = total_request_time(&cluster, &placement, 0, &[0, 1], 20, 1).unwrap();
        assert!((single - first).abs() < 1e-12);
        assert!(total_request_time(&cluster, &placement, 0, &[0], 20, 4).is_err());
    }

    #[test]
    fn memory_usage_examples() {
        let model = unit_model(4, 10.0, 1.0);
        let p = Placement::new(4, vec![Some(BlockRange::new(1, 2))]).unwrap();
        assert_eq!(server_memory_usage(&model, &p, 0, &[]), 20.0);
        assert_eq!(
            server_memory_usage(&model, &p, 0, &[(2, 1.0), (2, 1.0)]),
            24.0
        );
    }

    #[test]
    fn amortized_time_examples() {
        let model = unit_model(10, 1.0, 0.1);
        let c = cluster(model.clone(), vec![server("a", 100.0, 0.02)], &[&[0.1]]);
        assert!((amortized_time(&c, 0, 5) - 0.04).abs() < 1e-12);
        assert!((amortized_time(&c, 0, 1) - 0.12).abs() < 1e-12);

        let c2 = cluster(model, vec![server("a", 100.0, 0.01)], &[&[0.1], &[0.3]]);
        assert!((amortized_time(&c2, 0, 10) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn capacity_examples() {
        let model = unit_model(3, 3.0, 1.0);
        let s = server("a", 12.0, 0.1);
        assert_eq!(server_capacity(&model, &s, 1).unwrap(), 9);
        assert_eq!(server_capacity(&model, &s, 4).unwrap(), 0);
        assert!(server_capacity(&model, &s, 5).is_err());
    }

    #[test]
    fn cluster_validation() {
        let model = unit_model(3, 3.0, 1.0);
        let servers = vec![server("a", 12.0, 0.1), server("b", 12.0, 0.1)];
        let mut c = client("c0", &servers, &[0.1, 0.1]);
        c.rtt.remove("b");
        let err = Cluster::new(model.clone(), servers.clone(), vec![c]).unwrap_err();
        assert!(
            err.to_string()
                .contains("`c0` has no rtt entry for server `b`"),
            "{err}"
        );

        let dup = vec![server("a", 12.0, 0.1), server("a", 12.0, 0.1)];
        assert!(Cluster::new(model.clone(), dup, vec![]).is_err());

        let tiny = vec![server("a", 3.5, 0.1)];
        assert!(Cluster::new(model, tiny, vec![]).is_err());
    }
}
