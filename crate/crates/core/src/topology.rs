//! Logical routing graph and route feasibility.
//!
//! Each client appears twice: as an S-client holding a dummy block 0 and as
//! a D-client holding a dummy block `L + 1`. An edge `i -> j` can carry a
//! request iff `a_j <= a_i + m_i <= a_j + m_j - 1`; the request then
//! processes `a_j + m_j - a_i - m_i >= 1` blocks at `j`. Because that count is
//! positive the frontier `a + m` strictly increases along any feasible path,
//! so the feasible subgraph is a DAG ordered by frontier.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, Hop, Placement, RouteAssignment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    Source(usize),
    Server(usize),
    Sink(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Source(c) => write!(f, "S-client {c}"),
            Node::Server(j) => write!(f, "server {j}"),
            Node::Sink(c) => write!(f, "D-client {c}"),
        }
    }
}

/// `(a, m)` of a node, with the dummy-block conventions for clients.
/// `None` for a server that hosts no block.
pub fn node_range(placement: &Placement, node: Node) -> Option<(u32, u32)> {
    match node {
        Node::Source(_) => Some((0, 1)),
        Node::Server(j) => placement.range(j).map(|r| (r.first, r.count)),
        Node::Sink(_) => Some((placement.blocks() + 1, 1)),
    }
}

/// Whether a request can go from `from` straight to `to`.
pub fn edge_feasible(placement: &Placement, from: Node, to: Node) -> bool {
    hop_blocks(placement, from, to).is_some()
}

/// Blocks processed at `to` after `from`, if the edge is feasible.
pub fn hop_blocks(placement: &Placement, from: Node, to: Node) -> Option<u32> {
    let (ai, mi) = node_range(placement, from)?;
    let (aj, mj) = node_range(placement, to)?;
    let frontier = ai + mi;
    (aj <= frontier && frontier < aj + mj).then(|| aj + mj - frontier)
}

/// `a_j + m_j - a_i - m_i`. Only meaningful on feasible edges; unhosted
/// servers count as an empty range at block 0.
pub fn processed_blocks(placement: &Placement, from: Node, to: Node) -> i64 {
    let end = |n| node_range(placement, n).map_or(0, |(a, m)| i64::from(a + m));
    end(to) - end(from)
}

/// Whether the server chain is a feasible route for `client`, including the
/// S-client entry and the D-client exit.
pub fn path_feasible(placement: &Placement, client: usize, chain: &[usize]) -> bool {
    let nodes = std::iter::once(Node::Source(client))
        .chain(chain.iter().map(|&j| Node::Server(j)))
        .chain(std::iter::once(Node::Sink(client)));
    let nodes: Vec<Node> = nodes.collect();
    nodes
        .windows(2)
        .all(|w| edge_feasible(placement, w[0], w[1]))
}

/// The full logical topology: S-client fan-out, server mesh, D-client fan-in.
#[derive(Clone, Debug)]
pub struct LogicalGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<(Node, Node)>,
}

pub fn build_logical_graph(cluster: &Cluster) -> Result<LogicalGraph> {
    let n = cluster.num_servers();
    if n == 0 {
        return Err(Error::EmptyCluster);
    }
    let clients = cluster.num_clients();
    let mut nodes: Vec<Node> = (0..clients).map(Node::Source).collect();
    nodes.extend((0..n).map(Node::Server));
    nodes.extend((0..clients).map(Node::Sink));

    let mut edges = Vec::with_capacity(2 * clients * n + n * n.saturating_sub(1));
    for c in 0..clients {
        edges.extend((0..n).map(|j| (Node::Source(c), Node::Server(j))));
    }
    for i in 0..n {
        for j in 0..n {
            if cluster.link_allowed(i, j) {
                edges.push((Node::Server(i), Node::Server(j)));
            }
        }
    }
    for j in 0..n {
        edges.extend((0..clients).map(|c| (Node::Server(j), Node::Sink(c))));
    }
    Ok(LogicalGraph { nodes, edges })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubEdge {
    pub from: Node,
    pub to: Node,
    /// Blocks processed at `to` (zero into the D-client).
    pub blocks: u32,
}

/// A least-cost route together with its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CostedPath {
    pub route: RouteAssignment,
    pub edges: Vec<SubEdge>,
    pub cost: f64,
}

/// The edges of the logical topology that one client may use under a
/// placement. Edge costs are supplied by the caller at query time.
#[derive(Clone, Debug)]
pub struct FeasibleSubgraph {
    pub client: usize,
    pub num_servers: usize,
    /// Feasible edges, grouped by source node in frontier order.
    pub edges: Vec<SubEdge>,
    order: Vec<Node>,
}

pub fn feasible_subgraph(
    cluster: &Cluster,
    placement: &Placement,
    client: usize,
) -> FeasibleSubgraph {
    let n = cluster.num_servers();
    let source = Node::Source(client);
    let sink = Node::Sink(client);
    let frontier = |node: Node| node_range(placement, node).map(|(a, m)| a + m);

    let mut order: Vec<Node> = (0..n)
        .map(Node::Server)
        .filter(|&v| frontier(v).is_some())
        .collect();
    order.sort_by_key(|&v| (frontier(v), v));
    order.insert(0, source);
    order.push(sink);

    let mut edges = Vec::new();
    for &from in &order {
        let targets: Box<dyn Iterator<Item = Node>> = match from {
            Node::Sink(_) => Box::new(std::iter::empty()),
            Node::Source(_) => Box::new((0..n).map(Node::Server)),
            Node::Server(i) => Box::new(
                (0..n)
                    .filter(move |&j| cluster.link_allowed(i, j))
                    .map(Node::Server)
                    .chain(std::iter::once(sink)),
            ),
        };
        for to in targets {
            if let Some(blocks) = hop_blocks(placement, from, to) {
                let blocks = if matches!(to, Node::Sink(_)) {
                    0
                } else {
                    blocks
                };
                edges.push(SubEdge { from, to, blocks });
            }
        }
    }
    FeasibleSubgraph {
        client,
        num_servers: n,
        edges,
        order,
    }
}

impl FeasibleSubgraph {
    fn ordinal(&self, node: Node) -> usize {
        match node {
            Node::Source(_) => 0,
            Node::Server(j) => 1 + j,
            Node::Sink(_) => 1 + self.num_servers,
        }
    }

    pub fn out_edges(&self, node: Node) -> impl Iterator<Item = &SubEdge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    /// Breadth-first reachability of the D-client from the S-client.
    pub fn has_path(&self) -> bool {
        let mut seen = vec![false; self.num_servers + 2];
        let mut queue = VecDeque::from([Node::Source(self.client)]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            if matches!(u, Node::Sink(_)) {
                return true;
            }
            for e in self.out_edges(u) {
                let k = self.ordinal(e.to);
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(e.to);
                }
            }
        }
        false
    }

    /// Least-cost S-to-D path. `cost` returns `None` to drop an edge. Ties
    /// on cost go to the predecessor with the smaller node ordinal.
    pub fn shortest_path<F>(&self, mut cost: F) -> Option<CostedPath>
    where
        F: FnMut(&SubEdge) -> Option<f64>,
    {
        let size = self.num_servers + 2;
        let mut dist = vec![f64::INFINITY; size];
        let mut pred: Vec<Option<SubEdge>> = vec![None; size];
        dist[0] = 0.0;

        // edges are stored grouped by `from` in topological (frontier) order
        for e in &self.edges {
            let u = self.ordinal(e.from);
            if !dist[u].is_finite() {
                continue;
            }
            let Some(w) = cost(e) else { continue };
            let v = self.ordinal(e.to);
            let candidate = dist[u] + w;
            let better = match pred[v] {
                None => candidate < dist[v] || dist[v].is_infinite(),
                Some(p) => {
                    candidate < dist[v] || (candidate == dist[v] && u < self.ordinal(p.from))
                }
            };
            if better {
                dist[v] = candidate;
                pred[v] = Some(*e);
            }
        }

        let sink = size - 1;
        if !dist[sink].is_finite() {
            return None;
        }
        let mut edges = Vec::new();
        let mut at = sink;
        while let Some(e) = pred[at] {
            edges.push(e);
            at = self.ordinal(e.from);
        }
        edges.reverse();
        let path = self.make_path(edges, dist[sink]);
        debug_assert!(self.frontier_increasing(&path.edges));
        Some(path)
    }

    fn make_path(&self, edges: Vec<SubEdge>, cost: f64) -> CostedPath {
        let hops = edges
            .iter()
            .filter_map(|e| match e.to {
                Node::Server(j) => Some(Hop {
                    server: j,
                    blocks: e.blocks,
                }),
                _ => None,
            })
            .collect();
        CostedPath {
            route: RouteAssignment {
                client: self.client,
                hops,
            },
            edges,
            cost,
        }
    }

    fn frontier_increasing(&self, edges: &[SubEdge]) -> bool {
        edges
            .iter()
            .all(|e| e.to == Node::Sink(self.client) || e.blocks >= 1)
    }

    /// Every S-to-D path, each with its edges, in depth-first order.
    /// Fails once more than `budget` paths have been produced.
    pub fn paths(&self, budget: usize) -> Result<Vec<Vec<SubEdge>>> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.collect_paths(Node::Source(self.client), &mut stack, &mut out, budget)?;
        Ok(out)
    }

    fn collect_paths(
        &self,
        at: Node,
        stack: &mut Vec<SubEdge>,
        out: &mut Vec<Vec<SubEdge>>,
        budget: usize,
    ) -> Result<()> {
        if matches!(at, Node::Sink(_)) {
            if out.len() >= budget {
                return Err(Error::BudgetExceeded(format!(
                    "more than {budget} routing paths"
                )));
            }
            out.push(stack.clone());
            return Ok(());
        }
        for e in self.out_edges(at) {
            stack.push(*e);
            self.collect_paths(e.to, stack, out, budget)?;
            stack.pop();
        }
        Ok(())
    }

    /// Turns a list of edges (one S-to-D path) into a route.
    pub fn route_of(&self, edges: &[SubEdge]) -> RouteAssignment {
        self.make_path(edges.to_vec(), 0.0).route
    }

    /// Nodes in frontier order, S-client first and D-client last.
    pub fn topological_order(&self) -> &[Node] {
        &self.order
    }
}
