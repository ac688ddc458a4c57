//! Scenario documents, cluster presets and network topologies.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Affine, ClientSpec, Cluster, ClusterDoc, ModelSpec, Placement, PlacementDoc, ServerSpec,
};
use crate::sim::{ArrivalProcess, LengthModel, PolicyConfig, PolicyKind, SimOptions, WorkloadSpec};

/// A GPU class: memory, decode time per block and prefill time per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub memory_bytes: f64,
    pub tau: f64,
    pub tau_prefill: Affine,
}

impl HardwareProfile {
    /// Large-memory fast GPU. Coefficients are illustrative, not measured.
    pub fn a100_like() -> Self {
        Self {
            memory_bytes: 80e9,
            tau: 0.005,
            tau_prefill: Affine::new(0.01, 0.0005),
        }
    }

    /// Small GPU slice. Coefficients are illustrative, not measured.
    pub fn mig_like() -> Self {
        Self {
            memory_bytes: 10e9,
            tau: 0.025,
            tau_prefill: Affine::new(0.05, 0.0025),
        }
    }

    fn server(&self, id: String) -> ServerSpec {
        ServerSpec {
            id,
            memory: self.memory_bytes,
            tau: self.tau,
            tau_prefill: self.tau_prefill,
        }
    }
}

/// A 70-block model with a 14336-wide hidden state in 16-bit precision and
/// 1.3 GB of parameters per block.
pub fn default_model() -> ModelSpec {
    ModelSpec {
        blocks: 70,
        d_model: 14336,
        dtype_bytes: 2,
        block_bytes: 1.3e9,
        max_input_tokens: 20,
        max_output_tokens: 128,
        max_sequence_length: None,
        cache_bytes: None,
    }
}

/// How a raw round-trip time becomes per-token and prefill RTTs: the
/// per-token RTT is the raw RTT, the prefill RTT adds the transfer of
/// `l_in` hidden states over the link bandwidth.
fn link_rtts(rtt: f64, bandwidth_bps: f64, bytes_per_token: f64) -> (f64, Affine) {
    (rtt, Affine::new(rtt, bytes_per_token * 8.0 / bandwidth_bps))
}

fn bytes_per_token(model: &ModelSpec, overhead: f64) -> f64 {
    (model.d_model * model.dtype_bytes) as f64 * overhead
}

/// Three sites: clients only, a few fast servers, many slow servers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteredPreset {
    pub model: ModelSpec,
    pub fast: HardwareProfile,
    pub slow: HardwareProfile,
    pub fast_servers: usize,
    pub slow_servers: usize,
    /// RTT and bandwidth inside a site.
    pub intra_rtt: f64,
    pub intra_bandwidth_bps: f64,
    /// RTT and bandwidth between sites.
    pub inter_rtt: f64,
    pub inter_bandwidth_bps: f64,
    /// Multiplier on the raw hidden-state size of a token in transit.
    pub serialization_overhead: f64,
}

impl Default for ClusteredPreset {
    fn default() -> Self {
        Self {
            model: default_model(),
            fast: HardwareProfile::a100_like(),
            slow: HardwareProfile::mig_like(),
            fast_servers: 2,
            slow_servers: 7,
            intra_rtt: 0.005,
            intra_bandwidth_bps: 1e9,
            inter_rtt: 0.1,
            inter_bandwidth_bps: 1e8,
            serialization_overhead: 1.0,
        }
    }
}

/// Cluster of the three-site preset. Site 0 holds client `c0`; sites 1 and
/// 2 hold the fast and slow servers, each with a co-located client
/// (`c1`, `c2`).
pub fn generate_clustered(preset: &ClusteredPreset) -> Result<Cluster> {
    let mut servers = Vec::new();
    let mut site = Vec::new();
    for i in 0..preset.fast_servers {
        servers.push(preset.fast.server(format!("fast{i}")));
        site.push(1);
    }
    for i in 0..preset.slow_servers {
        servers.push(preset.slow.server(format!("slow{i}")));
        site.push(2);
    }
    let per_token = bytes_per_token(&preset.model, preset.serialization_overhead);
    let clients = (0..3)
        .map(|c| {
            let mut client = ClientSpec {
                id: format!("c{c}"),
                rtt: Default::default(),
                rtt_prefill: Default::default(),
            };
            for (s, &s_site) in servers.iter().zip(&site) {
                let (rtt, bw) = if s_site == c {
                    (preset.intra_rtt, preset.intra_bandwidth_bps)
                } else {
                    (preset.inter_rtt, preset.inter_bandwidth_bps)
                };
                let (t, prefill) = link_rtts(rtt, bw, per_token);
                client.rtt.insert(s.id.clone(), t);
                client.rtt_prefill.insert(s.id.clone(), prefill);
            }
            client
        })
        .collect();
    Cluster::new(preset.model.clone(), servers, clients)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyLink {
    pub a: String,
    pub b: String,
    pub delay_ms: f64,
    /// Parsed for completeness; memory, not bandwidth, is the bottleneck.
    #[serde(default)]
    pub capacity_gbps: Option<f64>,
}

/// Undirected network with per-link one-way delays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<TopologyNode>,
    pub links: Vec<TopologyLink>,
}

impl Topology {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))
    }

    /// All-pairs round-trip times in seconds: twice the delay of the
    /// least-delay path.
    pub fn round_trip_times(&self) -> Result<Vec<Vec<f64>>> {
        let mut graph = UnGraph::<(), f64>::new_undirected();
        let mut index = HashMap::new();
        for n in &self.nodes {
            if index.insert(n.id.as_str(), graph.add_node(())).is_some() {
                return Err(Error::Scenario(format!(
                    "topology: duplicate node `{}`",
                    n.id
                )));
            }
        }
        for l in &self.links {
            let (Some(&a), Some(&b)) = (index.get(l.a.as_str()), index.get(l.b.as_str())) else {
                return Err(Error::Scenario(format!(
                    "topology: link {}-{} names an unknown node",
                    l.a, l.b
                )));
            };
            if !(l.delay_ms.is_finite() && l.delay_ms > 0.0) {
                return Err(Error::Scenario(format!(
                    "topology: link {}-{} needs a positive delay",
                    l.a, l.b
                )));
            }
            graph.add_edge(a, b, l.delay_ms / 1000.0);
        }
        let n = self.nodes.len();
        let mut rtt = vec![vec![0.0; n]; n];
        for (i, row) in rtt.iter_mut().enumerate() {
            let dist = dijkstra(&graph, NodeIndex::new(i), None, |e| *e.weight());
            if dist.len() != n {
                return Err(Error::Scenario("topology is disconnected".into()));
            }
            for (node, d) in dist {
                row[node.index()] = 2.0 * d;
            }
        }
        Ok(rtt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    Path(PathBuf),
    Inline(Topology),
}

impl TopologySource {
    fn resolve(&self, base: Option<&Path>) -> Result<Topology> {
        match self {
            TopologySource::Inline(t) => Ok(t.clone()),
            TopologySource::Path(p) => {
                let p = match base {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                Topology::load(&p)
            }
        }
    }
}

/// Servers at random nodes of a network topology, a fraction of them fast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteredPreset {
    pub topology: TopologySource,
    pub servers: usize,
    pub fast_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default = "HardwareProfile::a100_like")]
    pub fast: HardwareProfile,
    #[serde(default = "HardwareProfile::mig_like")]
    pub slow: HardwareProfile,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bps: f64,
    #[serde(default = "one")]
    pub serialization_overhead: f64,
}

fn default_bandwidth() -> f64 {
    1e9
}

fn one() -> f64 {
    1.0
}

/// Places `servers` servers at distinct seeded-random nodes, the first
/// `ceil(fast_fraction * servers)` of them fast, and one client `c0` at a
/// random node without a server.
pub fn generate_scattered(topology: &Topology, preset: &ScatteredPreset) -> Result<Cluster> {
    let n = topology.nodes.len();
    if preset.servers == 0 || preset.servers >= n {
        return Err(Error::Scenario(format!(
            "need 1 <= servers < nodes to leave a client node (servers = {}, nodes = {n})",
            preset.servers
        )));
    }
    if !(0.0..=1.0).contains(&preset.fast_fraction) {
        return Err(Error::Scenario(format!(
            "fast_fraction {} outside [0, 1]",
            preset.fast_fraction
        )));
    }
    let rtt = topology.round_trip_times()?;
    let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let hosts = &nodes[..preset.servers];
    let client_node = *nodes[preset.servers..]
        .choose(&mut rng)
        .expect("at least one free node");
    let fast = fast_count(preset.servers, preset.fast_fraction);

    let servers: Vec<ServerSpec> = hosts
        .iter()
        .enumerate()
        .map(|(k, &node)| {
            let profile = if k < fast { &preset.fast } else { &preset.slow };
            profile.server(format!(
                "{}-{}",
                if k < fast { "fast" } else { "slow" },
                topology.nodes[node].id
            ))
        })
        .collect();
    let per_token = bytes_per_token(&preset.model, preset.serialization_overhead);
    let mut client = ClientSpec {
        id: format!("c-{}", topology.nodes[client_node].id),
        rtt: Default::default(),
        rtt_prefill: Default::default(),
    };
    for (s, &node) in servers.iter().zip(hosts) {
        let (t, prefill) = link_rtts(rtt[client_node][node], preset.bandwidth_bps, per_token);
        client.rtt.insert(s.id.clone(), t);
        client.rtt_prefill.insert(s.id.clone(), prefill);
    }
    Cluster::new(preset.model.clone(), servers, vec![client])
}

/// `ceil(fraction * servers)`, robust to representation error in the product.
pub fn fast_count(servers: usize, fraction: f64) -> usize {
    let exact = fraction * servers as f64;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (count as usize).min(servers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PresetDoc {
    Clustered(#[serde(default)] ClusteredPreset),
    Scattered(ScatteredPreset),
}

/// Workload as written in a scenario, with clients named by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadDoc {
    pub arrivals: ArrivalProcess,
    pub requests: usize,
    #[serde(default)]
    pub clients: Vec<String>,
    pub lengths: LengthModel,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadDoc {
    pub fn resolve(&self, cluster: &Cluster) -> Result<WorkloadSpec> {
        let clients = self
            .clients
            .iter()
            .map(|id| {
                cluster.client_index(id).map_err(|_| {
                    Error::Scenario(format!("workload.clients: unknown client `{id}`"))
                })
            })
            .collect::<Result<_>>()?;
        let spec = WorkloadSpec {
            arrivals: self.arrivals.clone(),
            requests: self.requests,
            clients,
            lengths: self.lengths.clone(),
            seed: self.seed,
        };
        spec.validate(cluster)
            .map_err(|e| Error::Scenario(format!("workload: {e}")))?;
        Ok(spec)
    }
}

/// The JSON scenario document. Exactly one of `cluster` and `preset` is set.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub options: SimOptions,
    #[serde(default = "one_run")]
    pub runs: usize,
    /// Placement to evaluate instead of computing one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementDoc>,
}

fn one_run() -> usize {
    1
}

/// A loaded and validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub cluster: Cluster,
    pub workload: Option<WorkloadSpec>,
    pub policies: Vec<PolicyConfig>,
    pub options: SimOptions,
    pub runs: usize,
    pub placement: Option<Placement>,
}

impl Scenario {
    /// Policies to run: the listed ones, or the proposed policy alone.
    pub fn policies_or_default(&self) -> Vec<PolicyConfig> {
        if self.policies.is_empty() {
            vec![PolicyConfig::new(PolicyKind::Proposed)]
        } else {
            self.policies.clone()
        }
    }

    /// The workload, or one request per client at maximum lengths for
    /// commands that only need it for sizing.
    pub fn sizing_workload(&self) -> WorkloadSpec {
        self.workload.clone().unwrap_or_else(|| {
            let model = self.cluster.model();
            WorkloadSpec {
                arrivals: ArrivalProcess::Trace {
                    times: vec![0.0; self.cluster.num_clients()],
                },
                requests: self.cluster.num_clients(),
                clients: Vec::new(),
                lengths: LengthModel::Fixed {
                    input_len: model.max_input_tokens,
                    output_len: model.max_output_tokens,
                },
                seed: 0,
            }
        })
    }

    pub fn workload(&self) -> Result<&WorkloadSpec> {
        self.workload
            .as_ref()
            .ok_or_else(|| Error::Scenario("scenario has no `workload` section".into()))
    }
}

pub fn parse_scenario(text: &str, base: Option<&Path>) -> Result<Scenario> {
    let doc: ScenarioDoc =
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
    scenario_from_doc(doc, base)
}

pub fn scenario_from_doc(doc: ScenarioDoc, base: Option<&Path>) -> Result<Scenario> {
    let cluster = match (doc.cluster, doc.preset) {
        (Some(c), None) => {
            Cluster::try_from(c).map_err(|e| Error::Scenario(format!("cluster: {e}")))?
        }
        (None, Some(PresetDoc::Clustered(p))) => generate_clustered(&p)?,
        (None, Some(PresetDoc::Scattered(p))) => {
            generate_scattered(&p.topology.resolve(base)?, &p)?
        }
        (Some(_), Some(_)) => {
            return Err(Error::Scenario(
                "set either `cluster` or `preset`, not both".into(),
            ))
        }
        (None, None) => return Err(Error::Scenario("missing `cluster` or `preset`".into())),
    };
    let workload = doc
        .workload
        .as_ref()
        .map(|w| w.resolve(&cluster))
        .transpose()?;
    if doc.runs == 0 {
        return Err(Error::Scenario("runs must be at least 1".into()));
    }
    if let Some(p) = doc.policies.iter().find(|p| p.target == Some(0)) {
        return Err(Error::Scenario(format!(
            "policies: target of `{}` must be at least 1",
            p.kind
        )));
    }
    if !(doc.options.max_backoff.is_finite() && doc.options.max_backoff >= 1.0) {
        return Err(Error::Scenario(
            "options.max_backoff must be at least 1 second".into(),
        ));
    }
    let placement = doc
        .placement
        .as_ref()
        .map(|p| {
            Placement::from_doc(&cluster, p).map_err(|e| Error::Scenario(format!("placement: {e}")))
        })
        .transpose()?;
    Ok(Scenario {
        cluster,
        workload,
        policies: doc.policies,
        options: doc.options,
        runs: doc.runs,
        placement,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, path.parent()).map_err(|e| match e {
        Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_cluster(cluster: &Cluster, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(cluster)?)?;
    Ok(())
}

pub fn load_cluster(path: &Path) -> Result<Cluster> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustered_rtts_and_counts() {
        let c = generate_clustered(&ClusteredPreset::default()).unwrap();
        assert_eq!(c.num_servers(), 9);
        let c0 = c.client_index("c0").unwrap();
        let c1 = c.client_index("c1").unwrap();
        let fast = c.server_index("fast0").unwrap();
        assert_eq!(c.rtt(c0, fast), 0.1);
        assert_eq!(c.rtt(c1, fast), 0.005);
        // 20 tokens of 28672 bytes over 100 Mbit/s
        let prefill = c.rtt_prefill(c0, fast).eval(20.0);
        assert!((prefill - (0.1 + 20.0 * 28672.0 * 8.0 / 1e8)).abs() < 1e-12);
    }

    #[test]
    fn fast_count_rounds_up() {
        assert_eq!(fast_count(10, 0.2), 2);
        assert_eq!(fast_count(10, 0.25), 3);
        assert_eq!(fast_count(7, 0.0), 0);
        assert_eq!(fast_count(3, 1.0), 3);
    }

    fn line(n: usize) -> Topology {
        Topology {
            nodes: (0..n)
                .map(|i| TopologyNode {
                    id: format!("n{i}"),
                })
                .collect(),
            links: (1..n)
                .map(|i| TopologyLink {
                    a: format!("n{}", i - 1),
                    b: format!("n{i}"),
                    delay_ms: 1.0,
                    capacity_gbps: None,
                })
                .collect(),
        }
    }

    #[test]
    fn rtts_follow_shortest_delay() {
        let mut t = line(4);
        t.links.push(TopologyLink {
            a: "n0".into(),
            b: "n3".into(),
            delay_ms: 1.5,
            capacity_gbps: Some(10.0),
        });
        let rtt = t.round_trip_times().unwrap();
        assert!((rtt[0][3] - 0.003).abs() < 1e-15);
        assert!((rtt[0][2] - 0.004).abs() < 1e-15);
        assert_eq!(rtt[1][1], 0.0);
    }

    #[test]
    fn scattered_errors() {
        let preset = |servers| ScatteredPreset {
            topology: TopologySource::Inline(line(4)),
            servers,
            fast_fraction: 0.5,
            seed: 1,
            model: default_model(),
            fast: HardwareProfile::a100_like(),
            slow: HardwareProfile::mig_like(),
            bandwidth_bps: 1e9,
            serialization_overhead: 1.0,
        };
        assert!(generate_scattered(&line(4), &preset(4)).is_err());
        let mut split = line(4);
        split.links.remove(1);
        assert!(
            matches!(generate_scattered(&split, &preset(2)), Err(Error::Scenario(m)) if m.contains("disconnected"))
        );
        let c = generate_scattered(&line(4), &preset(2)).unwrap();
        assert_eq!(c.num_servers(), 2);
        assert_eq!(
            c.servers()
                .iter()
                .filter(|s| s.id.starts_with("fast"))
                .count(),
            1
        );
        assert_eq!(c.num_clients(), 1);
    }
}
