//! Writes the linearized joint placement/routing model as a CPLEX LP file,
//! and reads back enough of such a file to count its parts.
//!
//! Variables: `f_<r>_<i>_<j>` routing binaries, `a_<j>` / `m_<j>` placement
//! integers, and `al_`, `be_`, `ga_`, `de_` auxiliaries standing for
//! `a_j f`, `a_i f`, `m_j f` and `m_i f` on every request and edge.
//! Client endpoints have fixed block positions (`a = 0, m = 1` at the source,
//! `a = L + 1, m = 1` at the sink), which are folded into the constants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, Request};
use crate::topology::{build_logical_graph, Node};

/// Analytic size of the emitted model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilpCounts {
    pub edges: usize,
    pub binaries: usize,
    pub integers: usize,
    pub auxiliaries: usize,
    pub memory_rows: usize,
    pub flow_rows: usize,
    pub placement_rows: usize,
    pub chain_rows: usize,
    pub linearization_rows: usize,
}

impl MilpCounts {
    pub fn expected(cluster: &Cluster, requests: usize) -> Result<Self> {
        let graph = build_logical_graph(cluster)?;
        let e = graph.edges.len();
        let n = cluster.num_servers();
        let nodes = 2 * cluster.num_clients() + n;
        Ok(Self {
            edges: e,
            binaries: requests * e,
            integers: 2 * n,
            auxiliaries: 4 * requests * e,
            memory_rows: n,
            flow_rows: requests * nodes,
            placement_rows: n,
            chain_rows: 2 * requests * e,
            linearization_rows: 12 * requests * e,
        })
    }

    pub fn rows(&self) -> usize {
        self.memory_rows
            + self.flow_rows
            + self.placement_rows
            + self.chain_rows
            + self.linearization_rows
    }
}

fn node_name(node: Node) -> String {
    match node {
        Node::Source(c) => format!("S{c}"),
        Node::Server(j) => format!("v{j}"),
        Node::Sink(c) => format!("D{c}"),
    }
}

/// A linear expression: variable terms plus a constant.
#[derive(Default)]
struct Expr {
    terms: Vec<(f64, String)>,
    constant: f64,
}

impl Expr {
    fn var(mut self, coef: f64, name: impl Into<String>) -> Self {
        self.terms.push((coef, name.into()));
        self
    }

    fn constant(mut self, value: f64) -> Self {
        self.constant += value;
        self
    }

    /// `a` or `m` of a node: a variable for servers, a constant for clients.
    fn position(self, coef: f64, node: Node, which: char, blocks: u32) -> Self {
        match (node, which) {
            (Node::Server(j), 'a') => self.var(coef, format!("a_{j}")),
            (Node::Server(j), _) => self.var(coef, format!("m_{j}")),
            (Node::Source(_), 'a') => self,
            (Node::Sink(_), 'a') => self.constant(coef * f64::from(blocks + 1)),
            (_, _) => self.constant(coef),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('e') {
        format!("{x:e}")
    } else {
        s
    }
}

fn write_terms(out: &mut String, terms: &[(f64, String)]) {
    let mut merged: BTreeMap<&str, f64> = BTreeMap::new();
    let mut order = Vec::new();
    for (c, v) in terms {
        if !merged.contains_key(v.as_str()) {
            order.push(v.as_str());
        }
        *merged.entry(v.as_str()).or_default() += c;
    }
    let mut first = true;
    for v in order {
        let c = merged[v];
        if c == 0.0 {
            continue;
        }
        let sign = if c < 0.0 {
            "-"
        } else if first {
            ""
        } else {
            "+"
        };
        let mag = c.abs();
        let coef = if mag == 1.0 {
            String::new()
        } else {
            format!("{} ", fmt_num(mag))
        };
        if first {
            let _ = write!(out, "{sign}{coef}{v}");
        } else {
            let _ = write!(out, " {sign} {coef}{v}");
        }
        first = false;
    }
    if first {
        out.push_str("0 m_0");
    }
}

/// Writes `lhs <= rhs` (sense `<=`, `=`), moving constants to the right.
fn row(out: &mut String, name: &str, lhs: Expr, sense: &str, rhs: f64) {
    let _ = write!(out, " {name}: ");
    write_terms(out, &lhs.terms);
    let _ = writeln!(out, " {sense} {}", fmt_num(rhs - lhs.constant));
}

/// Renders the model for `requests` as LP text.
pub fn milp_text(cluster: &Cluster, requests: &[Request]) -> Result<String> {
    let graph = build_logical_graph(cluster)?;
    let model = cluster.model();
    let l = cluster.blocks();
    let lf = f64::from(l);
    let n = cluster.num_servers();
    let mut out = String::new();

    let f = |r: usize, i: Node, j: Node| format!("f_{r}_{}_{}", node_name(i), node_name(j));
    let aux =
        |p: &str, r: usize, i: Node, j: Node| format!("{p}_{r}_{}_{}", node_name(i), node_name(j));

    out.push_str("\\ joint block placement and request routing\nMinimize\n obj: ");
    let mut objective = Vec::new();
    for (r, req) in requests.iter().enumerate() {
        for &(i, j) in &graph.edges {
            let Node::Server(s) = j else { continue };
            let tau = cluster.server(s).tau;
            objective.push((cluster.rtt(req.client, s), f(r, i, j)));
            objective.push((tau, aux("al", r, i, j)));
            objective.push((tau, aux("ga", r, i, j)));
            objective.push((-tau, aux("be", r, i, j)));
            objective.push((-tau, aux("de", r, i, j)));
        }
    }
    write_terms(&mut out, &objective);
    out.push_str("\nSubject To\n");

    for s in 0..n {
        let mut e = Expr::default().var(model.block_bytes, format!("m_{s}"));
        for (r, req) in requests.iter().enumerate() {
            let cache = model.cache_bytes_for(req.input_len, req.output_len);
            for &(i, j) in graph.edges.iter().filter(|&&(_, j)| j == Node::Server(s)) {
                e = e
                    .var(cache, aux("al", r, i, j))
                    .var(cache, aux("ga", r, i, j))
                    .var(-cache, aux("be", r, i, j))
                    .var(-cache, aux("de", r, i, j));
            }
        }
        row(
            &mut out,
            &format!("mem_{s}"),
            e,
            "<=",
            cluster.server(s).memory,
        );
    }

    for (r, req) in requests.iter().enumerate() {
        for &node in &graph.nodes {
            let mut e = Expr::default();
            for &(i, j) in &graph.edges {
                if i == node {
                    e = e.var(1.0, f(r, i, j));
                }
                if j == node {
                    e = e.var(-1.0, f(r, i, j));
                }
            }
            let supply = match node {
                Node::Source(c) if c == req.client => 1.0,
                Node::Sink(c) if c == req.client => -1.0,
                _ => 0.0,
            };
            row(
                &mut out,
                &format!("flow_{r}_{}", node_name(node)),
                e,
                "=",
                supply,
            );
        }
    }

    for s in 0..n {
        let e = Expr::default()
            .var(1.0, format!("a_{s}"))
            .var(1.0, format!("m_{s}"));
        row(&mut out, &format!("place_{s}"), e, "<=", lf + 1.0);
    }

    for (r, _) in requests.iter().enumerate() {
        for &(i, j) in &graph.edges {
            let tag = format!("{r}_{}_{}", node_name(i), node_name(j));
            let (al, be, ga, de, fv) = (
                aux("al", r, i, j),
                aux("be", r, i, j),
                aux("ga", r, i, j),
                aux("de", r, i, j),
                f(r, i, j),
            );
            // alpha <= a_i + m_i
            let e = Expr::default()
                .var(1.0, &al)
                .position(-1.0, i, 'a', l)
                .position(-1.0, i, 'm', l);
            row(&mut out, &format!("chainlo_{tag}"), e, "<=", 0.0);
            // beta + delta <= a_j + m_j - 1
            let e = Expr::default()
                .var(1.0, &be)
                .var(1.0, &de)
                .position(-1.0, j, 'a', l)
                .position(-1.0, j, 'm', l);
            row(&mut out, &format!("chainhi_{tag}"), e, "<=", -1.0);

            let big_a = lf + 1.0;
            let families: [(&str, &String, Node, char, f64); 4] = [
                ("al", &al, j, 'a', big_a),
                ("be", &be, i, 'a', lf),
                ("ga", &ga, j, 'm', lf),
                ("de", &de, i, 'm', lf),
            ];
            for (p, v, node, which, big) in families {
                let e = Expr::default().var(-big, &fv).var(1.0, v);
                row(&mut out, &format!("lin{p}1_{tag}"), e, "<=", 0.0);
                let e = Expr::default().position(-1.0, node, which, l).var(1.0, v);
                row(&mut out, &format!("lin{p}2_{tag}"), e, "<=", 0.0);
                let e = Expr::default()
                    .position(1.0, node, which, l)
                    .var(big, &fv)
                    .var(-1.0, v);
                row(&mut out, &format!("lin{p}3_{tag}"), e, "<=", big);
            }
        }
    }

    out.push_str("Bounds\n");
    for s in 0..n {
        let _ = writeln!(out, " 1 <= a_{s} <= {l}");
        let _ = writeln!(out, " 1 <= m_{s} <= {l}");
    }
    for (r, _) in requests.iter().enumerate() {
        for &(i, j) in &graph.edges {
            for p in ["al", "be", "ga", "de"] {
                let _ = writeln!(out, " {} >= 0", aux(p, r, i, j));
            }
        }
    }
    out.push_str("Binary\n");
    for (r, _) in requests.iter().enumerate() {
        for &(i, j) in &graph.edges {
            let _ = writeln!(out, " {}", f(r, i, j));
        }
    }
    out.push_str("General\n");
    for s in 0..n {
        let _ = writeln!(out, " a_{s}\n m_{s}");
    }
    out.push_str("End\n");
    Ok(out)
}

/// Writes the LP file and returns the analytic counts.
pub fn emit_milp(cluster: &Cluster, requests: &[Request], path: &Path) -> Result<MilpCounts> {
    let text = milp_text(cluster, requests)?;
    std::fs::write(path, text)?;
    MilpCounts::expected(cluster, requests.len())
}

/// What a parsed LP file contains, by section.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LpSummary {
    pub objective_terms: usize,
    /// Number of rows per name prefix (text before the first `_`).
    pub rows_by_prefix: BTreeMap<String, usize>,
    pub rows: usize,
    pub binaries: BTreeSet<String>,
    pub generals: BTreeSet<String>,
    /// Every variable appearing anywhere in the file.
    pub variables: BTreeSet<String>,
}

impl LpSummary {
    pub fn rows_with_prefix(&self, prefix: &str) -> usize {
        self.rows_by_prefix
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    /// Variables that are neither binary nor general.
    pub fn continuous(&self) -> BTreeSet<String> {
        self.variables
            .difference(&self.binaries)
            .filter(|v| !self.generals.contains(*v))
            .cloned()
            .collect()
    }
}

fn is_var(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic())
}

/// Reads the section structure of an LP file written by [`milp_text`].
pub fn parse_lp_summary(text: &str) -> Result<LpSummary> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Objective,
        Constraints,
        Bounds,
        Binary,
        General,
    }
    let mut section = Section::None;
    let mut summary = LpSummary::default();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" | "maximize" => {
                section = Section::Objective;
                continue;
            }
            "subject to" => {
                section = Section::Constraints;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binary" | "binaries" => {
                section = Section::Binary;
                continue;
            }
            "general" | "generals" => {
                section = Section::General;
                continue;
            }
            "end" => break,
            _ => {}
        }
        let (label, body) = match line.split_once(':') {
            Some((l, b)) => (Some(l.trim()), b),
            None => (None, line),
        };
        let vars: Vec<&str> = body.split_whitespace().filter(|t| is_var(t)).collect();
        match section {
            Section::Objective => summary.objective_terms += vars.len(),
            Section::Constraints => {
                let label =
                    label.ok_or_else(|| Error::Scenario(format!("unnamed LP row `{line}`")))?;
                let prefix = label.split('_').next().unwrap_or(label).to_string();
                *summary.rows_by_prefix.entry(prefix).or_default() += 1;
                summary.rows += 1;
            }
            Section::Binary => summary.binaries.extend(vars.iter().map(|v| v.to_string())),
            Section::General => summary.generals.extend(vars.iter().map(|v| v.to_string())),
            Section::Bounds => {}
            Section::None => {
                return Err(Error::Scenario(format!(
                    "LP content before any section: `{line}`"
                )))
            }
        }
        summary
            .variables
            .extend(vars.into_iter().map(str::to_string));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    fn req(n: u64) -> Vec<Request> {
        (0..n)
            .map(|id| Request {
                id,
                client: 0,
                arrival: 0.0,
                input_len: 1,
                output_len: 1,
            })
            .collect()
    }

    #[test]
    fn one_server_one_request_counts() {
        let c = cluster(
            unit_model(2, 1.0, 1.0),
            vec![server("a", 10.0, 0.1)],
            &[&[0.1]],
        );
        let text = milp_text(&c, &req(1)).unwrap();
        let s = parse_lp_summary(&text).unwrap();
        let e = MilpCounts::expected(&c, 1).unwrap();
        assert_eq!(e.edges, 2);
        assert_eq!(s.rows_with_prefix("lin"), 24);
        assert_eq!(s.rows, e.rows());
        assert_eq!(s.binaries.len(), 2);
        assert_eq!(s.generals.len(), 2);
    }

    #[test]
    fn zero_requests_has_only_placement_side() {
        let c = cluster(
            unit_model(2, 1.0, 1.0),
            vec![server("a", 10.0, 0.1)],
            &[&[0.1]],
        );
        let s = parse_lp_summary(&milp_text(&c, &[]).unwrap()).unwrap();
        assert_eq!(s.rows_with_prefix("place"), 1);
        assert_eq!(s.rows_with_prefix("mem"), 1);
        assert_eq!(s.rows, 2);
        assert!(s.binaries.is_empty());
    }

    #[test]
    fn rows_are_well_formed() {
        let c = cluster(
            unit_model(2, 1.0, 1.0),
            vec![server("a", 10.0, 0.1)],
            &[&[0.1]],
        );
        let text = milp_text(&c, &req(1)).unwrap();
        assert!(text.contains(" linal1_0_S0_v0: -3 f_0_S0_v0 + al_0_S0_v0 <= 0"));
        // sink edge: alpha <= a_i + m_i, with a_D = 3
        assert!(text.contains(" linal2_0_v0_D0: al_0_v0_D0 <= 3"));
        assert!(text.contains(" place_0: a_0 + m_0 <= 3"));
        assert!(text.contains(" flow_0_S0: f_0_S0_v0 = 1"));
    }
}
