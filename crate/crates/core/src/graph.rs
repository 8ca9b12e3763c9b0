//! Causal DAG over named nodes with a flagged subset of edges.
//!
//! Graphs are immutable after construction; every operation takes `&self`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::Fnv;

/// Name of a variable in the causal graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Directed edge `tail -> head`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub tail: NodeId,
    pub head: NodeId,
}

impl Edge {
    pub fn new(tail: impl Into<NodeId>, head: impl Into<NodeId>) -> Self {
        Edge { tail: tail.into(), head: head.into() }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.tail, self.head)
    }
}

/// One invariant breach found by [`CausalGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("node at position {0} has an empty name")]
    EmptyNodeName(usize),
    #[error("duplicate node `{0}`")]
    DuplicateNode(NodeId),
    #[error("self-loop `{0}`")]
    SelfLoop(Edge),
    #[error("duplicate edge `{0}`")]
    DuplicateEdge(Edge),
    #[error("edge `{0}` references undeclared node `{1}`")]
    UnknownEndpoint(Edge, NodeId),
    #[error("unknown objectionable edge `{0}`: not in the edge set")]
    UnknownObjectionable(Edge),
    #[error("cycle involving `{0}`")]
    Cycle(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("graph contains a directed cycle")]
    CycleDetected,
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("average degree {avg_degree} is infeasible for {n_nodes} nodes (a simple DAG caps it at n - 1)")]
    InfeasibleDegree { n_nodes: usize, avg_degree: usize },
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
}

/// Directed acyclic graph with a distinguished subset of edges flagged for
/// decoupling. Node order is significant: it fixes tie-breaking in
/// [`CausalGraph::topo_sort`] and the input order of fitted modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    nodes: Vec<NodeId>,
    edges: Vec<Edge>,
    objectionable: Vec<Edge>,
}

impl CausalGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = impl Into<NodeId>>,
        edges: impl IntoIterator<Item = Edge>,
        objectionable: impl IntoIterator<Item = Edge>,
    ) -> Self {
        CausalGraph {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges: edges.into_iter().collect(),
            objectionable: objectionable.into_iter().collect(),
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn objectionable(&self) -> &[Edge] {
        &self.objectionable
    }

    pub fn is_objectionable(&self, edge: &Edge) -> bool {
        self.objectionable.contains(edge)
    }

    pub fn node_index(&self, node: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }

    /// Checks every structural invariant. `Ok(())` means the graph is a DAG
    /// with unique nodes/edges whose flagged edges all exist.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();

        let mut seen = HashSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.as_str().is_empty() {
                violations.push(Violation::EmptyNodeName(i));
            }
            if !seen.insert(node.clone()) {
                violations.push(Violation::DuplicateNode(node.clone()));
            }
        }

        let declared: HashSet<&NodeId> = self.nodes.iter().collect();
        let mut seen_edges = HashSet::new();
        for edge in &self.edges {
            if edge.tail == edge.head {
                violations.push(Violation::SelfLoop(edge.clone()));
            }
            for end in [&edge.tail, &edge.head] {
                if !declared.contains(end) {
                    violations.push(Violation::UnknownEndpoint(edge.clone(), end.clone()));
                }
            }
            if !seen_edges.insert((edge.tail.clone(), edge.head.clone())) {
                violations.push(Violation::DuplicateEdge(edge.clone()));
            }
        }

        let edge_set: HashSet<&Edge> = self.edges.iter().collect();
        for edge in &self.objectionable {
            if !edge_set.contains(edge) {
                violations.push(Violation::UnknownObjectionable(edge.clone()));
            }
        }

        // Cycle check on the well-formed part of the edge set.
        if let Err(stuck) = self.kahn_order() {
            for idx in stuck {
                violations.push(Violation::Cycle(self.nodes[idx].clone()));
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Topological order of the nodes. Ties are broken by declaration order,
    /// so the result is deterministic across runs and config reloads.
    pub fn topo_sort(&self) -> Result<Vec<NodeId>, GraphError> {
        match self.kahn_order() {
            Ok(order) => Ok(order.into_iter().map(|i| self.nodes[i].clone()).collect()),
            Err(_) => Err(GraphError::CycleDetected),
        }
    }

    /// Kahn's algorithm over node indices; `Err` carries the indices left
    /// with nonzero in-degree (members of some cycle).
    fn kahn_order(&self) -> Result<Vec<usize>, Vec<usize>> {
        let index = self.index_map();
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for edge in &self.edges {
            let (Some(&t), Some(&h)) = (index.get(edge.tail.as_str()), index.get(edge.head.as_str())) else {
                continue; // reported by validate, skip here
            };
            if t == h {
                continue;
            }
            indegree[h] += 1;
            children[t].push(h);
        }

        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err((0..n).filter(|&i| indegree[i] > 0).collect())
        }
    }

    /// Direct parents of `node`, ordered by declaration position of the tail.
    /// Empty for root nodes.
    pub fn parents(&self, node: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        if self.node_index(node).is_none() {
            return Err(GraphError::UnknownNode(node.clone()));
        }
        let mut tails: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| &e.head == node)
            .filter_map(|e| self.node_index(&e.tail))
            .collect();
        tails.sort_unstable();
        tails.dedup();
        Ok(tails.into_iter().map(|i| self.nodes[i].clone()).collect())
    }

    /// Nodes with in-degree zero, in declaration order.
    pub fn roots(&self) -> Vec<NodeId> {
        let heads: HashSet<&NodeId> = self.edges.iter().map(|e| &e.head).collect();
        self.nodes.iter().filter(|n| !heads.contains(n)).cloned().collect()
    }

    /// All nodes reachable from `starts` by directed edges (excluding the
    /// start nodes themselves unless reachable through a cycle-free path),
    /// returned in declaration order.
    pub fn reachable_from(&self, starts: &[NodeId]) -> Result<Vec<NodeId>, GraphError> {
        let index = self.index_map();
        let n = self.nodes.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for edge in &self.edges {
            if let (Some(&t), Some(&h)) = (index.get(edge.tail.as_str()), index.get(edge.head.as_str())) {
                children[t].push(h);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = Vec::new();
        for s in starts {
            let &i = index
                .get(s.as_str())
                .ok_or_else(|| GraphError::UnknownNode(s.clone()))?;
            stack.push(i);
        }
        // Starts are descendants-of-interest themselves (they are the heads
        // of keyed edges), so mark them directly.
        for &i in &stack {
            seen[i] = true;
        }
        while let Some(i) = stack.pop() {
            for &c in &children[i] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        Ok((0..n).filter(|&i| seen[i]).map(|i| self.nodes[i].clone()).collect())
    }

    pub(crate) fn index_map(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
    }

    /// Stable hash of nodes, edges, and flags. Embedded in fitted bundles so
    /// a bundle can refuse to run against a different graph.
    pub fn fingerprint(&self) -> String {
        let mut h = Fnv::new();
        h.write_usize(self.nodes.len());
        for n in &self.nodes {
            h.write_str(n.as_str());
        }
        h.write_usize(self.edges.len());
        for e in &self.edges {
            h.write_str(e.tail.as_str());
            h.write_str(e.head.as_str());
        }
        h.write_usize(self.objectionable.len());
        for e in &self.objectionable {
            h.write_str(e.tail.as_str());
            h.write_str(e.head.as_str());
        }
        h.finish_hex()
    }
}

/// Generates a random DAG with `n_nodes` nodes whose average total degree
/// (in + out) hits `avg_degree` exactly, by sampling a random topological
/// order and adding forward edges until the implied edge count is reached.
/// Node names are `v0000`, `v0001`, ... in declaration order.
pub fn random_dag(n_nodes: usize, avg_degree: usize, seed: u64) -> Result<CausalGraph, GraphError> {
    if n_nodes < 2 {
        return Err(GraphError::TooFewNodes(n_nodes));
    }
    if avg_degree > n_nodes - 1 {
        return Err(GraphError::InfeasibleDegree { n_nodes, avg_degree });
    }
    let target = ((n_nodes * avg_degree) as f64 / 2.0).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut rng);

    let names: Vec<NodeId> = (0..n_nodes).map(|i| NodeId::new(format!("v{i:04}"))).collect();

    let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target {
        let a = rng.random_range(0..n_nodes);
        let b = rng.random_range(0..n_nodes);
        if a == b {
            continue;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if chosen.insert((lo as u32, hi as u32)) {
            edges.push(Edge::new(names[order[lo]].clone(), names[order[hi]].clone()));
        }
    }

    Ok(CausalGraph::new(names, edges, Vec::new()))
}

/// Seven-node graph used across the test and acceptance suites: roots A and
/// C, intermediates X1..X4, outcome Y, with five flagged edges exercising
/// every instantiation option.
pub fn worked_example_graph() -> CausalGraph {
    CausalGraph::new(
        ["A", "C", "X1", "X2", "X3", "X4", "Y"],
        vec![
            Edge::new("A", "X1"),
            Edge::new("C", "X1"),
            Edge::new("A", "X2"),
            Edge::new("C", "X2"),
            Edge::new("X1", "X2"),
            Edge::new("C", "X3"),
            Edge::new("X2", "X3"),
            Edge::new("X1", "X4"),
            Edge::new("X2", "X4"),
            Edge::new("A", "Y"),
            Edge::new("X1", "Y"),
            Edge::new("X2", "Y"),
            Edge::new("X3", "Y"),
            Edge::new("X4", "Y"),
        ],
        vec![
            Edge::new("A", "X2"),
            Edge::new("X1", "X4"),
            Edge::new("A", "Y"),
            Edge::new("X1", "Y"),
            Edge::new("X2", "Y"),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CausalGraph {
        CausalGraph::new(
            ["A", "M", "Y"],
            vec![Edge::new("A", "M"), Edge::new("M", "Y")],
            vec![],
        )
    }

    #[test]
    fn minimal_graph_validates() {
        let g = CausalGraph::new(["A", "Y"], vec![Edge::new("A", "Y")], vec![Edge::new("A", "Y")]);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn self_loop_is_reported() {
        let g = CausalGraph::new(["A"], vec![Edge::new("A", "A")], vec![]);
        let violations = g.validate().unwrap_err();
        assert!(violations.iter().any(|v| matches!(v, Violation::SelfLoop(_))));
    }

    #[test]
    fn unknown_objectionable_is_reported() {
        let g = CausalGraph::new(
            ["A", "Y"],
            vec![Edge::new("A", "Y")],
            vec![Edge::new("Y", "A")],
        );
        let violations = g.validate().unwrap_err();
        assert_eq!(violations, vec![Violation::UnknownObjectionable(Edge::new("Y", "A"))]);
    }

    #[test]
    fn duplicate_edge_and_node_reported() {
        let g = CausalGraph::new(
            ["A", "A", "Y"],
            vec![Edge::new("A", "Y"), Edge::new("A", "Y")],
            vec![],
        );
        let violations = g.validate().unwrap_err();
        assert!(violations.iter().any(|v| matches!(v, Violation::DuplicateNode(_))));
        assert!(violations.iter().any(|v| matches!(v, Violation::DuplicateEdge(_))));
    }

    #[test]
    fn chain_topo_order() {
        assert_eq!(
            chain().topo_sort().unwrap(),
            vec![NodeId::from("A"), NodeId::from("M"), NodeId::from("Y")]
        );
    }

    #[test]
    fn worked_example_topo_order() {
        let order = worked_example_graph().topo_sort().unwrap();
        let names: Vec<&str> = order.iter().map(|n| n.as_str()).collect();
        assert_eq!(names, ["A", "C", "X1", "X2", "X3", "X4", "Y"]);
    }

    #[test]
    fn cycle_detected() {
        let g = CausalGraph::new(["A", "B"], vec![Edge::new("A", "B"), Edge::new("B", "A")], vec![]);
        assert_eq!(g.topo_sort().unwrap_err(), GraphError::CycleDetected);
        let violations = g.validate().unwrap_err();
        assert!(violations.iter().any(|v| matches!(v, Violation::Cycle(_))));
    }

    #[test]
    fn parents_follow_declaration_order() {
        let g = worked_example_graph();
        let parents = g.parents(&NodeId::from("X2")).unwrap();
        let names: Vec<&str> = parents.iter().map(|n| n.as_str()).collect();
        assert_eq!(names, ["A", "C", "X1"]);
        assert!(g.parents(&NodeId::from("A")).unwrap().is_empty());
        assert!(matches!(
            g.parents(&NodeId::from("nope")),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn linear_example_outcome_parents() {
        let g = CausalGraph::new(
            ["A", "C", "M", "L", "Y"],
            vec![
                Edge::new("A", "M"),
                Edge::new("C", "M"),
                Edge::new("A", "L"),
                Edge::new("C", "L"),
                Edge::new("M", "L"),
                Edge::new("A", "Y"),
                Edge::new("C", "Y"),
                Edge::new("M", "Y"),
                Edge::new("L", "Y"),
            ],
            vec![],
        );
        let parents = g.parents(&NodeId::from("Y")).unwrap();
        let names: Vec<&str> = parents.iter().map(|n| n.as_str()).collect();
        assert_eq!(names, ["A", "C", "M", "L"]);
    }

    #[test]
    fn random_dag_degree_and_determinism() {
        let g1 = random_dag(128, 12, 42).unwrap();
        let g2 = random_dag(128, 12, 42).unwrap();
        assert_eq!(g1, g2);
        assert!(g1.validate().is_ok());
        let avg = 2.0 * g1.edges().len() as f64 / g1.nodes().len() as f64;
        assert!((avg - 12.0).abs() / 12.0 <= 0.02, "avg degree {avg}");
        assert!(g1.topo_sort().is_ok());
    }

    #[test]
    fn random_dag_smallest_case() {
        let g = random_dag(2, 1, 3).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn random_dag_infeasible() {
        assert_eq!(
            random_dag(4, 4, 0).unwrap_err(),
            GraphError::InfeasibleDegree { n_nodes: 4, avg_degree: 4 }
        );
        // avg degree n - 1 is the complete DAG: feasible.
        assert_eq!(random_dag(4, 3, 0).unwrap().edges().len(), 6);
        assert_eq!(random_dag(1, 0, 0).unwrap_err(), GraphError::TooFewNodes(1));
    }

    #[test]
    fn handshake_identity_at_scale() {
        let g = random_dag(1024, 102, 7).unwrap();
        let expected = 1024 * 102 / 2;
        let got = g.edges().len();
        assert!(
            (got as f64 - expected as f64).abs() / expected as f64 <= 0.02,
            "expected ~{expected} edges, got {got}"
        );
        assert!(g.validate().is_ok());
    }

    #[test]
    fn reachability() {
        let g = worked_example_graph();
        let reach = g.reachable_from(&[NodeId::from("X2")]).unwrap();
        let names: Vec<&str> = reach.iter().map(|n| n.as_str()).collect();
        assert_eq!(names, ["X2", "X3", "X4", "Y"]);
    }

    #[test]
    fn fingerprint_changes_with_flags() {
        let g1 = CausalGraph::new(["A", "Y"], vec![Edge::new("A", "Y")], vec![]);
        let g2 = CausalGraph::new(["A", "Y"], vec![Edge::new("A", "Y")], vec![Edge::new("A", "Y")]);
        assert_ne!(g1.fingerprint(), g2.fingerprint());
    }
}
