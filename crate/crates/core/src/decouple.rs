//! Edge-level reference points and the value-propagation engine.
//!
//! A reference point fixes the value one node transmits along one flagged
//! edge. When a module's input edge is keyed, the reference value is used,
//! superseding both the observed value and any derived value of the tail.
//! Inputs whose tail lies downstream of some reference point use the tail's
//! recomputed (derived) value; all other inputs pass the observed data
//! through untouched. Fitted parameters are never modified.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset, Schema, Value};
use crate::graph::{CausalGraph, Edge, NodeId};
use crate::model::{LocalModule, ModelBundle, ModelError, ModuleOutput, PropagationMode};

#[derive(Debug, thiserror::Error)]
pub enum DecoupleError {
    #[error("bundle was fitted on a different graph (fingerprint {expected} != {got})")]
    FingerprintMismatch { expected: String, got: String },
    #[error("edge `{0}` is keyed but not flagged objectionable in the graph")]
    NotObjectionable(Edge),
    #[error("reference value for `{edge}` does not fit the tail domain: {source}")]
    BadReferenceValue { edge: Edge, #[source] source: DataError },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("outcome node `{0}` has no parents, so no module predicts it")]
    OutcomeIsRoot(NodeId),
    #[error("no module for node `{0}`")]
    MissingModule(NodeId),
    #[error("override for root node `{0}` is meaningless (roots have no mechanism)")]
    OverrideOnRoot(NodeId),
    #[error("override for `{node}` expects {expected} encoded inputs, got {got}")]
    OverrideArity { node: NodeId, expected: usize, got: usize },
    #[error("dataset schema differs from the engine's schema")]
    SchemaMismatch,
    #[error("graph is not a valid DAG")]
    InvalidGraph,
    #[error("row {row} out of range ({rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-edge fixed values for flagged edges. Keys must be objectionable edges
/// of the bound graph; the empty map is the identity configuration. The same
/// tail node may carry different values on different edges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePointMap {
    entries: Vec<RefEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefEntry {
    pub tail: NodeId,
    pub head: NodeId,
    /// One value per column of the tail node.
    pub value: Vec<Value>,
}

impl ReferencePointMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the value carried along `edge`.
    pub fn insert(&mut self, edge: Edge, value: Vec<Value>) {
        if let Some(entry) =
            self.entries.iter_mut().find(|e| e.tail == edge.tail && e.head == edge.head)
        {
            entry.value = value;
        } else {
            self.entries.push(RefEntry { tail: edge.tail, head: edge.head, value });
        }
    }

    pub fn get(&self, edge: &Edge) -> Option<&[Value]> {
        self.entries
            .iter()
            .find(|e| e.tail == edge.tail && e.head == edge.head)
            .map(|e| e.value.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RefEntry> {
        self.entries.iter()
    }

    /// Keys must be flagged edges and values must kind-check against the
    /// tail node's columns.
    pub fn validate(&self, graph: &CausalGraph, schema: &Schema) -> Result<(), DecoupleError> {
        for entry in &self.entries {
            let edge = Edge::new(entry.tail.clone(), entry.head.clone());
            if !graph.is_objectionable(&edge) {
                return Err(DecoupleError::NotObjectionable(edge));
            }
            schema
                .encode_node_value(&entry.tail, &entry.value)
                .map_err(|source| DecoupleError::BadReferenceValue { edge, source })?;
        }
        Ok(())
    }

    /// Compact single-line rendering for traces and logs.
    pub fn describe(&self, schema: &Schema) -> String {
        if self.entries.is_empty() {
            return "identity".to_owned();
        }
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|e| {
                let var = schema.variable(&e.tail);
                let rendered: Vec<String> = e
                    .value
                    .iter()
                    .enumerate()
                    .map(|(i, v)| match var {
                        Some(var) => v.render(&var.columns[i].kind),
                        None => format!("{v:?}"),
                    })
                    .collect();
                format!("{}->{}={}", e.tail, e.head, rendered.join("|"))
            })
            .collect();
        parts.join(";")
    }
}

/// A mechanism that can stand in for a fitted module: used for direct
/// corrections when the user knows how a flagged mechanism should behave.
/// Justifying the replacement is the caller's burden; only its arity is
/// checked.
pub trait Mechanism: Send + Sync {
    fn input_width(&self) -> usize;
    fn forward(&self, encoded_inputs: &[f64], mode: PropagationMode) -> ModuleOutput;
}

impl Mechanism for LocalModule {
    fn input_width(&self) -> usize {
        self.input_width
    }

    fn forward(&self, encoded_inputs: &[f64], mode: PropagationMode) -> ModuleOutput {
        self.predict_encoded(encoded_inputs, mode).expect("arity checked at engine build")
    }
}

/// Replacement mechanisms per node (direct mechanism correction).
#[derive(Default, Clone)]
pub struct Overrides {
    map: HashMap<NodeId, Arc<dyn Mechanism>>,
}

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: NodeId, mechanism: Arc<dyn Mechanism>) {
        self.map.insert(node, mechanism);
    }

    pub fn get(&self, node: &NodeId) -> Option<&Arc<dyn Mechanism>> {
        self.map.get(node)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl std::fmt::Debug for Overrides {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut nodes: Vec<&NodeId> = self.map.keys().collect();
        nodes.sort();
        f.debug_struct("Overrides").field("nodes", &nodes).finish()
    }
}

/// Which input option fired for one edge into a visited module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstantiationChoice {
    ReferencePoint,
    DownstreamOfReference,
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeChoice {
    pub edge: Edge,
    pub choice: InstantiationChoice,
}

/// Full propagation record for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    /// Score of the outcome module.
    pub outcome: f64,
    /// Per node, graph declaration order.
    pub nodes: Vec<NodeTrace>,
}

impl PropagationState {
    pub fn node(&self, node: &NodeId) -> Option<&NodeTrace> {
        self.nodes.iter().find(|t| &t.node == node)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub node: NodeId,
    /// True iff the node's value derives from some upstream reference point
    /// (or a directly corrected mechanism).
    pub affected: bool,
    /// Encoded instantiated value.
    pub value: Vec<f64>,
    /// Option fired per input edge; empty for roots.
    pub inputs: Vec<EdgeChoice>,
}

/// Row-independent summary: which nodes recompute and which option each
/// module input uses. These depend only on the graph, the keyed edge set,
/// and the overrides, never on row values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub affected: Vec<NodeId>,
    pub choices: Vec<EdgeChoice>,
}

/// Batch prediction output.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub scores: Vec<f64>,
    pub summary: TraceSummary,
}

/// Dataset with every node's observed values already one-hot encoded.
/// Encoding once and scoring many candidate configurations against it is
/// what makes the reference-point search cheap.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    n_rows: usize,
    /// `blocks[node_index][row]` is the node's encoded value.
    blocks: Vec<Vec<Vec<f64>>>,
}

impl EncodedDataset {
    pub fn new(graph: &CausalGraph, dataset: &Dataset) -> Result<Self, DecoupleError> {
        let blocks = graph
            .nodes()
            .iter()
            .map(|node| Ok(dataset.encode_node(node)?))
            .collect::<Result<Vec<_>, DecoupleError>>()?;
        Ok(EncodedDataset { n_rows: dataset.n_rows(), blocks })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
}

/// Set of nodes whose instantiated values can differ from observed data
/// under `refmap`: the heads of keyed edges and all their descendants.
pub fn edge_reach(
    graph: &CausalGraph,
    refmap: &ReferencePointMap,
) -> Result<Vec<NodeId>, DecoupleError> {
    let mut heads = Vec::new();
    for entry in refmap.iter() {
        if graph.node_index(&entry.head).is_none() {
            return Err(DecoupleError::UnknownNode(entry.head.clone()));
        }
        if !heads.contains(&entry.head) {
            heads.push(entry.head.clone());
        }
    }
    if heads.is_empty() {
        return Ok(Vec::new());
    }
    graph.reachable_from(&heads).map_err(|_| DecoupleError::InvalidGraph)
}

enum NodeMechanism<'a> {
    Fitted(&'a LocalModule),
    Replaced(Arc<dyn Mechanism>),
}

impl NodeMechanism<'_> {
    fn forward(&self, inputs: &[f64], mode: PropagationMode) -> ModuleOutput {
        match self {
            NodeMechanism::Fitted(m) => m.forward(inputs, mode),
            NodeMechanism::Replaced(m) => m.forward(inputs, mode),
        }
    }
}

/// Prepared propagation engine. Indices, encoded reference values, and the
/// row-independent affected set are computed once at construction; the
/// engine itself is immutable and rows may be processed in parallel.
pub struct Decoupler<'a> {
    graph: &'a CausalGraph,
    schema: &'a Schema,
    mode: PropagationMode,
    outcome_idx: usize,
    topo: Vec<usize>,
    parents_of: Vec<Vec<usize>>,
    mechanisms: Vec<Option<NodeMechanism<'a>>>,
    /// Encoded reference value per keyed edge (tail_idx, head_idx).
    ref_encoded: HashMap<(usize, usize), Vec<f64>>,
    affected: Vec<bool>,
    choices: Vec<EdgeChoice>,
}

impl std::fmt::Debug for Decoupler<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Decoupler")
            .field("outcome", &self.graph.nodes()[self.outcome_idx])
            .field("affected", &self.trace_summary().affected)
            .finish_non_exhaustive()
    }
}

impl<'a> Decoupler<'a> {
    pub fn new(
        graph: &'a CausalGraph,
        bundle: &'a ModelBundle,
        schema: &'a Schema,
        refmap: &ReferencePointMap,
        overrides: &Overrides,
        outcome: &NodeId,
        mode: PropagationMode,
    ) -> Result<Self, DecoupleError> {
        let expected = graph.fingerprint();
        if bundle.graph_fingerprint != expected {
            return Err(DecoupleError::FingerprintMismatch {
                expected,
                got: bundle.graph_fingerprint.clone(),
            });
        }
        refmap.validate(graph, schema)?;

        let index = graph.index_map();
        let n = graph.nodes().len();

        let topo_nodes = graph.topo_sort().map_err(|_| DecoupleError::InvalidGraph)?;
        let topo: Vec<usize> = topo_nodes.iter().map(|node| index[node.as_str()]).collect();

        let mut parents_of = vec![Vec::new(); n];
        for (i, node) in graph.nodes().iter().enumerate() {
            let parents = graph.parents(node).map_err(|_| DecoupleError::InvalidGraph)?;
            parents_of[i] = parents.iter().map(|p| index[p.as_str()]).collect();
        }

        let outcome_idx = *index
            .get(outcome.as_str())
            .ok_or_else(|| DecoupleError::UnknownNode(outcome.clone()))?;
        if parents_of[outcome_idx].is_empty() {
            return Err(DecoupleError::OutcomeIsRoot(outcome.clone()));
        }

        // Resolve mechanisms: fitted module or override per non-root node.
        let mut mechanisms: Vec<Option<NodeMechanism<'a>>> = Vec::with_capacity(n);
        for (i, node) in graph.nodes().iter().enumerate() {
            if parents_of[i].is_empty() {
                if overrides.get(node).is_some() {
                    return Err(DecoupleError::OverrideOnRoot(node.clone()));
                }
                mechanisms.push(None);
                continue;
            }
            let module = bundle
                .module(node)
                .ok_or_else(|| DecoupleError::MissingModule(node.clone()))?;
            match overrides.get(node) {
                Some(replacement) => {
                    if replacement.input_width() != module.input_width {
                        return Err(DecoupleError::OverrideArity {
                            node: node.clone(),
                            expected: module.input_width,
                            got: replacement.input_width(),
                        });
                    }
                    mechanisms.push(Some(NodeMechanism::Replaced(Arc::clone(replacement))));
                }
                None => mechanisms.push(Some(NodeMechanism::Fitted(module))),
            }
        }

        let mut ref_encoded = HashMap::new();
        for entry in refmap.iter() {
            let t = index[entry.tail.as_str()];
            let h = index[entry.head.as_str()];
            let encoded = schema
                .encode_node_value(&entry.tail, &entry.value)
                .expect("validated above");
            ref_encoded.insert((t, h), encoded);
        }

        // Row-independent affected flags and per-edge instantiation choices.
        // A node recomputes iff any input is a reference point or an affected
        // value, or its mechanism was directly replaced.
        let mut affected = vec![false; n];
        let mut choices = Vec::new();
        for &v in &topo {
            if parents_of[v].is_empty() {
                continue;
            }
            let mut any = overrides.get(&graph.nodes()[v]).is_some();
            for &w in &parents_of[v] {
                let choice = if ref_encoded.contains_key(&(w, v)) {
                    InstantiationChoice::ReferencePoint
                } else if affected[w] {
                    InstantiationChoice::DownstreamOfReference
                } else {
                    InstantiationChoice::Observed
                };
                if choice != InstantiationChoice::Observed {
                    any = true;
                }
                choices.push(EdgeChoice {
                    edge: Edge::new(graph.nodes()[w].clone(), graph.nodes()[v].clone()),
                    choice,
                });
            }
            affected[v] = any;
        }

        Ok(Decoupler {
            graph,
            schema,
            mode,
            outcome_idx,
            topo,
            parents_of,
            mechanisms,
            ref_encoded,
            affected,
            choices,
        })
    }

    pub fn trace_summary(&self) -> TraceSummary {
        TraceSummary {
            affected: self
                .graph
                .nodes()
                .iter()
                .enumerate()
                .filter(|(i, _)| self.affected[*i])
                .map(|(_, n)| n.clone())
                .collect(),
            choices: self.choices.clone(),
        }
    }

    /// Core propagation over one row of pre-encoded observed node values.
    /// Returns the outcome score and every node's instantiated value.
    fn propagate(&self, observed: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n = observed.len();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut outcome_score = f64::NAN;
        for &v in &self.topo {
            let parents = &self.parents_of[v];
            if parents.is_empty() {
                values[v] = observed[v].clone();
                continue;
            }
            let recompute = self.affected[v] || v == self.outcome_idx;
            if !recompute {
                values[v] = observed[v].clone();
                continue;
            }
            let mut inputs = Vec::new();
            for &w in parents {
                match self.ref_encoded.get(&(w, v)) {
                    Some(reference) => inputs.extend_from_slice(reference),
                    // For unaffected parents values[w] already holds the
                    // observed value, so one lookup covers both options.
                    None => inputs.extend_from_slice(&values[w]),
                }
            }
            let out = self.mechanisms[v]
                .as_ref()
                .expect("non-root mechanism resolved at build")
                .forward(&inputs, self.mode);
            if v == self.outcome_idx {
                outcome_score = out.score;
            }
            values[v] = if self.affected[v] { out.propagated } else { observed[v].clone() };
        }
        (outcome_score, values)
    }

    fn encode_row(&self, dataset: &Dataset, row: usize) -> Result<Vec<Vec<f64>>, DecoupleError> {
        self.graph
            .nodes()
            .iter()
            .map(|node| {
                let range = self
                    .schema
                    .node_column_range(node)
                    .ok_or_else(|| DecoupleError::UnknownNode(node.clone()))?;
                let values: Vec<Value> = range.map(|c| dataset.value(c, row).clone()).collect();
                Ok(self.schema.encode_node_value(node, &values)?)
            })
            .collect()
    }

    /// Applies the value instantiation rule to one row and records the full
    /// per-node trace.
    pub fn instantiate_row(
        &self,
        dataset: &Dataset,
        row: usize,
    ) -> Result<PropagationState, DecoupleError> {
        if dataset.schema() != self.schema {
            return Err(DecoupleError::SchemaMismatch);
        }
        if row >= dataset.n_rows() {
            return Err(DecoupleError::RowOutOfRange { row, rows: dataset.n_rows() });
        }
        let observed = self.encode_row(dataset, row)?;
        let (outcome, values) = self.propagate(&observed);

        let mut choice_iter = self.choices.iter();
        let nodes = self
            .graph
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, node)| NodeTrace {
                node: node.clone(),
                affected: self.affected[i],
                value: values[i].clone(),
                inputs: Vec::new(),
            })
            .collect::<Vec<_>>();
        // Choices were recorded in topo order; redistribute them per node.
        let mut nodes = nodes;
        for &v in &self.topo {
            let count = self.parents_of[v].len();
            for _ in 0..count {
                let choice = choice_iter.next().expect("one choice per input edge").clone();
                nodes[v].inputs.push(choice);
            }
        }

        Ok(PropagationState { outcome, nodes })
    }

    /// Outcome score for one row of a pre-encoded dataset, without building
    /// the per-node trace. Only affected nodes and the outcome run their
    /// mechanisms; everything else is a borrowed observed slice.
    pub fn score_row(&self, encoded: &EncodedDataset, row: usize) -> f64 {
        let n = self.graph.nodes().len();
        let mut computed: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut outcome_score = f64::NAN;
        for &v in &self.topo {
            let parents = &self.parents_of[v];
            if parents.is_empty() || !(self.affected[v] || v == self.outcome_idx) {
                continue;
            }
            let mut inputs = Vec::new();
            for &w in parents {
                let slice: &[f64] = match self.ref_encoded.get(&(w, v)) {
                    Some(reference) => reference,
                    None => match &computed[w] {
                        Some(value) => value,
                        None => &encoded.blocks[w][row],
                    },
                };
                inputs.extend_from_slice(slice);
            }
            let out = self.mechanisms[v]
                .as_ref()
                .expect("non-root mechanism resolved at build")
                .forward(&inputs, self.mode);
            if v == self.outcome_idx {
                outcome_score = out.score;
            }
            if self.affected[v] {
                computed[v] = Some(out.propagated);
            }
        }
        outcome_score
    }

    /// Scores every row of a pre-encoded dataset, order-preserving.
    pub fn predict_scores(&self, encoded: &EncodedDataset) -> Vec<f64> {
        let n_rows = encoded.n_rows;
        if n_rows >= 1024 {
            (0..n_rows).into_par_iter().map(|row| self.score_row(encoded, row)).collect()
        } else {
            (0..n_rows).map(|row| self.score_row(encoded, row)).collect()
        }
    }

    /// Decoupled predictions for every row, order-preserving. Rows are
    /// independent; the trace summary is shared by all rows because it does
    /// not depend on row values.
    pub fn predict_all(&self, dataset: &Dataset) -> Result<Predictions, DecoupleError> {
        if dataset.schema() != self.schema {
            return Err(DecoupleError::SchemaMismatch);
        }
        let encoded = EncodedDataset::new(self.graph, dataset)?;
        Ok(Predictions { scores: self.predict_scores(&encoded), summary: self.trace_summary() })
    }
}
