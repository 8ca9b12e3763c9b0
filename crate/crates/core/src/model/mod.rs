//! Per-node hypothesis classes and unconstrained local fits.
//!
//! Each non-root node gets one frozen `LocalModule` predicting its columns
//! from the encoded values of its direct parents. Fitting one module never
//! reads another's parameters, so modules may be fitted in any order (or in
//! parallel) with identical results under fixed seeds.

mod linear;
mod net;

pub use linear::{ols, OlsError};
pub(crate) use linear::solve_normal_equations as linear_solve;
pub use net::{Glm, Mlp, OutputKind, SELU_ALPHA, SELU_LAMBDA};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, DataError, Dataset, Schema, Value};
use crate::graph::{CausalGraph, NodeId};
use crate::util::{derive_seed, Fnv};

use net::{train_glm, train_mlp, SgdParams, Targets, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("design matrix for `{node}` is singular")]
    SingularDesign { node: NodeId },
    #[error("training loss for `{node}` became non-finite")]
    NonFiniteLoss { node: NodeId },
    #[error("module expects {expected} encoded inputs, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("hypothesis `{kind:?}` cannot model {target_kind} column `{column}` of `{node}`")]
    IncompatibleKind { node: NodeId, column: String, target_kind: &'static str, kind: HypothesisKind },
    #[error("no hypothesis declared for non-root node `{0}`")]
    MissingHypothesis(NodeId),
    #[error("linear fit for `{node}` needs at least {needed} rows, got {rows}")]
    InsufficientRows { node: NodeId, needed: usize, rows: usize },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("no module fitted for node `{0}`")]
    NoModule(NodeId),
    #[error("fitting module for `{node}`: {source}")]
    Fit { node: NodeId, #[source] source: Box<ModelError> },
    #[error("bundle format error: {0}")]
    Format(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Hypothesis class of one local module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisKind {
    /// Exact ordinary-least-squares fit; continuous targets only.
    Linear,
    /// Single-layer sigmoid/softmax model; binary or categorical targets.
    Logistic,
    /// Two-hidden-layer SELU network with batch normalization, hidden width
    /// `max(5, in_degree)`; regression or classification output per column.
    Mlp,
}

/// Gradient-training hyperparameters (ignored by the linear hypothesis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { epochs: 100, batch_size: 256, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub kind: HypothesisKind,
    #[serde(default)]
    pub train: TrainParams,
}

impl HypothesisSpec {
    pub fn new(kind: HypothesisKind) -> Self {
        HypothesisSpec { kind, train: TrainParams::default() }
    }
}

/// How classifier nodes hand values to downstream modules: the most probable
/// level as a hard one-hot, or the probabilities themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    #[default]
    Hard,
    Expected,
}

/// Exact linear head: one coefficient per encoded input plus intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum HeadModel {
    Linear(LinearHead),
    Logistic(Glm),
    Softmax(Glm),
    MlpRegressor(Mlp),
    MlpBinary(Mlp),
    MlpSoftmax(Mlp),
}

/// Fitted predictor for one target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub column: String,
    pub kind: ColumnKind,
    pub model: HeadModel,
}

impl Head {
    fn param_count(&self) -> usize {
        match &self.model {
            HeadModel::Linear(l) => l.weights.len() + 1,
            HeadModel::Logistic(g) | HeadModel::Softmax(g) => g.param_count(),
            HeadModel::MlpRegressor(m) | HeadModel::MlpBinary(m) | HeadModel::MlpSoftmax(m) => {
                m.param_count()
            }
        }
    }

    fn mac_count(&self) -> usize {
        match &self.model {
            HeadModel::Linear(l) => l.weights.len(),
            HeadModel::Logistic(g) | HeadModel::Softmax(g) => g.mac_count(),
            HeadModel::MlpRegressor(m) | HeadModel::MlpBinary(m) | HeadModel::MlpSoftmax(m) => {
                m.mac_count()
            }
        }
    }

    /// (score, encoded value for downstream propagation)
    fn predict(&self, inputs: &[f64], mode: PropagationMode) -> (f64, Vec<f64>) {
        match &self.model {
            HeadModel::Linear(l) => {
                let mut acc = l.intercept;
                for (w, x) in l.weights.iter().zip(inputs) {
                    acc += w * x;
                }
                (acc, vec![acc])
            }
            HeadModel::Logistic(g) => {
                let p = g.forward(inputs)[0];
                (p, vec![binary_value(p, mode)])
            }
            HeadModel::Softmax(g) => {
                let probs = g.forward(inputs);
                let score = *probs.last().expect("softmax head has classes");
                (score, propagate_probs(probs, mode))
            }
            HeadModel::MlpRegressor(m) => {
                let v = m.forward(inputs)[0];
                (v, vec![v])
            }
            HeadModel::MlpBinary(m) => {
                let p = m.forward(inputs)[0];
                (p, vec![binary_value(p, mode)])
            }
            HeadModel::MlpSoftmax(m) => {
                let probs = m.forward(inputs);
                let score = *probs.last().expect("softmax head has classes");
                (score, propagate_probs(probs, mode))
            }
        }
    }

    fn visit_params(&self, f: &mut impl FnMut(f64)) {
        match &self.model {
            HeadModel::Linear(l) => {
                for v in &l.weights {
                    f(*v);
                }
                f(l.intercept);
            }
            HeadModel::Logistic(g) | HeadModel::Softmax(g) => g.visit_params(f),
            HeadModel::MlpRegressor(m) | HeadModel::MlpBinary(m) | HeadModel::MlpSoftmax(m) => {
                m.visit_params(f)
            }
        }
    }
}

fn binary_value(p: f64, mode: PropagationMode) -> f64 {
    match mode {
        PropagationMode::Hard => {
            if p >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        PropagationMode::Expected => p,
    }
}

fn propagate_probs(probs: Vec<f64>, mode: PropagationMode) -> Vec<f64> {
    match mode {
        PropagationMode::Expected => probs,
        PropagationMode::Hard => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            let mut one_hot = vec![0.0; probs.len()];
            one_hot[best] = 1.0;
            one_hot
        }
    }
}

/// Output of one module for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleOutput {
    /// Real-valued score of the first target column: the prediction for
    /// regressors, the probability of the positive / last-declared level for
    /// classifiers.
    pub score: f64,
    /// Encoded node value handed to downstream modules.
    pub propagated: Vec<f64>,
}

/// Frozen local predictor of one node from its direct parents.
///
/// Multi-column nodes hold one head per column over the shared encoded
/// parent inputs; `score` reports the first column's head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModule {
    pub target: NodeId,
    pub parent_order: Vec<NodeId>,
    pub hypothesis: HypothesisSpec,
    pub input_width: usize,
    /// Names of the encoded inputs, `column` or `column=level`.
    pub feature_names: Vec<String>,
    pub heads: Vec<Head>,
    /// Mean final training loss across heads (half squared error for
    /// regression, cross entropy for classification).
    pub train_loss: f64,
}

impl LocalModule {
    pub fn predict_encoded(
        &self,
        inputs: &[f64],
        mode: PropagationMode,
    ) -> Result<ModuleOutput, ModelError> {
        if inputs.len() != self.input_width {
            return Err(ModelError::ArityMismatch { expected: self.input_width, got: inputs.len() });
        }
        let mut score = f64::NAN;
        let mut propagated = Vec::new();
        for (i, head) in self.heads.iter().enumerate() {
            let (s, value) = head.predict(inputs, mode);
            if i == 0 {
                score = s;
            }
            propagated.extend(value);
        }
        Ok(ModuleOutput { score, propagated })
    }

    /// Typed prediction: one value slice per parent, in parent order.
    pub fn predict_typed(
        &self,
        schema: &Schema,
        parent_values: &[&[Value]],
        mode: PropagationMode,
    ) -> Result<ModuleOutput, ModelError> {
        if parent_values.len() != self.parent_order.len() {
            return Err(ModelError::ArityMismatch {
                expected: self.parent_order.len(),
                got: parent_values.len(),
            });
        }
        let mut encoded = Vec::with_capacity(self.input_width);
        for (node, values) in self.parent_order.iter().zip(parent_values) {
            encoded.extend(schema.encode_node_value(node, values)?);
        }
        self.predict_encoded(&encoded, mode)
    }

    /// Fitted coefficient of a named encoded input on the first (or only)
    /// linear head, or `None` for other hypotheses.
    pub fn linear_coefficient(&self, feature: &str) -> Option<f64> {
        let HeadModel::Linear(l) = &self.heads.first()?.model else {
            return None;
        };
        let idx = self.feature_names.iter().position(|f| f == feature)?;
        l.weights.get(idx).copied()
    }

    pub fn linear_intercept(&self) -> Option<f64> {
        match &self.heads.first()?.model {
            HeadModel::Linear(l) => Some(l.intercept),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.heads.iter().map(Head::param_count).sum()
    }

    pub fn mac_count(&self) -> usize {
        self.heads.iter().map(Head::mac_count).sum()
    }

    fn visit_params(&self, f: &mut impl FnMut(f64)) {
        for head in &self.heads {
            head.visit_params(f);
        }
    }
}

/// Extracts training targets for one column.
enum ColumnTargets {
    Real(Vec<f64>),
    Class(Vec<u32>, usize),
}

fn column_targets(dataset: &Dataset, column: &str, kind: &ColumnKind) -> ColumnTargets {
    let values = dataset.column(column).expect("column checked");
    match kind {
        ColumnKind::Binary | ColumnKind::Continuous => ColumnTargets::Real(
            values.iter().map(|v| v.as_f64().expect("numeric value")).collect(),
        ),
        ColumnKind::Categorical(levels) => ColumnTargets::Class(
            values
                .iter()
                .map(|v| match v {
                    Value::Level(i) => *i,
                    _ => unreachable!("dataset kind-checked"),
                })
                .collect(),
            levels.len(),
        ),
    }
}

/// Fits one local module without any fairness constraint. Linear fits are
/// the exact normal-equation solution; gradient fits are seeded per
/// `(target, column)` so results do not depend on fitting order.
pub fn fit_local(
    dataset: &Dataset,
    target: &NodeId,
    parents: &[NodeId],
    hypothesis: &HypothesisSpec,
) -> Result<LocalModule, ModelError> {
    let schema = dataset.schema();
    let var = schema
        .variable(target)
        .ok_or_else(|| ModelError::UnknownNode(target.clone()))?;

    // Encoded design, row major.
    let n = dataset.n_rows();
    let mut feature_names = Vec::new();
    let mut blocks = Vec::new();
    for parent in parents {
        feature_names.extend(
            schema
                .encoded_feature_names(parent)
                .ok_or_else(|| ModelError::UnknownNode(parent.clone()))?,
        );
        blocks.push(dataset.encode_node(parent)?);
    }
    let d = feature_names.len();
    let mut design_rows: Vec<Vec<f64>> = vec![Vec::with_capacity(d); n];
    for block in &blocks {
        for (row, values) in design_rows.iter_mut().zip(block) {
            row.extend_from_slice(values);
        }
    }

    if hypothesis.kind == HypothesisKind::Linear && n < d + 1 {
        return Err(ModelError::InsufficientRows { node: target.clone(), needed: d + 1, rows: n });
    }

    let flat: Vec<f64> = design_rows.iter().flatten().copied().collect();
    let width = mlp_hidden_width(parents.len());

    let mut heads = Vec::with_capacity(var.columns.len());
    let mut loss_total = 0.0;
    for col in &var.columns {
        let seed = derive_seed(hypothesis.train.seed, &format!("{}/{}", target, col.name));
        let sgd = SgdParams {
            epochs: hypothesis.train.epochs,
            batch_size: hypothesis.train.batch_size,
            learning_rate: hypothesis.train.learning_rate,
            seed,
        };
        let targets = column_targets(dataset, &col.name, &col.kind);
        let (model, loss) = match (hypothesis.kind, &targets) {
            (HypothesisKind::Linear, ColumnTargets::Real(y)) => {
                if !matches!(col.kind, ColumnKind::Continuous) {
                    return Err(incompatible(target, col, hypothesis.kind));
                }
                let beta = ols(&design_rows, y).map_err(|e| match e {
                    OlsError::SingularDesign => ModelError::SingularDesign { node: target.clone() },
                    OlsError::ShapeMismatch { .. } => {
                        ModelError::ArityMismatch { expected: d, got: 0 }
                    }
                })?;
                let (weights, intercept) = (beta[..d].to_vec(), beta[d]);
                let head = LinearHead { weights, intercept };
                let mse = y
                    .iter()
                    .zip(&design_rows)
                    .map(|(yi, row)| {
                        let pred: f64 = head.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
                            + head.intercept;
                        0.5 * (pred - yi) * (pred - yi)
                    })
                    .sum::<f64>()
                    / n as f64;
                (HeadModel::Linear(head), mse)
            }
            (HypothesisKind::Linear, ColumnTargets::Class(..)) => {
                return Err(incompatible(target, col, hypothesis.kind));
            }
            (HypothesisKind::Logistic, ColumnTargets::Real(y)) => {
                if !matches!(col.kind, ColumnKind::Binary) {
                    return Err(incompatible(target, col, hypothesis.kind));
                }
                let glm = Glm::zeros(d, 1, OutputKind::Sigmoid);
                let (fitted, report) = train_glm(glm, &flat, &Targets::Real(y), sgd)
                    .map_err(|e| train_error(target, e))?;
                (HeadModel::Logistic(fitted), report.final_loss)
            }
            (HypothesisKind::Logistic, ColumnTargets::Class(y, k)) => {
                let glm = Glm::zeros(d, *k, OutputKind::Softmax);
                let (fitted, report) = train_glm(glm, &flat, &Targets::Class(y), sgd)
                    .map_err(|e| train_error(target, e))?;
                (HeadModel::Softmax(fitted), report.final_loss)
            }
            (HypothesisKind::Mlp, ColumnTargets::Real(y)) => {
                let (out_kind, wrap): (OutputKind, fn(Mlp) -> HeadModel) =
                    if matches!(col.kind, ColumnKind::Binary) {
                        (OutputKind::Sigmoid, HeadModel::MlpBinary)
                    } else {
                        (OutputKind::Identity, HeadModel::MlpRegressor)
                    };
                let mlp = Mlp::init(d, width, 1, out_kind, seed);
                let (fitted, report) = train_mlp(mlp, &flat, &Targets::Real(y), sgd)
                    .map_err(|e| train_error(target, e))?;
                (wrap(fitted), report.final_loss)
            }
            (HypothesisKind::Mlp, ColumnTargets::Class(y, k)) => {
                let mlp = Mlp::init(d, width, *k, OutputKind::Softmax, seed);
                let (fitted, report) = train_mlp(mlp, &flat, &Targets::Class(y), sgd)
                    .map_err(|e| train_error(target, e))?;
                log::debug!(
                    "{target}/{}: loss {} -> {}",
                    col.name,
                    report.first_epoch_loss,
                    report.final_loss
                );
                (HeadModel::MlpSoftmax(fitted), report.final_loss)
            }
        };
        loss_total += loss;
        heads.push(Head { column: col.name.clone(), kind: col.kind.clone(), model });
    }

    Ok(LocalModule {
        target: target.clone(),
        parent_order: parents.to_vec(),
        hypothesis: *hypothesis,
        input_width: d,
        feature_names,
        heads,
        train_loss: loss_total / var.columns.len() as f64,
    })
}

fn incompatible(node: &NodeId, col: &crate::data::ColumnSpec, kind: HypothesisKind) -> ModelError {
    ModelError::IncompatibleKind {
        node: node.clone(),
        column: col.name.clone(),
        target_kind: col.kind.describe(),
        kind,
    }
}

fn train_error(node: &NodeId, e: TrainError) -> ModelError {
    match e {
        TrainError::NonFiniteLoss { .. } => ModelError::NonFiniteLoss { node: node.clone() },
        TrainError::NoRows => {
            ModelError::InsufficientRows { node: node.clone(), needed: 1, rows: 0 }
        }
    }
}

/// Hidden width rule for the MLP hypothesis: `max(5, in_degree)`.
pub fn mlp_hidden_width(in_degree: usize) -> usize {
    in_degree.max(5)
}

/// One fitted module per non-root node, bound to the graph it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub graph_fingerprint: String,
    modules: Vec<LocalModule>,
}

const BUNDLE_FORMAT: &str = "decoupler-bundle";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleEnvelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    bundle: ModelBundle,
}

impl ModelBundle {
    /// Binds explicitly constructed modules to a graph. Callers are
    /// responsible for providing one module per non-root node.
    pub fn from_modules(graph: &CausalGraph, modules: Vec<LocalModule>) -> Self {
        ModelBundle { graph_fingerprint: graph.fingerprint(), modules }
    }

    /// Fits every non-root node's module; modules are independent, so they
    /// are fitted in parallel. Declaration order is preserved in the result.
    pub fn fit_all(
        graph: &CausalGraph,
        dataset: &Dataset,
        hypotheses: &HashMap<NodeId, HypothesisSpec>,
    ) -> Result<Self, ModelError> {
        dataset.schema().check_graph(graph)?;
        let mut jobs = Vec::new();
        for node in graph.nodes() {
            let parents = graph.parents(node).map_err(|_| ModelError::UnknownNode(node.clone()))?;
            if parents.is_empty() {
                continue;
            }
            let spec = hypotheses
                .get(node)
                .copied()
                .ok_or_else(|| ModelError::MissingHypothesis(node.clone()))?;
            jobs.push((node.clone(), parents, spec));
        }
        if jobs.is_empty() {
            log::warn!("graph has no non-root nodes; bundle is empty");
        }

        let modules: Vec<LocalModule> = jobs
            .into_par_iter()
            .map(|(node, parents, spec)| {
                fit_local(dataset, &node, &parents, &spec)
                    .map_err(|e| ModelError::Fit { node: node.clone(), source: Box::new(e) })
            })
            .collect::<Result<_, _>>()?;

        Ok(ModelBundle { graph_fingerprint: graph.fingerprint(), modules })
    }

    /// Builds an untrained bundle with seeded initial parameters. Used for
    /// scale and cost analysis where training would be beside the point.
    pub fn initialize(
        graph: &CausalGraph,
        schema: &Schema,
        hypotheses: &HashMap<NodeId, HypothesisSpec>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        schema.check_graph(graph)?;
        let mut modules = Vec::new();
        for node in graph.nodes() {
            let parents = graph.parents(node).map_err(|_| ModelError::UnknownNode(node.clone()))?;
            if parents.is_empty() {
                continue;
            }
            let spec = hypotheses
                .get(node)
                .copied()
                .ok_or_else(|| ModelError::MissingHypothesis(node.clone()))?;
            let var = schema
                .variable(node)
                .ok_or_else(|| ModelError::UnknownNode(node.clone()))?;
            let mut feature_names = Vec::new();
            for parent in &parents {
                feature_names.extend(
                    schema
                        .encoded_feature_names(parent)
                        .ok_or_else(|| ModelError::UnknownNode(parent.clone()))?,
                );
            }
            let d = feature_names.len();
            let width = mlp_hidden_width(parents.len());
            let mut heads = Vec::new();
            for col in &var.columns {
                let head_seed = derive_seed(seed, &format!("{}/{}", node, col.name));
                let model = match (spec.kind, &col.kind) {
                    (HypothesisKind::Linear, ColumnKind::Continuous) => {
                        HeadModel::Linear(LinearHead { weights: vec![0.0; d], intercept: 0.0 })
                    }
                    (HypothesisKind::Logistic, ColumnKind::Binary) => {
                        HeadModel::Logistic(Glm::zeros(d, 1, OutputKind::Sigmoid))
                    }
                    (HypothesisKind::Logistic, ColumnKind::Categorical(levels)) => {
                        HeadModel::Softmax(Glm::zeros(d, levels.len(), OutputKind::Softmax))
                    }
                    (HypothesisKind::Mlp, ColumnKind::Continuous) => HeadModel::MlpRegressor(
                        Mlp::init(d, width, 1, OutputKind::Identity, head_seed),
                    ),
                    (HypothesisKind::Mlp, ColumnKind::Binary) => HeadModel::MlpBinary(Mlp::init(
                        d,
                        width,
                        1,
                        OutputKind::Sigmoid,
                        head_seed,
                    )),
                    (HypothesisKind::Mlp, ColumnKind::Categorical(levels)) => HeadModel::MlpSoftmax(
                        Mlp::init(d, width, levels.len(), OutputKind::Softmax, head_seed),
                    ),
                    _ => return Err(incompatible(node, col, spec.kind)),
                };
                heads.push(Head { column: col.name.clone(), kind: col.kind.clone(), model });
            }
            modules.push(LocalModule {
                target: node.clone(),
                parent_order: parents,
                hypothesis: spec,
                input_width: d,
                feature_names,
                heads,
                train_loss: 0.0,
            });
        }
        Ok(ModelBundle { graph_fingerprint: graph.fingerprint(), modules })
    }

    pub fn module(&self, node: &NodeId) -> Option<&LocalModule> {
        self.modules.iter().find(|m| &m.target == node)
    }

    pub fn modules(&self) -> &[LocalModule] {
        &self.modules
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    /// Total learnable parameters: weights, biases, and batch-norm
    /// scale/shift; running statistics excluded.
    pub fn param_count(&self) -> usize {
        self.modules.iter().map(LocalModule::param_count).sum()
    }

    /// Multiplier-accumulate estimate of one full forward pass over every
    /// module for a single row: one MAC per weight, one each for the
    /// batch-norm scale and shift per hidden feature.
    pub fn mac_count(&self) -> usize {
        self.modules.iter().map(LocalModule::mac_count).sum()
    }

    /// Stable hash of every parameter bit (including batch-norm running
    /// statistics): any mutation after fitting changes this value.
    pub fn param_fingerprint(&self) -> String {
        let mut h = Fnv::new();
        for module in &self.modules {
            h.write_str(module.target.as_str());
            module.visit_params(&mut |v| h.write_f64(v));
        }
        h.finish_hex()
    }

    /// Runs every module on observed parent values (no reference points),
    /// row-parallel; returns the per-module scores per row, in module order.
    /// This is the plain full-graph inference pass used for scaling
    /// measurements.
    pub fn forward_all(
        &self,
        dataset: &Dataset,
        mode: PropagationMode,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let encoded: Vec<Vec<Vec<f64>>> = self
            .modules
            .iter()
            .map(|m| {
                let mut rows: Vec<Vec<f64>> =
                    vec![Vec::with_capacity(m.input_width); dataset.n_rows()];
                for parent in &m.parent_order {
                    let block = dataset.encode_node(parent)?;
                    for (row, values) in rows.iter_mut().zip(&block) {
                        row.extend_from_slice(values);
                    }
                }
                Ok(rows)
            })
            .collect::<Result<_, ModelError>>()?;

        (0..dataset.n_rows())
            .into_par_iter()
            .map(|row| {
                self.modules
                    .iter()
                    .zip(&encoded)
                    .map(|(m, rows)| m.predict_encoded(&rows[row], mode).map(|o| o.score))
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let envelope = BundleEnvelope {
            format: BUNDLE_FORMAT.to_owned(),
            version: BUNDLE_VERSION,
            bundle: self.clone(),
        };
        serde_json::to_string(&envelope).map_err(|e| ModelError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let envelope: BundleEnvelope =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if envelope.format != BUNDLE_FORMAT {
            return Err(ModelError::Format(format!("unexpected format `{}`", envelope.format)));
        }
        if envelope.version != BUNDLE_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported bundle version {} (expected {BUNDLE_VERSION})",
                envelope.version
            )));
        }
        Ok(envelope.bundle)
    }
}
