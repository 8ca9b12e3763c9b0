//! Reference-point configuration to the greatest benefit of a declared
//! subgroup: simulated annealing over the product of tail-node domains, with
//! an exhaustive oracle for small all-discrete spaces.
//!
//! The search never refits anything; every candidate is evaluated through
//! the frozen bundle, and the identity (empty) configuration is always part
//! of the comparison set, so the returned configuration never scores below
//! the unconstrained baseline on the subgroup.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, DataError, Dataset, Value};
use crate::decouple::{DecoupleError, Decoupler, EncodedDataset, Overrides, ReferencePointMap};
use crate::graph::{CausalGraph, Edge, NodeId};
use crate::model::{ModelBundle, PropagationMode};
use crate::util::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("predicate selects no rows")]
    EmptySubpopulation,
    #[error("predicate references unknown column `{0}`")]
    UnknownColumn(String),
    #[error("predicate condition on column `{column}` does not fit its kind: {detail}")]
    BadCondition { column: String, detail: String },
    #[error("search space too large: {0}")]
    SpaceTooLarge(String),
    #[error("invalid annealing config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Decouple(#[from] DecoupleError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One conjunct of the subgroup predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Column equals a level: a declared categorical level, or `0`/`1` for
    /// binary columns.
    Equals { column: String, level: String },
    /// Column value is one of the listed levels.
    In { column: String, levels: Vec<String> },
    /// Numeric column value lies in `[min, max]` (inclusive).
    Range { column: String, min: f64, max: f64 },
}

impl Condition {
    fn column(&self) -> &str {
        match self {
            Condition::Equals { column, .. }
            | Condition::In { column, .. }
            | Condition::Range { column, .. } => column,
        }
    }
}

/// Conjunction of per-column conditions selecting the subgroup whose mean
/// predicted outcome the search maximizes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubgroupPredicate {
    pub conditions: Vec<Condition>,
}

impl SubgroupPredicate {
    pub fn new(conditions: Vec<Condition>) -> Self {
        SubgroupPredicate { conditions }
    }

    /// Indices of the rows matching every condition, in row order.
    pub fn select(&self, dataset: &Dataset) -> Result<Vec<usize>, SearchError> {
        let mut mask = vec![true; dataset.n_rows()];
        for cond in &self.conditions {
            let column = cond.column();
            let spec = dataset
                .schema()
                .column_spec(column)
                .ok_or_else(|| SearchError::UnknownColumn(column.to_owned()))?;
            let values = dataset.column(column).expect("column exists");
            for (i, value) in values.iter().enumerate() {
                if mask[i] {
                    mask[i] = match_condition(cond, value, &spec.kind)?;
                }
            }
        }
        Ok(mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect())
    }
}

fn match_condition(cond: &Condition, value: &Value, kind: &ColumnKind) -> Result<bool, SearchError> {
    let level_matches = |level: &str| -> Result<bool, SearchError> {
        match (value, kind) {
            (Value::Bool(b), ColumnKind::Binary) => match level {
                "0" | "false" => Ok(!*b),
                "1" | "true" => Ok(*b),
                _ => Err(SearchError::BadCondition {
                    column: cond.column().to_owned(),
                    detail: format!("`{level}` is not a binary level"),
                }),
            },
            (Value::Level(i), ColumnKind::Categorical(levels)) => {
                Ok(levels.get(*i as usize).map(String::as_str) == Some(level))
            }
            (Value::Real(v), ColumnKind::Continuous) => match level.parse::<f64>() {
                Ok(target) => Ok(*v == target),
                Err(_) => Err(SearchError::BadCondition {
                    column: cond.column().to_owned(),
                    detail: format!("`{level}` is not numeric"),
                }),
            },
            _ => Ok(false),
        }
    };
    match cond {
        Condition::Equals { level, .. } => level_matches(level),
        Condition::In { levels, .. } => {
            for level in levels {
                if level_matches(level)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Condition::Range { min, max, .. } => match value.as_f64() {
            Some(v) => Ok(v >= *min && v <= *max),
            None => Err(SearchError::BadCondition {
                column: cond.column().to_owned(),
                detail: "range condition on a categorical column".to_owned(),
            }),
        },
    }
}

/// Annealing schedule. Defaults: T0 = 1.0, geometric cooling 0.995 per
/// iteration, 5000 iterations, 3 restarts, proposal scale 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealingConfig {
    pub initial_temp: f64,
    pub cooling: f64,
    pub iterations: usize,
    pub proposal_scale: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        AnnealingConfig {
            initial_temp: 1.0,
            cooling: 0.995,
            iterations: 5000,
            proposal_scale: 1.0,
            restarts: 3,
            seed: 0,
        }
    }
}

impl AnnealingConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.initial_temp <= 0.0 {
            return Err(SearchError::InvalidConfig(format!(
                "initial_temp {} must be positive",
                self.initial_temp
            )));
        }
        if !(0.0 < self.cooling && self.cooling < 1.0) {
            return Err(SearchError::InvalidConfig(format!(
                "cooling {} must lie in (0, 1)",
                self.cooling
            )));
        }
        if self.proposal_scale <= 0.0 {
            return Err(SearchError::InvalidConfig(format!(
                "proposal_scale {} must be positive",
                self.proposal_scale
            )));
        }
        if self.restarts == 0 {
            return Err(SearchError::InvalidConfig("restarts must be >= 1".to_owned()));
        }
        Ok(())
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub chain: usize,
    pub iteration: usize,
    pub temperature: f64,
    pub candidate: ReferencePointMap,
    pub objective: f64,
    pub accepted: bool,
    pub best_so_far: f64,
}

/// Full annealing history; `baseline_objective` is the identity (empty
/// refmap) objective, always evaluated first.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub baseline_objective: f64,
    pub best_objective: f64,
    pub steps: Vec<TraceStep>,
}

impl SearchTrace {
    /// CSV export for convergence plots: one row per evaluated candidate.
    pub fn write_csv<W: Write>(&self, writer: W, dataset: &Dataset) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["chain", "iteration", "temperature", "objective", "accepted", "best_so_far", "candidate"])?;
        for step in &self.steps {
            w.write_record(&[
                step.chain.to_string(),
                step.iteration.to_string(),
                format!("{}", step.temperature),
                format!("{}", step.objective),
                step.accepted.to_string(),
                format!("{}", step.best_so_far),
                step.candidate.describe(dataset.schema()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean predicted outcome over the subgroup rows selected by `predicate`
/// (larger is more favorable).
pub fn objective(
    refmap: &ReferencePointMap,
    graph: &CausalGraph,
    bundle: &ModelBundle,
    dataset: &Dataset,
    predicate: &SubgroupPredicate,
    outcome: &NodeId,
    mode: PropagationMode,
) -> Result<f64, SearchError> {
    let rows = predicate.select(dataset)?;
    if rows.is_empty() {
        return Err(SearchError::EmptySubpopulation);
    }
    let subgroup = dataset.select_rows(&rows);
    subgroup_mean(refmap, graph, bundle, &subgroup, outcome, mode)
}

/// Mean score over an already-selected subgroup dataset.
fn subgroup_mean(
    refmap: &ReferencePointMap,
    graph: &CausalGraph,
    bundle: &ModelBundle,
    subgroup: &Dataset,
    outcome: &NodeId,
    mode: PropagationMode,
) -> Result<f64, SearchError> {
    let encoded = EncodedDataset::new(graph, subgroup)?;
    subgroup_mean_encoded(refmap, graph, bundle, subgroup.schema(), &encoded, outcome, mode)
}

/// Hot path shared by the annealing loop: the subgroup is encoded once and
/// every candidate is scored against it.
fn subgroup_mean_encoded(
    refmap: &ReferencePointMap,
    graph: &CausalGraph,
    bundle: &ModelBundle,
    schema: &crate::data::Schema,
    encoded: &EncodedDataset,
    outcome: &NodeId,
    mode: PropagationMode,
) -> Result<f64, SearchError> {
    let engine = Decoupler::new(graph, bundle, schema, refmap, &Overrides::new(), outcome, mode)?;
    let scores = engine.predict_scores(encoded);
    // Sequential sum: the mean must be bit-identical regardless of thread count.
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Value domain of one column of a keyed edge's tail node.
#[derive(Debug, Clone)]
enum ColDomain {
    Binary,
    Levels(usize),
    Continuous { lo: f64, hi: f64, std: f64, mean: f64 },
}

#[derive(Debug, Clone)]
struct EdgeDomain {
    edge: Edge,
    columns: Vec<ColDomain>,
    /// Subgroup modal (discrete) or mean (continuous) value per column, used
    /// as the initial candidate.
    initial: Vec<Value>,
}

/// Domains are taken from the schema; continuous columns are bounded by the
/// observed empirical range of the full dataset.
fn build_domains(
    graph: &CausalGraph,
    dataset: &Dataset,
    subgroup_rows: &[usize],
) -> Result<Vec<EdgeDomain>, SearchError> {
    let schema = dataset.schema();
    let mut domains = Vec::new();
    for edge in graph.objectionable() {
        let var = schema
            .variable(&edge.tail)
            .ok_or_else(|| SearchError::UnknownColumn(edge.tail.as_str().to_owned()))?;
        let mut columns = Vec::new();
        let mut initial = Vec::new();
        for col in &var.columns {
            let values = dataset.column(&col.name).expect("schema column");
            match &col.kind {
                ColumnKind::Binary => {
                    columns.push(ColDomain::Binary);
                    let ones = subgroup_rows
                        .iter()
                        .filter(|&&r| matches!(values[r], Value::Bool(true)))
                        .count();
                    initial.push(Value::Bool(ones * 2 >= subgroup_rows.len()));
                }
                ColumnKind::Categorical(levels) => {
                    columns.push(ColDomain::Levels(levels.len()));
                    let mut counts = vec![0usize; levels.len()];
                    for &r in subgroup_rows {
                        if let Value::Level(i) = values[r] {
                            counts[i as usize] += 1;
                        }
                    }
                    let modal = counts
                        .iter()
                        .enumerate()
                        .max_by_key(|(_, &c)| c)
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    initial.push(Value::Level(modal as u32));
                }
                ColumnKind::Continuous => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    let mut sum_sq = 0.0;
                    for v in values {
                        let x = v.as_f64().expect("continuous value");
                        lo = lo.min(x);
                        hi = hi.max(x);
                        sum += x;
                        sum_sq += x * x;
                    }
                    let n = values.len() as f64;
                    let mean_all = sum / n;
                    let std = (sum_sq / n - mean_all * mean_all).max(0.0).sqrt();
                    let sub_mean = subgroup_rows
                        .iter()
                        .map(|&r| values[r].as_f64().expect("continuous value"))
                        .sum::<f64>()
                        / subgroup_rows.len().max(1) as f64;
                    columns.push(ColDomain::Continuous { lo, hi, std, mean: sub_mean });
                    initial.push(Value::Real(sub_mean));
                }
            }
        }
        domains.push(EdgeDomain { edge: edge.clone(), columns, initial });
    }
    Ok(domains)
}

fn initial_refmap(domains: &[EdgeDomain]) -> ReferencePointMap {
    let mut refmap = ReferencePointMap::new();
    for domain in domains {
        refmap.insert(domain.edge.clone(), domain.initial.clone());
    }
    refmap
}

/// Resamples one uniformly chosen (edge, column) coordinate of `current`:
/// uniform over levels for discrete columns, a clipped Gaussian step scaled
/// by the column's empirical standard deviation for continuous ones.
fn propose(
    current: &ReferencePointMap,
    domains: &[EdgeDomain],
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> ReferencePointMap {
    let mut next = current.clone();
    let e = rng.random_range(0..domains.len());
    let domain = &domains[e];
    let c = rng.random_range(0..domain.columns.len());
    let mut value = current.get(&domain.edge).expect("candidate keys every edge").to_vec();
    value[c] = match &domain.columns[c] {
        ColDomain::Binary => Value::Bool(rng.random_range(0..2) == 1),
        ColDomain::Levels(k) => Value::Level(rng.random_range(0..*k) as u32),
        ColDomain::Continuous { lo, hi, std, mean } => {
            let current_value = match value[c] {
                Value::Real(v) => v,
                _ => *mean,
            };
            let step_std = if *std > 0.0 { std * scale } else { scale };
            let normal = Normal::new(0.0, step_std).expect("positive std");
            Value::Real((current_value + normal.sample(rng)).clamp(*lo, *hi))
        }
    };
    next.insert(domain.edge.clone(), value);
    next
}

/// Simulated-annealing search over the product of tail-node domains of the
/// graph's flagged edges. Returns the best configuration seen across
/// restarts along with the full trace; the identity configuration is always
/// evaluated, so the result never scores below the baseline.
pub fn optimize(
    graph: &CausalGraph,
    bundle: &ModelBundle,
    dataset: &Dataset,
    predicate: &SubgroupPredicate,
    config: &AnnealingConfig,
    outcome: &NodeId,
    mode: PropagationMode,
) -> Result<(ReferencePointMap, SearchTrace), SearchError> {
    config.validate()?;
    let rows = predicate.select(dataset)?;
    if rows.is_empty() {
        return Err(SearchError::EmptySubpopulation);
    }
    let subgroup = dataset.select_rows(&rows);
    let encoded = EncodedDataset::new(graph, &subgroup)?;
    let eval = |refmap: &ReferencePointMap| -> Result<f64, SearchError> {
        subgroup_mean_encoded(refmap, graph, bundle, subgroup.schema(), &encoded, outcome, mode)
    };

    let empty = ReferencePointMap::new();
    let baseline = eval(&empty)?;
    let mut best = (empty, baseline);
    let mut steps = Vec::new();

    let domains = build_domains(graph, dataset, &rows)?;
    if domains.is_empty() {
        log::info!("no flagged edges: identity configuration, objective {baseline}");
        return Ok((
            best.0,
            SearchTrace { baseline_objective: baseline, best_objective: baseline, steps },
        ));
    }

    for chain in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("chain-{chain}")));
        let mut current = initial_refmap(&domains);
        let mut current_obj = eval(&current)?;
        if current_obj > best.1 {
            best = (current.clone(), current_obj);
        }
        steps.push(TraceStep {
            chain,
            iteration: 0,
            temperature: config.initial_temp,
            candidate: current.clone(),
            objective: current_obj,
            accepted: true,
            best_so_far: best.1,
        });

        let mut temperature = config.initial_temp;
        for iteration in 1..=config.iterations {
            temperature *= config.cooling;
            let candidate = propose(&current, &domains, config.proposal_scale, &mut rng);
            let objective = eval(&candidate)?;
            // Metropolis on the objective difference (maximizing).
            let accepted = objective >= current_obj
                || rng.random::<f64>() < ((objective - current_obj) / temperature).exp();
            if objective > best.1 {
                best = (candidate.clone(), objective);
            }
            steps.push(TraceStep {
                chain,
                iteration,
                temperature,
                candidate: candidate.clone(),
                objective,
                accepted,
                best_so_far: best.1,
            });
            if accepted {
                current = candidate;
                current_obj = objective;
            }
        }
    }

    let trace =
        SearchTrace { baseline_objective: baseline, best_objective: best.1, steps };
    Ok((best.0, trace))
}

/// Global optimum over the full discrete product space, by enumeration.
/// Refuses continuous tail columns and spaces larger than `cap` (pass
/// [`DEFAULT_EXHAUSTIVE_CAP`] unless you know better). Ties resolve to the
/// first candidate in enumeration order.
pub fn exhaustive_search(
    graph: &CausalGraph,
    bundle: &ModelBundle,
    dataset: &Dataset,
    predicate: &SubgroupPredicate,
    outcome: &NodeId,
    mode: PropagationMode,
    cap: usize,
) -> Result<(ReferencePointMap, f64), SearchError> {
    let rows = predicate.select(dataset)?;
    if rows.is_empty() {
        return Err(SearchError::EmptySubpopulation);
    }
    let subgroup = dataset.select_rows(&rows);
    let encoded = EncodedDataset::new(graph, &subgroup)?;
    let domains = build_domains(graph, dataset, &rows)?;

    // Radix per (edge, column) coordinate.
    let mut radices = Vec::new();
    for domain in &domains {
        for (c, col) in domain.columns.iter().enumerate() {
            match col {
                ColDomain::Binary => radices.push((domain.edge.clone(), c, 2usize)),
                ColDomain::Levels(k) => radices.push((domain.edge.clone(), c, *k)),
                ColDomain::Continuous { .. } => {
                    return Err(SearchError::SpaceTooLarge(format!(
                        "tail of `{}` has a continuous column; exhaustive enumeration refuses continuous domains",
                        domain.edge
                    )));
                }
            }
        }
    }
    let mut total: usize = 1;
    for (_, _, k) in &radices {
        total = total.checked_mul(*k).filter(|&t| t <= cap).ok_or_else(|| {
            SearchError::SpaceTooLarge(format!("product space exceeds cap {cap}"))
        })?;
    }

    if radices.is_empty() {
        let obj = subgroup_mean_encoded(
            &ReferencePointMap::new(),
            graph,
            bundle,
            subgroup.schema(),
            &encoded,
            outcome,
            mode,
        )?;
        return Ok((ReferencePointMap::new(), obj));
    }

    let mut best: Option<(ReferencePointMap, f64)> = None;
    let mut counter = vec![0usize; radices.len()];
    for _ in 0..total {
        let mut refmap = ReferencePointMap::new();
        for domain in &domains {
            let mut value = Vec::with_capacity(domain.columns.len());
            for (c, col) in domain.columns.iter().enumerate() {
                let digit_idx = radices
                    .iter()
                    .position(|(e, cc, _)| e == &domain.edge && *cc == c)
                    .expect("coordinate present");
                let digit = counter[digit_idx];
                value.push(match col {
                    ColDomain::Binary => Value::Bool(digit == 1),
                    ColDomain::Levels(_) => Value::Level(digit as u32),
                    ColDomain::Continuous { .. } => unreachable!("rejected above"),
                });
            }
            refmap.insert(domain.edge.clone(), value);
        }
        let obj = subgroup_mean_encoded(
            &refmap,
            graph,
            bundle,
            subgroup.schema(),
            &encoded,
            outcome,
            mode,
        )?;
        // Strict comparison keeps the first optimum in enumeration order.
        if best.as_ref().map(|(_, b)| obj > *b).unwrap_or(true) {
            best = Some((refmap, obj));
        }

        // Mixed-radix increment.
        for (i, (_, _, k)) in radices.iter().enumerate() {
            counter[i] += 1;
            if counter[i] < *k {
                break;
            }
            counter[i] = 0;
        }
    }
    Ok(best.expect("at least one candidate"))
}

pub const DEFAULT_EXHAUSTIVE_CAP: usize = 1_000_000;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSpec, Schema, VariableSpec};
    use crate::model::{Head, HeadModel, HypothesisKind, HypothesisSpec, LinearHead, LocalModule};

    /// Graph A, B -> Y with both input edges flagged; binary A, B.
    fn small_fixture() -> (CausalGraph, Schema, ModelBundle, Dataset) {
        let graph = CausalGraph::new(
            ["A", "B", "Y"],
            vec![Edge::new("A", "Y"), Edge::new("B", "Y")],
            vec![Edge::new("A", "Y"), Edge::new("B", "Y")],
        );
        let schema = Schema::new(vec![
            VariableSpec {
                node: NodeId::from("A"),
                columns: vec![ColumnSpec { name: "A".into(), kind: ColumnKind::Binary }],
            },
            VariableSpec {
                node: NodeId::from("B"),
                columns: vec![ColumnSpec { name: "B".into(), kind: ColumnKind::Binary }],
            },
            VariableSpec {
                node: NodeId::from("Y"),
                columns: vec![ColumnSpec { name: "Y".into(), kind: ColumnKind::Continuous }],
            },
        ])
        .with_target("Y");
        // Y = 2A - B + 0.5 by construction.
        let module = LocalModule {
            target: NodeId::from("Y"),
            parent_order: vec![NodeId::from("A"), NodeId::from("B")],
            hypothesis: HypothesisSpec::new(HypothesisKind::Linear),
            input_width: 2,
            feature_names: vec!["A".into(), "B".into()],
            heads: vec![Head {
                column: "Y".into(),
                kind: ColumnKind::Continuous,
                model: HeadModel::Linear(LinearHead { weights: vec![2.0, -1.0], intercept: 0.5 }),
            }],
            train_loss: 0.0,
        };
        let bundle = ModelBundle::from_modules(&graph, vec![module]);
        let columns = vec![
            vec![Value::Bool(false), Value::Bool(false), Value::Bool(true), Value::Bool(false)],
            vec![Value::Bool(true), Value::Bool(false), Value::Bool(true), Value::Bool(true)],
            vec![Value::Real(0.0); 4],
        ];
        let dataset = Dataset::new(schema.clone(), columns).unwrap();
        (graph, schema, bundle, dataset)
    }

    fn subgroup_a0() -> SubgroupPredicate {
        SubgroupPredicate::new(vec![Condition::Equals { column: "A".into(), level: "0".into() }])
    }

    #[test]
    fn objective_identity_is_baseline_mean() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let obj = objective(
            &ReferencePointMap::new(),
            &graph,
            &bundle,
            &dataset,
            &subgroup_a0(),
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        // Subgroup rows: (A=0,B=1) -> -0.5, (A=0,B=0) -> 0.5, (A=0,B=1) -> -0.5.
        assert!((obj - (-0.5 + 0.5 - 0.5) / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn objective_shift_is_linear_in_reference() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let predicate = subgroup_a0();
        let baseline = objective(
            &ReferencePointMap::new(),
            &graph,
            &bundle,
            &dataset,
            &predicate,
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        let mut refmap = ReferencePointMap::new();
        refmap.insert(Edge::new("A", "Y"), vec![Value::Bool(true)]);
        let shifted = objective(
            &refmap,
            &graph,
            &bundle,
            &dataset,
            &predicate,
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        // theta_A_Y * (1 - mean(a over subgroup)) = 2.0 * (1 - 0).
        assert!((shifted - baseline - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn empty_subpopulation_is_an_error() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let predicate = SubgroupPredicate::new(vec![Condition::Range {
            column: "Y".into(),
            min: 100.0,
            max: 200.0,
        }]);
        assert!(matches!(
            objective(
                &ReferencePointMap::new(),
                &graph,
                &bundle,
                &dataset,
                &predicate,
                &NodeId::from("Y"),
                PropagationMode::Hard,
            ),
            Err(SearchError::EmptySubpopulation)
        ));
    }

    #[test]
    fn single_binary_edge_finds_the_maximizing_level() {
        // theta_A_Y = 2 > 0: the reference for A->Y must be 1.
        let (graph, _schema, bundle, dataset) = small_fixture();
        let config = AnnealingConfig { iterations: 200, restarts: 1, seed: 5, ..Default::default() };
        let (best, trace) = optimize(
            &graph,
            &bundle,
            &dataset,
            &subgroup_a0(),
            &config,
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        assert_eq!(best.get(&Edge::new("A", "Y")), Some(&[Value::Bool(true)][..]));
        // And B->Y (theta = -1) resolves to 0.
        assert_eq!(best.get(&Edge::new("B", "Y")), Some(&[Value::Bool(false)][..]));
        assert!(trace.best_objective >= trace.baseline_objective);
    }

    #[test]
    fn no_flagged_edges_returns_identity() {
        let (_, schema, _, _) = small_fixture();
        let graph = CausalGraph::new(
            ["A", "B", "Y"],
            vec![Edge::new("A", "Y"), Edge::new("B", "Y")],
            vec![],
        );
        let module = fit_dummy(&graph, &schema);
        let bundle = ModelBundle::from_modules(&graph, vec![module]);
        let columns = vec![
            vec![Value::Bool(false), Value::Bool(true)],
            vec![Value::Bool(true), Value::Bool(false)],
            vec![Value::Real(0.0), Value::Real(0.0)],
        ];
        let dataset = Dataset::new(schema, columns).unwrap();
        let (best, trace) = optimize(
            &graph,
            &bundle,
            &dataset,
            &SubgroupPredicate::default(),
            &AnnealingConfig::default(),
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        assert!(best.is_empty());
        assert_eq!(trace.best_objective, trace.baseline_objective);
    }

    fn fit_dummy(graph: &CausalGraph, _schema: &Schema) -> LocalModule {
        LocalModule {
            target: NodeId::from("Y"),
            parent_order: graph.parents(&NodeId::from("Y")).unwrap(),
            hypothesis: HypothesisSpec::new(HypothesisKind::Linear),
            input_width: 2,
            feature_names: vec!["A".into(), "B".into()],
            heads: vec![Head {
                column: "Y".into(),
                kind: ColumnKind::Continuous,
                model: HeadModel::Linear(LinearHead { weights: vec![1.0, 1.0], intercept: 0.0 }),
            }],
            train_loss: 0.0,
        }
    }

    #[test]
    fn exhaustive_enumerates_the_product_space() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let (best, obj) = exhaustive_search(
            &graph,
            &bundle,
            &dataset,
            &subgroup_a0(),
            &NodeId::from("Y"),
            PropagationMode::Hard,
            DEFAULT_EXHAUSTIVE_CAP,
        )
        .unwrap();
        // Optimum sets A->Y to 1 and B->Y to 0: objective = 2 + 0 + 0.5.
        assert_eq!(best.get(&Edge::new("A", "Y")), Some(&[Value::Bool(true)][..]));
        assert_eq!(best.get(&Edge::new("B", "Y")), Some(&[Value::Bool(false)][..]));
        assert!((obj - 2.5).abs() <= 1e-12);
    }

    #[test]
    fn annealing_matches_exhaustive_oracle() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let (_, oracle_obj) = exhaustive_search(
            &graph,
            &bundle,
            &dataset,
            &subgroup_a0(),
            &NodeId::from("Y"),
            PropagationMode::Hard,
            DEFAULT_EXHAUSTIVE_CAP,
        )
        .unwrap();
        let config = AnnealingConfig { iterations: 300, restarts: 2, seed: 9, ..Default::default() };
        let (_, trace) = optimize(
            &graph,
            &bundle,
            &dataset,
            &subgroup_a0(),
            &config,
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        assert!((trace.best_objective - oracle_obj).abs() <= 1e-12);
        // Oracle dominance.
        assert!(trace.best_objective <= oracle_obj + 1e-12);
    }

    #[test]
    fn exhaustive_refuses_continuous_domains() {
        let graph = CausalGraph::new(
            ["X", "Y"],
            vec![Edge::new("X", "Y")],
            vec![Edge::new("X", "Y")],
        );
        let schema = Schema::new(vec![
            VariableSpec {
                node: NodeId::from("X"),
                columns: vec![ColumnSpec { name: "X".into(), kind: ColumnKind::Continuous }],
            },
            VariableSpec {
                node: NodeId::from("Y"),
                columns: vec![ColumnSpec { name: "Y".into(), kind: ColumnKind::Continuous }],
            },
        ]);
        let module = LocalModule {
            target: NodeId::from("Y"),
            parent_order: vec![NodeId::from("X")],
            hypothesis: HypothesisSpec::new(HypothesisKind::Linear),
            input_width: 1,
            feature_names: vec!["X".into()],
            heads: vec![Head {
                column: "Y".into(),
                kind: ColumnKind::Continuous,
                model: HeadModel::Linear(LinearHead { weights: vec![1.0], intercept: 0.0 }),
            }],
            train_loss: 0.0,
        };
        let bundle = ModelBundle::from_modules(&graph, vec![module]);
        let dataset = Dataset::new(
            schema,
            vec![vec![Value::Real(1.0), Value::Real(2.0)], vec![Value::Real(0.0), Value::Real(0.0)]],
        )
        .unwrap();
        assert!(matches!(
            exhaustive_search(
                &graph,
                &bundle,
                &dataset,
                &SubgroupPredicate::default(),
                &NodeId::from("Y"),
                PropagationMode::Hard,
                DEFAULT_EXHAUSTIVE_CAP,
            ),
            Err(SearchError::SpaceTooLarge(_))
        ));
    }

    #[test]
    fn fixed_seed_gives_bit_identical_traces() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let config = AnnealingConfig { iterations: 50, restarts: 2, seed: 3, ..Default::default() };
        let run = || {
            optimize(
                &graph,
                &bundle,
                &dataset,
                &subgroup_a0(),
                &config,
                &NodeId::from("Y"),
                PropagationMode::Hard,
            )
            .unwrap()
        };
        let (map_a, trace_a) = run();
        let (map_b, trace_b) = run();
        assert_eq!(map_a, map_b);
        assert_eq!(trace_a.steps, trace_b.steps);
    }

    #[test]
    fn best_so_far_is_the_running_maximum() {
        let (graph, _schema, bundle, dataset) = small_fixture();
        let config = AnnealingConfig { iterations: 100, restarts: 1, seed: 1, ..Default::default() };
        let (_, trace) = optimize(
            &graph,
            &bundle,
            &dataset,
            &subgroup_a0(),
            &config,
            &NodeId::from("Y"),
            PropagationMode::Hard,
        )
        .unwrap();
        let mut running = f64::NEG_INFINITY;
        for step in &trace.steps {
            running = running.max(step.objective);
            assert!(step.best_so_far >= running - 1e-15);
        }
    }

    #[test]
    fn argmax_is_scale_invariant() {
        // Scaling the outcome module's coefficients by a positive constant
        // scales every candidate's objective, so the exhaustive argmax (and
        // tie-break order) is unchanged.
        let (graph, _schema, bundle, dataset) = small_fixture();
        let scaled_module = {
            let m = bundle.module(&NodeId::from("Y")).unwrap().clone();
            let HeadModel::Linear(l) = &m.heads[0].model else { panic!() };
            LocalModule {
                heads: vec![Head {
                    column: "Y".into(),
                    kind: ColumnKind::Continuous,
                    model: HeadModel::Linear(LinearHead {
                        weights: l.weights.iter().map(|w| w * 7.5).collect(),
                        intercept: l.intercept * 7.5,
                    }),
                }],
                ..m
            }
        };
        let scaled = ModelBundle::from_modules(&graph, vec![scaled_module]);
        let args = |b: &ModelBundle| {
            exhaustive_search(
                b.module(&NodeId::from("Y")).map(|_| &graph).unwrap(),
                b,
                &dataset,
                &subgroup_a0(),
                &NodeId::from("Y"),
                PropagationMode::Hard,
                DEFAULT_EXHAUSTIVE_CAP,
            )
            .unwrap()
            .0
        };
        assert_eq!(args(&bundle), args(&scaled));
    }
}
