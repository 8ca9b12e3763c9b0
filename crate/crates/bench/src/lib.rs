//! Shared fixtures for the criterion benchmarks.

use std::collections::HashMap;

use decoupler_core::graph::NodeId;
use decoupler_core::model::{HypothesisKind, HypothesisSpec, ModelBundle};
use decoupler_core::sim::{fixture_params, linear_scm_graph, simulate_linear_scm};
use decoupler_core::{CausalGraph, Dataset};

/// Linear fixture: graph, 5k-row dataset, fitted linear bundle.
pub fn linear_fixture() -> (CausalGraph, Dataset, ModelBundle) {
    let graph = linear_scm_graph();
    let dataset = simulate_linear_scm(&fixture_params(), 5_000, 1).expect("fixture simulates");
    let hypotheses: HashMap<NodeId, HypothesisSpec> = graph
        .nodes()
        .iter()
        .map(|n| (n.clone(), HypothesisSpec::new(HypothesisKind::Linear)))
        .collect();
    let bundle = ModelBundle::fit_all(&graph, &dataset, &hypotheses).expect("fixture fits");
    (graph, dataset, bundle)
}
