//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities. Run with `cargo test --test acceptance --
//! --nocapture` to see the lines.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use decoupler_core::audit::{
    approval_rates, compute_pse, deviation_matrix, fit_constrained_kilbertus, fit_constrained_nabi,
    fit_linear_unconstrained, kilbertus_residuals, marginal_expectation, predict_constrained,
    threshold_sweep, LinearFit, LinearRow, Policy, PredictMode,
};
use decoupler_core::data::{ColumnKind, ColumnSpec, Dataset, Schema, Value, VariableSpec};
use decoupler_core::decouple::{Decoupler, Overrides, ReferencePointMap};
use decoupler_core::graph::{random_dag, worked_example_graph, CausalGraph, Edge, NodeId};
use decoupler_core::model::{
    HypothesisKind, HypothesisSpec, ModelBundle, PropagationMode,
};
use decoupler_core::search::{
    exhaustive_search, optimize, AnnealingConfig, Condition, SubgroupPredicate,
    DEFAULT_EXHAUSTIVE_CAP,
};
use decoupler_core::sim::{
    fixture_params, linear_scm_graph, simulate_linear_scm, ThetaSlot,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn pass(id: u32, detail: impl AsRef<str>) {
    println!("ACCEPTANCE C{id:02} PASS — {}", detail.as_ref());
}

fn assert_budget(id: u32, elapsed: Duration, budget: Duration) {
    assert!(
        elapsed <= budget,
        "criterion {id} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
}

fn continuous_schema(names: &[&str], target: &str) -> Schema {
    Schema::new(
        names
            .iter()
            .map(|n| VariableSpec {
                node: NodeId::from(*n),
                columns: vec![ColumnSpec { name: (*n).into(), kind: ColumnKind::Continuous }],
            })
            .collect(),
    )
    .with_target(target)
}

fn all_hypotheses(graph: &CausalGraph, spec: HypothesisSpec) -> HashMap<NodeId, HypothesisSpec> {
    graph.nodes().iter().map(|n| (n.clone(), spec)).collect()
}

/// Synthetic data for the seven-node worked-example graph: linear structural
/// equations with modest noise over continuous columns.
fn worked_example_data(n: usize, seed: u64) -> Dataset {
    let schema = continuous_schema(&["A", "C", "X1", "X2", "X3", "X4", "Y"], "Y");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut cols: Vec<Vec<Value>> = vec![Vec::new(); 7];
    for _ in 0..n {
        let a: f64 = normal.sample(&mut rng);
        let c: f64 = normal.sample(&mut rng);
        let x1 = 0.5 * a - 0.4 * c + 0.1 + 0.2 * normal.sample(&mut rng);
        let x2 = 0.6 * a + 0.3 * c + 0.7 * x1 - 0.2 + 0.2 * normal.sample(&mut rng);
        let x3 = 0.4 * c - 0.5 * x2 + 0.3 + 0.2 * normal.sample(&mut rng);
        let x4 = -0.6 * x1 + 0.8 * x2 + 0.2 * normal.sample(&mut rng);
        let y = 0.3 * a + 0.2 * x1 - 0.4 * x2 + 0.5 * x3 + 0.9 * x4 + 0.05
            + 0.2 * normal.sample(&mut rng);
        for (col, v) in cols.iter_mut().zip([a, c, x1, x2, x3, x4, y]) {
            col.push(Value::Real(v));
        }
    }
    Dataset::new(schema, cols).unwrap()
}

fn worked_example_refmap() -> ReferencePointMap {
    let mut refmap = ReferencePointMap::new();
    refmap.insert(Edge::new("A", "X2"), vec![Value::Real(0.9)]);
    refmap.insert(Edge::new("X1", "X4"), vec![Value::Real(-0.6)]);
    refmap.insert(Edge::new("A", "Y"), vec![Value::Real(0.25)]);
    refmap.insert(Edge::new("X1", "Y"), vec![Value::Real(1.1)]);
    refmap.insert(Edge::new("X2", "Y"), vec![Value::Real(-0.35)]);
    refmap
}

/// Criterion 1: on the seven-node worked-example graph with the five-edge
/// reference map, the pipeline equals a hand-composed substitution of the
/// fitted modules — to 1e-12 with linear modules (explicit coefficient
/// arithmetic) and to 1e-9 with MLP modules (explicit module composition).
#[test]
fn c01_worked_example_equivalence() {
    let start = Instant::now();
    let graph = worked_example_graph();
    let train = worked_example_data(400, 31);
    let eval = worked_example_data(100, 32);
    let refmap = worked_example_refmap();
    let outcome = NodeId::from("Y");

    // Linear modules: hand-compose from named coefficients.
    let bundle =
        ModelBundle::fit_all(&graph, &train, &all_hypotheses(&graph, HypothesisSpec::new(HypothesisKind::Linear)))
            .unwrap();
    let engine = Decoupler::new(
        &graph,
        &bundle,
        train.schema(),
        &refmap,
        &Overrides::new(),
        &outcome,
        PropagationMode::Hard,
    )
    .unwrap();

    let lin = |node: &str, inputs: &[(&str, f64)]| -> f64 {
        let module = bundle.module(&NodeId::from(node)).unwrap();
        let mut acc = module.linear_intercept().unwrap();
        for (feature, value) in inputs {
            acc += module.linear_coefficient(feature).unwrap() * value;
        }
        acc
    };

    let mut max_err: f64 = 0.0;
    for row in 0..eval.n_rows() {
        let v = |name: &str| eval.column_as_f64(name).unwrap()[row];
        let (c, x1) = (v("C"), v("X1"));
        let x2_hat = lin("X2", &[("A", 0.9), ("C", c), ("X1", x1)]);
        let x3_hat = lin("X3", &[("C", c), ("X2", x2_hat)]);
        let x4_hat = lin("X4", &[("X1", -0.6), ("X2", x2_hat)]);
        let y_hat = lin(
            "Y",
            &[("A", 0.25), ("X1", 1.1), ("X2", -0.35), ("X3", x3_hat), ("X4", x4_hat)],
        );
        let pipeline = engine.instantiate_row(&eval, row).unwrap().outcome;
        max_err = max_err.max((pipeline - y_hat).abs());
    }
    assert!(max_err <= 1e-12, "linear max error {max_err}");

    // MLP modules: hand-compose by calling the same fitted modules.
    let mut spec = HypothesisSpec::new(HypothesisKind::Mlp);
    spec.train.epochs = 25;
    let bundle = ModelBundle::fit_all(&graph, &train, &all_hypotheses(&graph, spec)).unwrap();
    let engine = Decoupler::new(
        &graph,
        &bundle,
        train.schema(),
        &refmap,
        &Overrides::new(),
        &outcome,
        PropagationMode::Hard,
    )
    .unwrap();
    let forward = |node: &str, inputs: &[f64]| -> f64 {
        bundle
            .module(&NodeId::from(node))
            .unwrap()
            .predict_encoded(inputs, PropagationMode::Hard)
            .unwrap()
            .score
    };
    let mut max_err_mlp: f64 = 0.0;
    for row in 0..eval.n_rows() {
        let v = |name: &str| eval.column_as_f64(name).unwrap()[row];
        let (c, x1) = (v("C"), v("X1"));
        let x2_hat = forward("X2", &[0.9, c, x1]);
        let x3_hat = forward("X3", &[c, x2_hat]);
        let x4_hat = forward("X4", &[-0.6, x2_hat]);
        let y_hat = forward("Y", &[0.25, 1.1, -0.35, x3_hat, x4_hat]);
        let pipeline = engine.instantiate_row(&eval, row).unwrap().outcome;
        max_err_mlp = max_err_mlp.max((pipeline - y_hat).abs());
    }
    assert!(max_err_mlp <= 1e-9, "mlp max error {max_err_mlp}");

    let elapsed = start.elapsed();
    assert_budget(1, elapsed, Duration::from_secs(10));
    pass(1, format!(
        "worked-example substitution: linear err {max_err:.2e} (<=1e-12), mlp err {max_err_mlp:.2e} (<=1e-9), {elapsed:.1?}"
    ));
}

/// Criterion 2: both constrained fitters null the path combination on the
/// 20k-row fixture simulation.
#[test]
fn c02_pse_nulling() {
    let start = Instant::now();
    let ds = simulate_linear_scm(&fixture_params(), 20_000, 12).unwrap();

    let nabi = fit_constrained_nabi(&ds).unwrap();
    let pse_nabi = compute_pse(&nabi).abs();
    assert!(pse_nabi <= 1e-12, "zero-protected fit left |PSE| = {pse_nabi}");

    let kilbertus = fit_constrained_kilbertus(&ds, 0).unwrap();
    let (direct, combo) = kilbertus_residuals(&kilbertus);
    assert!(direct <= 1e-6 && combo <= 1e-6, "residuals {direct:.2e}, {combo:.2e}");
    let pse_kil = compute_pse(&kilbertus).abs();
    assert!(pse_kil <= 1e-6, "zero-combination fit left |PSE| = {pse_kil}");

    let elapsed = start.elapsed();
    assert_budget(2, elapsed, Duration::from_secs(30));
    pass(2, format!(
        "|PSE| = {pse_nabi:.2e} (zero-protected), {pse_kil:.2e} (zero-combination), residuals {direct:.2e}/{combo:.2e}, {elapsed:.1?}"
    ));
}

/// Criterion 3: at n = 50,000 the unconstrained fit tracks the ground truth
/// on every slot (<= 2% relative), while each constrained fit visibly
/// distorts at least one neutral slot (>= 5%) and the zero-combination
/// solver returns seed-dependent solutions.
#[test]
fn c03_disguised_unfairness() {
    let start = Instant::now();
    let params = fixture_params();
    let ds = simulate_linear_scm(&params, 50_000, 12).unwrap();

    let unconstrained = fit_linear_unconstrained(&ds).unwrap();
    let base_dev = deviation_matrix(&unconstrained, &params.theta);
    let base_max = base_dev.max_abs_relative();
    assert!(base_max <= 0.02, "unconstrained max |relative| = {base_max}");

    // Neutral slots are everything outside each fit's constraint set.
    let nabi_neutral = [
        ThetaSlot::CM,
        ThetaSlot::MIntercept,
        ThetaSlot::AL,
        ThetaSlot::CL,
        ThetaSlot::ML,
        ThetaSlot::LIntercept,
        ThetaSlot::CY,
        ThetaSlot::MY,
        ThetaSlot::LY,
        ThetaSlot::YIntercept,
    ];
    let nabi = fit_constrained_nabi(&ds).unwrap();
    let nabi_dev = deviation_matrix(&nabi, &params.theta);
    let nabi_worst = nabi_neutral
        .iter()
        .filter_map(|&s| nabi_dev.entry(s).relative)
        .map(f64::abs)
        .fold(0.0f64, f64::max);
    assert!(nabi_worst >= 0.05, "zero-protected worst neutral deviation {nabi_worst}");

    let kil_neutral = [
        ThetaSlot::AM,
        ThetaSlot::CM,
        ThetaSlot::MIntercept,
        ThetaSlot::AL,
        ThetaSlot::CL,
        ThetaSlot::LIntercept,
        ThetaSlot::CY,
        ThetaSlot::YIntercept,
    ];
    let kil_a = fit_constrained_kilbertus(&ds, 0).unwrap();
    let kil_b = fit_constrained_kilbertus(&ds, 1).unwrap();
    let kil_dev = deviation_matrix(&kil_a, &params.theta);
    let kil_worst = kil_neutral
        .iter()
        .filter_map(|&s| kil_dev.entry(s).relative)
        .map(f64::abs)
        .fold(0.0f64, f64::max);
    assert!(kil_worst >= 0.05, "zero-combination worst neutral deviation {kil_worst}");

    // Non-uniqueness: the two seeds land in different local minima.
    let max_disagreement = kil_neutral
        .iter()
        .map(|&s| {
            let a = kil_a.theta.get(s);
            let b = kil_b.theta.get(s);
            (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
        })
        .fold(0.0f64, f64::max);
    assert!(
        max_disagreement > 0.01,
        "seeds 0 and 1 agree on every neutral slot (max rel diff {max_disagreement})"
    );

    let elapsed = start.elapsed();
    assert_budget(3, elapsed, Duration::from_secs(60));
    pass(3, format!(
        "unconstrained max |rel| {base_max:.4}; neutral distortion {nabi_worst:.2} (zero-protected) / {kil_worst:.2} (zero-combination); seed disagreement {max_disagreement:.2}, {elapsed:.1?}"
    ));
}

/// Criterion 4: decoupling and prediction never touch fitted parameters.
#[test]
fn c04_neutral_intactness() {
    let graph = linear_scm_graph();
    let ds = simulate_linear_scm(&fixture_params(), 5_000, 12).unwrap();
    let bundle =
        ModelBundle::fit_all(&graph, &ds, &all_hypotheses(&graph, HypothesisSpec::new(HypothesisKind::Linear)))
            .unwrap();
    let before = bundle.param_fingerprint();

    let mut refmap = ReferencePointMap::new();
    refmap.insert(Edge::new("A", "Y"), vec![Value::Bool(false)]);
    refmap.insert(Edge::new("M", "Y"), vec![Value::Real(0.5)]);
    let outcome = NodeId::from("Y");
    let engine = Decoupler::new(
        &graph,
        &bundle,
        ds.schema(),
        &refmap,
        &Overrides::new(),
        &outcome,
        PropagationMode::Hard,
    )
    .unwrap();
    let _ = engine.predict_all(&ds).unwrap();
    let _ = engine.instantiate_row(&ds, 17).unwrap();

    let predicate =
        SubgroupPredicate::new(vec![Condition::Equals { column: "A".into(), level: "0".into() }]);
    let config = AnnealingConfig { iterations: 50, restarts: 1, seed: 2, ..Default::default() };
    let _ = optimize(&graph, &bundle, &ds, &predicate, &config, &outcome, PropagationMode::Hard)
        .unwrap();

    let after = bundle.param_fingerprint();
    assert_eq!(before, after, "parameter fingerprint moved during decoupling");
    pass(4, format!("parameter fingerprint {before} unchanged through decouple/predict/search"));
}

/// Criterion 5: with every edge flagged, each single-edge reference map
/// shifts the outcome by (ref - observed) times the product of fitted
/// coefficients summed over all directed paths through the keyed edge.
#[test]
fn c05_linear_edge_intervention_closed_form() {
    // Same structure as the linear fixture, but every edge is flagged so any
    // single edge can be keyed.
    let base = linear_scm_graph();
    let graph = CausalGraph::new(
        base.nodes().iter().map(|n| n.as_str().to_owned()).collect::<Vec<_>>(),
        base.edges().to_vec(),
        base.edges().to_vec(),
    );
    let train = simulate_linear_scm(&fixture_params(), 4_000, 8).unwrap();
    let bundle =
        ModelBundle::fit_all(&graph, &train, &all_hypotheses(&graph, HypothesisSpec::new(HypothesisKind::Linear)))
            .unwrap();
    let outcome = NodeId::from("Y");

    // A keyed edge replaces an observed intermediate with the module's
    // derived value, which carries no per-row noise residual. The
    // coefficient-path identity is therefore exact precisely on rows whose
    // intermediate values lie on the fitted manifold, so the evaluation grid
    // is built from the fitted modules themselves over sampled (A, C).
    let eval = {
        let module_forward = |name: &str, inputs: &[f64]| {
            bundle
                .module(&NodeId::from(name))
                .unwrap()
                .predict_encoded(inputs, PropagationMode::Hard)
                .unwrap()
                .score
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let mut cols: Vec<Vec<Value>> = vec![Vec::new(); 5];
        for _ in 0..1_000 {
            let a = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
            let c: f64 = normal.sample(&mut rng);
            let m = module_forward("M", &[a, c]);
            let l = module_forward("L", &[a, c, m]);
            let y = module_forward("Y", &[a, c, m, l]);
            cols[0].push(Value::Bool(a > 0.5));
            cols[1].push(Value::Real(c));
            cols[2].push(Value::Real(m));
            cols[3].push(Value::Real(l));
            cols[4].push(Value::Real(y));
        }
        Dataset::new(train.schema().clone(), cols).unwrap()
    };

    // Sum over directed paths from `from` to Y of the product of fitted
    // coefficients along each path.
    fn path_sum(graph: &CausalGraph, bundle: &ModelBundle, from: &NodeId, to: &NodeId) -> f64 {
        if from == to {
            return 1.0;
        }
        graph
            .edges()
            .iter()
            .filter(|e| &e.tail == from)
            .map(|e| {
                let coeff = bundle
                    .module(&e.head)
                    .unwrap()
                    .linear_coefficient(from.as_str())
                    .unwrap();
                coeff * path_sum(graph, bundle, &e.head, to)
            })
            .sum()
    }

    let baseline_engine = Decoupler::new(
        &graph,
        &bundle,
        train.schema(),
        &ReferencePointMap::new(),
        &Overrides::new(),
        &outcome,
        PropagationMode::Hard,
    )
    .unwrap();
    let baseline = baseline_engine.predict_all(&eval).unwrap().scores;

    let mut max_err: f64 = 0.0;
    for edge in graph.edges() {
        let tail_kind = &train.schema().variable(&edge.tail).unwrap().columns[0].kind;
        let (ref_value, ref_encoded) = match tail_kind {
            ColumnKind::Binary => (Value::Bool(true), 1.0),
            _ => (Value::Real(1.3), 1.3),
        };
        let mut refmap = ReferencePointMap::new();
        refmap.insert(edge.clone(), vec![ref_value]);
        let engine = Decoupler::new(
            &graph,
            &bundle,
            train.schema(),
            &refmap,
            &Overrides::new(),
            &outcome,
            PropagationMode::Hard,
        )
        .unwrap();
        let scores = engine.predict_all(&eval).unwrap().scores;

        let edge_coeff = bundle
            .module(&edge.head)
            .unwrap()
            .linear_coefficient(edge.tail.as_str())
            .unwrap();
        let downstream = path_sum(&graph, &bundle, &edge.head, &outcome);
        let observed = eval.column_as_f64(edge.tail.as_str()).unwrap();
        for row in 0..eval.n_rows() {
            let expected = (ref_encoded - observed[row]) * edge_coeff * downstream;
            let got = scores[row] - baseline[row];
            max_err = max_err.max((got - expected).abs());
        }
    }
    assert!(max_err <= 1e-10, "max abs error {max_err}");
    pass(5, format!(
        "single-edge deltas match coefficient path products over {} edges x 1000 rows, max err {max_err:.2e}",
        graph.edges().len()
    ));
}

/// Criterion 6: on an 8-point discrete space, default-config annealing finds
/// the enumerated optimum in at least 19 of 20 seeds, and any miss is within
/// 1e-9 of it.
#[test]
fn c06_optimizer_vs_oracle() {
    let start = Instant::now();
    let graph = CausalGraph::new(
        ["A", "B", "D", "Y"],
        vec![Edge::new("A", "Y"), Edge::new("B", "Y"), Edge::new("D", "Y")],
        vec![Edge::new("A", "Y"), Edge::new("B", "Y"), Edge::new("D", "Y")],
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
            node: NodeId::from("D"),
            columns: vec![ColumnSpec { name: "D".into(), kind: ColumnKind::Binary }],
        },
        VariableSpec {
            node: NodeId::from("Y"),
            columns: vec![ColumnSpec { name: "Y".into(), kind: ColumnKind::Continuous }],
        },
    ])
    .with_target("Y");

    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let normal = Normal::new(0.0, 0.2).unwrap();
    let mut cols: Vec<Vec<Value>> = vec![Vec::new(); 4];
    for _ in 0..n {
        let a = rng.random_range(0..2) as f64;
        let b = rng.random_range(0..2) as f64;
        let d = rng.random_range(0..2) as f64;
        let y = 1.5 * a - 0.8 * b + 0.3 * d + 0.1 + normal.sample(&mut rng);
        cols[0].push(Value::Bool(a > 0.5));
        cols[1].push(Value::Bool(b > 0.5));
        cols[2].push(Value::Bool(d > 0.5));
        cols[3].push(Value::Real(y));
    }
    let ds = Dataset::new(schema, cols).unwrap();
    let bundle =
        ModelBundle::fit_all(&graph, &ds, &all_hypotheses(&graph, HypothesisSpec::new(HypothesisKind::Linear)))
            .unwrap();
    let outcome = NodeId::from("Y");
    let predicate =
        SubgroupPredicate::new(vec![Condition::Equals { column: "A".into(), level: "0".into() }]);

    let (_, oracle_obj) = exhaustive_search(
        &graph,
        &bundle,
        &ds,
        &predicate,
        &outcome,
        PropagationMode::Hard,
        DEFAULT_EXHAUSTIVE_CAP,
    )
    .unwrap();

    let mut hits = 0;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..20u64 {
        let config = AnnealingConfig { seed, ..Default::default() };
        let (_, trace) =
            optimize(&graph, &bundle, &ds, &predicate, &config, &outcome, PropagationMode::Hard)
                .unwrap();
        let gap = (oracle_obj - trace.best_objective).abs();
        if gap <= 1e-12 {
            hits += 1;
        } else {
            worst_gap = worst_gap.max(gap);
        }
    }
    assert!(hits >= 19, "annealing matched the oracle in only {hits}/20 seeds");
    assert!(worst_gap <= 1e-9, "worst miss gap {worst_gap}");

    let elapsed = start.elapsed();
    assert_budget(6, elapsed, Duration::from_secs(120));
    pass(6, format!(
        "annealing hit the enumerated optimum in {hits}/20 seeds (worst gap {worst_gap:.1e}), {elapsed:.1?}"
    ));
}

/// Criterion 7: sweeping thresholds 1.0 down to 0.0 in steps of 0.1 yields
/// exactly 11 rows with per-policy approval rates non-decreasing as the
/// threshold drops.
#[test]
fn c07_monotone_sweep() {
    let params = fixture_params();
    let ds = simulate_linear_scm(&params, 20_000, 12).unwrap();
    let a = ds.column_as_f64("A").unwrap();
    let c = ds.column_as_f64("C").unwrap();
    let m = ds.column_as_f64("M").unwrap();
    let l = ds.column_as_f64("L").unwrap();

    let predictions = |fit: &LinearFit| -> Vec<f64> {
        (0..ds.n_rows())
            .map(|i| {
                predict_constrained(
                    fit,
                    &LinearRow { a: a[i], c: c[i], m: m[i], l: l[i] },
                    PredictMode::PlugIn,
                )
                .unwrap()
            })
            .collect()
    };
    let policies = vec![
        Policy { name: "unconstrained".into(), predictions: predictions(&fit_linear_unconstrained(&ds).unwrap()) },
        Policy { name: "zero-protected".into(), predictions: predictions(&fit_constrained_nabi(&ds).unwrap()) },
        Policy { name: "zero-combination-s0".into(), predictions: predictions(&fit_constrained_kilbertus(&ds, 0).unwrap()) },
        Policy { name: "zero-combination-s1".into(), predictions: predictions(&fit_constrained_kilbertus(&ds, 1).unwrap()) },
    ];
    let groups: Vec<String> =
        a.iter().map(|&ai| if ai < 0.5 { "disadv".into() } else { "adv".into() }).collect();
    let thresholds: Vec<f64> = (0..=10).map(|i| 1.0 - 0.1 * i as f64).collect();

    let table = threshold_sweep(&policies, &thresholds, &groups).unwrap();
    assert_eq!(table.rows.len(), 11, "expected 11 sweep rows");
    for p in 0..policies.len() {
        let mut last = -1.0;
        for row in &table.rows {
            assert!(
                row.approval_rates[p] >= last,
                "approval for `{}` decreased at threshold {}",
                table.policies[p],
                row.threshold
            );
            last = row.approval_rates[p];
        }
    }
    pass(7, "11 sweep rows, approval non-decreasing for all 4 policies as threshold drops");
}

/// Criterion 8: a 1024-node random DAG with average degree 102 and all-MLP
/// modules lands within 10% of 7.56e6 parameters and 7.67e6 MACs, and a
/// 1000-row forward pass finishes inside a minute.
#[test]
fn c08_scalability() {
    let graph = random_dag(1024, 102, 11).unwrap();
    let schema = Schema::new(
        graph
            .nodes()
            .iter()
            .map(|n| VariableSpec {
                node: n.clone(),
                columns: vec![ColumnSpec { name: n.as_str().to_owned(), kind: ColumnKind::Continuous }],
            })
            .collect(),
    );
    let bundle = ModelBundle::initialize(
        &graph,
        &schema,
        &all_hypotheses(&graph, HypothesisSpec::new(HypothesisKind::Mlp)),
        3,
    )
    .unwrap();

    let params = bundle.param_count() as f64;
    let macs = bundle.mac_count() as f64;
    assert!(
        (params - 7.56e6).abs() / 7.56e6 <= 0.10,
        "parameter count {params:.3e} misses 7.56e6 by more than 10%"
    );
    assert!(
        (macs - 7.67e6).abs() / 7.67e6 <= 0.10,
        "MAC estimate {macs:.3e} misses 7.67e6 by more than 10%"
    );

    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cols: Vec<Vec<Value>> =
        (0..1024).map(|_| (0..n).map(|_| Value::Real(rng.random::<f64>())).collect()).collect();
    let ds = Dataset::new(schema, cols).unwrap();
    let start = Instant::now();
    let out = bundle.forward_all(&ds, PropagationMode::Hard).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(out.len(), n);
    assert_budget(8, elapsed, Duration::from_secs(60));
    pass(8, format!(
        "params {params:.3e} (target 7.56e6), MACs {macs:.3e} (target 7.67e6), 1000-row forward in {elapsed:.1?}"
    ));
}

/// Adult-shaped synthetic dataset: sex, (age, native country), marital
/// status, education years, (work class, weekly hours), binary income. The
/// generating process routes disadvantage through the sex -> income and
/// marital -> income edges.
fn synthetic_adult(n: usize, seed: u64) -> (CausalGraph, Dataset) {
    let graph = CausalGraph::new(
        ["sex", "bg", "marital", "edu", "job", "income"],
        vec![
            Edge::new("sex", "marital"),
            Edge::new("bg", "marital"),
            Edge::new("sex", "edu"),
            Edge::new("bg", "edu"),
            Edge::new("marital", "edu"),
            Edge::new("sex", "job"),
            Edge::new("bg", "job"),
            Edge::new("marital", "job"),
            Edge::new("edu", "job"),
            Edge::new("sex", "income"),
            Edge::new("bg", "income"),
            Edge::new("marital", "income"),
            Edge::new("edu", "income"),
            Edge::new("job", "income"),
        ],
        vec![Edge::new("sex", "income"), Edge::new("marital", "income")],
    );
    let marital_levels = vec!["married".to_owned(), "divorced".to_owned(), "single".to_owned()];
    let work_levels = vec!["private".to_owned(), "gov".to_owned(), "self".to_owned()];
    let schema = Schema::new(vec![
        VariableSpec {
            node: NodeId::from("sex"),
            columns: vec![ColumnSpec { name: "sex".into(), kind: ColumnKind::Binary }],
        },
        VariableSpec {
            node: NodeId::from("bg"),
            columns: vec![
                ColumnSpec { name: "age".into(), kind: ColumnKind::Continuous },
                ColumnSpec {
                    name: "native".into(),
                    kind: ColumnKind::Categorical(vec!["US".into(), "other".into()]),
                },
            ],
        },
        VariableSpec {
            node: NodeId::from("marital"),
            columns: vec![ColumnSpec {
                name: "marital".into(),
                kind: ColumnKind::Categorical(marital_levels.clone()),
            }],
        },
        VariableSpec {
            node: NodeId::from("edu"),
            columns: vec![ColumnSpec { name: "edu".into(), kind: ColumnKind::Continuous }],
        },
        VariableSpec {
            node: NodeId::from("job"),
            columns: vec![
                ColumnSpec {
                    name: "workclass".into(),
                    kind: ColumnKind::Categorical(work_levels.clone()),
                },
                ColumnSpec { name: "hours".into(), kind: ColumnKind::Continuous },
            ],
        },
        VariableSpec {
            node: NodeId::from("income"),
            columns: vec![ColumnSpec { name: "income".into(), kind: ColumnKind::Binary }],
        },
    ])
    .with_target("income");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut cols: Vec<Vec<Value>> = vec![Vec::new(); 8];
    for _ in 0..n {
        let male = rng.random::<f64>() < 0.5;
        let sex = if male { 1.0 } else { 0.0 };
        let noise: f64 = normal.sample(&mut rng);
        let age = (38.0 + 12.0 * noise).clamp(18.0, 80.0);
        let us = rng.random::<f64>() < 0.85;

        // Marital: softmax over (married, divorced, single).
        let logits = [
            0.08 * (age - 30.0) + 0.3 * sex,
            -1.0 + 0.04 * (age - 35.0),
            -0.10 * (age - 26.0),
        ];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut marital = 2usize;
        for (k, e) in exps.iter().enumerate() {
            if u < *e {
                marital = k;
                break;
            }
            u -= e;
        }
        let married = if marital == 0 { 1.0 } else { 0.0 };

        let edu = (9.0
            + 0.05 * (age - 18.0)
            + 1.0 * if us { 1.0 } else { 0.0 }
            + 0.4 * sex
            + 0.5 * married
            + 1.5 * normal.sample(&mut rng))
        .clamp(1.0, 16.0);

        let work_logits = [0.8, -0.3 + 0.08 * (edu - 9.0), -0.8 + 0.02 * (age - 30.0) + 0.2 * sex];
        let max = work_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = work_logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut work = 0usize;
        for (k, e) in exps.iter().enumerate() {
            if u < *e {
                work = k;
                break;
            }
            u -= e;
        }
        let hours = (28.0 + 0.8 * edu + 4.0 * married + 3.0 * sex + 5.0 * normal.sample(&mut rng))
            .clamp(5.0, 80.0);

        let p_income = sigmoid(
            -10.5 + 0.45 * edu + 0.07 * hours + 0.02 * (age - 30.0) + 1.0 * sex + 1.2 * married,
        );
        let income = rng.random::<f64>() < p_income;

        cols[0].push(Value::Bool(male));
        cols[1].push(Value::Real(age));
        cols[2].push(Value::Level(if us { 0 } else { 1 }));
        cols[3].push(Value::Level(marital as u32));
        cols[4].push(Value::Real(edu));
        cols[5].push(Value::Level(work as u32));
        cols[6].push(Value::Real(hours));
        cols[7].push(Value::Bool(income));
    }
    (graph, Dataset::new(schema, cols).unwrap())
}

/// Criterion 9: the public Adult data is not shipped, so this runs the
/// Adult-shaped synthetic generator with the same flagged edges
/// (sex -> income, marital -> income) and least-advantaged = female, and
/// asserts the search guarantee: the optimized configuration never scores
/// below the unconstrained baseline for the subgroup. Group approval deltas
/// are reported for inspection.
#[test]
fn c09_adult_shaped_decoupling() {
    let start = Instant::now();
    let (graph, ds) = synthetic_adult(3_000, 44);

    let mut hypotheses = HashMap::new();
    let mut mlp = HypothesisSpec::new(HypothesisKind::Mlp);
    mlp.train.epochs = 40;
    let mut lin = HypothesisSpec::new(HypothesisKind::Linear);
    lin.train.epochs = 1;
    hypotheses.insert(NodeId::from("marital"), mlp);
    hypotheses.insert(NodeId::from("edu"), lin);
    hypotheses.insert(NodeId::from("job"), mlp);
    hypotheses.insert(NodeId::from("income"), mlp);
    let bundle = ModelBundle::fit_all(&graph, &ds, &hypotheses).unwrap();
    let fingerprint_before = bundle.param_fingerprint();

    let outcome = NodeId::from("income");
    let predicate =
        SubgroupPredicate::new(vec![Condition::Equals { column: "sex".into(), level: "0".into() }]);
    let config = AnnealingConfig { iterations: 500, restarts: 2, seed: 5, ..Default::default() };
    let (best, trace) =
        optimize(&graph, &bundle, &ds, &predicate, &config, &outcome, PropagationMode::Hard)
            .unwrap();

    assert!(
        trace.best_objective >= trace.baseline_objective,
        "optimized objective {} fell below baseline {}",
        trace.best_objective,
        trace.baseline_objective
    );
    assert_eq!(bundle.param_fingerprint(), fingerprint_before);

    // Report group approval deltas at threshold 0.5, stratified by observed
    // income, in the reference-point comparison layout.
    let baseline_engine = Decoupler::new(
        &graph,
        &bundle,
        ds.schema(),
        &ReferencePointMap::new(),
        &Overrides::new(),
        &outcome,
        PropagationMode::Hard,
    )
    .unwrap();
    let decoupled_engine = Decoupler::new(
        &graph,
        &bundle,
        ds.schema(),
        &best,
        &Overrides::new(),
        &outcome,
        PropagationMode::Hard,
    )
    .unwrap();
    let policies = vec![
        Policy { name: "baseline".into(), predictions: baseline_engine.predict_all(&ds).unwrap().scores },
        Policy { name: "decoupled".into(), predictions: decoupled_engine.predict_all(&ds).unwrap().scores },
    ];
    let groups: Vec<String> = ds
        .column("sex")
        .unwrap()
        .iter()
        .map(|v| if matches!(v, Value::Bool(false)) { "female".into() } else { "male".into() })
        .collect();
    let strata: Vec<String> = ds
        .column("income")
        .unwrap()
        .iter()
        .map(|v| if matches!(v, Value::Bool(true)) { "high".into() } else { "low".into() })
        .collect();
    let table = approval_rates(&policies, 0.5, &groups, Some(&strata), "baseline").unwrap();
    for cell in table.cells.iter().filter(|c| c.policy == "decoupled") {
        println!(
            "  decoupled {} / {}: rate {:.4} (delta {:+.4}, n={})",
            cell.group,
            cell.stratum.as_deref().unwrap_or("-"),
            cell.rate,
            cell.delta_vs_baseline,
            cell.count
        );
    }

    let elapsed = start.elapsed();
    assert_budget(9, elapsed, Duration::from_secs(30 * 60));
    pass(9, format!(
        "synthetic Adult: subgroup objective {:.4} >= baseline {:.4}, reference points [{}], {elapsed:.1?}",
        trace.best_objective,
        trace.baseline_objective,
        best.describe(ds.schema()),
    ));
}

/// Criterion 10: marginalizing Monte-Carlo prediction agrees with the
/// closed-form Gaussian expectation within 1e-2 on 20 rows.
#[test]
fn c10_monte_carlo_consistency() {
    let params = fixture_params();
    let fit = LinearFit {
        theta: params.theta,
        constraint: decoupler_core::audit::ConstraintKind::Unconstrained,
        seed: None,
    };
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let a = (i % 2) as f64;
        let c = -0.9 + 0.1 * i as f64;
        let row = LinearRow { a, c, m: 0.0, l: 0.0 };
        let mc = predict_constrained(
            &fit,
            &row,
            PredictMode::MonteCarlo {
                samples: 100_000,
                seed: 1_000 + i as u64,
                sigma_m: Some(params.sigma.m),
                sigma_l: Some(params.sigma.l),
            },
        )
        .unwrap();
        let analytic = marginal_expectation(&fit, a, c);
        worst = worst.max((mc - analytic).abs());
    }
    assert!(worst <= 1e-2, "worst Monte-Carlo gap {worst}");
    pass(10, format!("10^5-sample Monte Carlo within {worst:.2e} of the closed form on 20 rows"));
}
