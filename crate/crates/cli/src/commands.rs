//! One function per subcommand. Each command loads and cross-validates the
//! config, runs its stages under timing, writes its artifacts, and finishes
//! with a manifest listing every emitted file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use decoupler_core::audit::{
    approval_rates, compute_pse, deviation_matrix, fit_constrained_kilbertus, fit_constrained_nabi,
    fit_linear_unconstrained, kilbertus_residuals, threshold_sweep, LinearFit, LinearRow, Policy,
    PredictMode,
};
use decoupler_core::data::{ingest_csv, ColumnKind, ColumnSpec, Dataset, Schema, Value, VariableSpec};
use decoupler_core::decouple::{Decoupler, Overrides, ReferencePointMap};
use decoupler_core::graph::random_dag;
use decoupler_core::model::{HypothesisKind, HypothesisSpec, ModelBundle};
use decoupler_core::search::{exhaustive_search, optimize, SearchError};
use decoupler_core::sim::simulate_linear_scm;

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::report;

/// Resolves the output directory: CLI flag, then the environment override,
/// then the config.
pub fn resolve_output_dir(config: &ExperimentConfig, flag: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("DECOUPLER_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_data(config: &ExperimentConfig, data: &Path) -> Result<Dataset> {
    let options = config.ingest.to_options()?;
    ingest_csv(data, &config.schema, &options)
        .with_context(|| format!("ingesting {}", data.display()))
}

pub fn cmd_simulate(config: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("simulate", config.hash());
    manifest.seed("simulate", config.seed);
    let simulate = config.simulate.as_ref().context("config has no [simulate] section")?;

    let dataset = manifest.stage("simulate", || {
        Ok(simulate_linear_scm(&simulate.params, simulate.n, config.seed)?)
    })?;
    let csv = dataset.to_csv_string()?;
    manifest.emit(&dir, "data.csv", &csv)?;
    let path = manifest.write(&dir)?;
    log::info!("simulated {} rows -> {}", dataset.n_rows(), path.display());
    Ok(())
}

pub fn cmd_ingest(config: &ExperimentConfig, data: &Path, out: Option<&Path>) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("ingest", config.hash());
    let dataset = manifest.stage("ingest", || load_data(config, data))?;
    let csv = dataset.to_csv_string()?;
    manifest.emit(&dir, "normalized.csv", &csv)?;
    manifest.emit(
        &dir,
        "ingest-summary.json",
        &serde_json::to_string_pretty(&serde_json::json!({
            "rows": dataset.n_rows(),
            "columns": dataset.schema().column_count(),
        }))?,
    )?;
    manifest.write(&dir)?;
    println!("ingested {} rows x {} columns", dataset.n_rows(), dataset.schema().column_count());
    Ok(())
}

pub fn cmd_fit(config: &ExperimentConfig, data: &Path, out: Option<&Path>) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("fit", config.hash());
    manifest.seed("train", config.seed);
    let graph = config.graph();
    let dataset = manifest.stage("ingest", || load_data(config, data))?;
    let hypotheses = config.hypotheses.resolve(&graph, config.seed)?;
    let bundle = manifest.stage("fit", || Ok(ModelBundle::fit_all(&graph, &dataset, &hypotheses)?))?;

    manifest.emit(&dir, "bundle.json", &bundle.to_json()?)?;
    manifest.emit(
        &dir,
        "fit-summary.json",
        &serde_json::to_string_pretty(&serde_json::json!({
            "modules": bundle.len(),
            "parameters": bundle.param_count(),
            "param_fingerprint": bundle.param_fingerprint(),
            "graph_fingerprint": bundle.graph_fingerprint,
        }))?,
    )?;
    manifest.write(&dir)?;
    println!("fitted {} modules ({} parameters)", bundle.len(), bundle.param_count());
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ModelBundle::from_json(&text)?)
}

/// Group labels rendered from a column; continuous columns are split at
/// their median into `low`/`high`.
fn labels_for(dataset: &Dataset, column: &str) -> Result<Vec<String>> {
    let spec = dataset
        .schema()
        .column_spec(column)
        .with_context(|| format!("unknown column `{column}`"))?;
    let values = dataset.column(column).expect("column exists");
    match &spec.kind {
        ColumnKind::Continuous => {
            let mut sorted: Vec<f64> = values.iter().map(|v| v.as_f64().unwrap()).collect();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            Ok(values
                .iter()
                .map(|v| if v.as_f64().unwrap() > median { "high".into() } else { "low".into() })
                .collect())
        }
        kind => Ok(values.iter().map(|v| v.render(kind)).collect()),
    }
}

pub fn cmd_decouple(
    config: &ExperimentConfig,
    data: &Path,
    bundle_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("decouple", config.hash());
    let graph = config.graph();
    let dataset = manifest.stage("ingest", || load_data(config, data))?;
    let bundle = load_bundle(bundle_path)?;
    let outcome = config.outcome_node()?;
    let predicate = config
        .predicate
        .as_ref()
        .context("config has no [[predicate]] conditions (least-advantaged subgroup)")?;
    let annealing = config.annealing.to_config(config.seed);
    manifest.seed("annealing", annealing.seed);

    let (best, trace) = manifest.stage("search", || {
        Ok(optimize(&graph, &bundle, &dataset, predicate, &annealing, &outcome, config.decouple.mode)?)
    })?;

    if graph.objectionable().is_empty() {
        log::warn!("no flagged edges in the graph: reporting the baseline only");
    }

    manifest.emit(&dir, "refmap.json", &report::refmap_json(&best, &dataset)?)?;
    let mut trace_csv = Vec::new();
    trace.write_csv(&mut trace_csv, &dataset)?;
    manifest.emit(&dir, "trace.csv", &String::from_utf8(trace_csv)?)?;

    // Group/stratum approval deltas, decoupled vs baseline.
    if let Some(group_column) = &config.report.group_column {
        let baseline_engine = Decoupler::new(
            &graph,
            &bundle,
            dataset.schema(),
            &ReferencePointMap::new(),
            &Overrides::new(),
            &outcome,
            config.decouple.mode,
        )?;
        let decoupled_engine = Decoupler::new(
            &graph,
            &bundle,
            dataset.schema(),
            &best,
            &Overrides::new(),
            &outcome,
            config.decouple.mode,
        )?;
        let policies = vec![
            Policy {
                name: "baseline".into(),
                predictions: baseline_engine.predict_all(&dataset)?.scores,
            },
            Policy {
                name: "decoupled".into(),
                predictions: decoupled_engine.predict_all(&dataset)?.scores,
            },
        ];
        let groups = labels_for(&dataset, group_column)?;
        let strata = config
            .report
            .strata_column
            .as_ref()
            .map(|c| labels_for(&dataset, c))
            .transpose()?;
        let table = approval_rates(
            &policies,
            config.report.threshold,
            &groups,
            strata.as_deref(),
            "baseline",
        )?;
        manifest.emit(&dir, "group-deltas.csv", &report::rates_csv(&table)?)?;
    }

    let mut summary = serde_json::json!({
        "baseline_objective": trace.baseline_objective,
        "best_objective": trace.best_objective,
        "reference_points": best.describe(dataset.schema()),
        "evaluations": trace.steps.len(),
    });
    if graph.objectionable().is_empty() {
        summary["note"] = "baseline-only: the graph flags no edges".into();
    }

    if config.decouple.oracle {
        match manifest.stage("oracle", || {
            Ok(exhaustive_search(
                &graph,
                &bundle,
                &dataset,
                predicate,
                &outcome,
                config.decouple.mode,
                config.decouple.oracle_cap,
            ))
        })? {
            Ok((oracle_map, oracle_obj)) => {
                summary["oracle_objective"] = oracle_obj.into();
                summary["oracle_reference_points"] = oracle_map.describe(dataset.schema()).into();
            }
            Err(SearchError::SpaceTooLarge(detail)) => {
                summary["oracle_skipped"] = detail.into();
            }
            Err(e) => return Err(e.into()),
        }
    }
    manifest.emit(&dir, "decouple-summary.json", &serde_json::to_string_pretty(&summary)?)?;
    manifest.write(&dir)?;
    println!(
        "subgroup objective {:.6} -> {:.6} with [{}]",
        trace.baseline_objective,
        trace.best_objective,
        best.describe(dataset.schema())
    );
    Ok(())
}

pub fn cmd_audit(config: &ExperimentConfig, data: &Path, out: Option<&Path>) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("audit", config.hash());
    manifest.seed("kilbertus_a", config.seed);
    manifest.seed("kilbertus_b", config.seed + 1);
    let dataset = manifest.stage("ingest", || load_data(config, data))?;

    let unconstrained = manifest.stage("fit_unconstrained", || Ok(fit_linear_unconstrained(&dataset)?))?;
    let nabi = manifest.stage("fit_zero_protected", || Ok(fit_constrained_nabi(&dataset)?))?;
    let kil_a = manifest.stage("fit_zero_combination_a", || {
        Ok(fit_constrained_kilbertus(&dataset, config.seed)?)
    })?;
    let kil_b = manifest.stage("fit_zero_combination_b", || {
        Ok(fit_constrained_kilbertus(&dataset, config.seed + 1)?)
    })?;

    let fits: Vec<(&str, &LinearFit)> = vec![
        ("unconstrained", &unconstrained),
        ("zero-protected", &nabi),
        ("zero-combination-a", &kil_a),
        ("zero-combination-b", &kil_b),
    ];

    // Path-combination effect per fit.
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fit", "pse", "residual_direct", "residual_combination"])?;
        for (name, fit) in &fits {
            let (direct, combo) = kilbertus_residuals(fit);
            w.write_record(&[
                (*name).to_owned(),
                format!("{}", compute_pse(fit)),
                format!("{direct}"),
                format!("{combo}"),
            ])?;
        }
        manifest.emit(&dir, "pse.csv", &String::from_utf8(w.into_inner()?)?)?;
    }

    manifest.emit(&dir, "fits.json", &serde_json::to_string_pretty(&fits_json(&fits))?)?;

    // Deviation matrices need the ground truth, which only simulated data has.
    if let Some(simulate) = &config.simulate {
        for (name, fit) in &fits {
            let matrix = deviation_matrix(fit, &simulate.params.theta);
            manifest.emit(&dir, &format!("deviation-{name}.csv"), &report::deviation_csv(&matrix)?)?;
            manifest.emit(
                &dir,
                &format!("deviation-{name}.svg"),
                &report::deviation_svg(&format!("signed relative deviation: {name}"), &matrix),
            )?;
        }
    } else {
        log::info!("no [simulate] section: ground truth unknown, skipping deviation matrices");
    }

    // Threshold sweep over plug-in predictions of all fits.
    let a = dataset.column_as_f64("A")?;
    let c = dataset.column_as_f64("C")?;
    let m = dataset.column_as_f64("M")?;
    let l = dataset.column_as_f64("L")?;
    let plug_in = |fit: &LinearFit| -> Result<Vec<f64>> {
        (0..dataset.n_rows())
            .map(|i| predict_constrained_row(fit, a[i], c[i], m[i], l[i]))
            .collect()
    };
    let policies: Vec<Policy> = fits
        .iter()
        .map(|(name, fit)| {
            Ok(Policy { name: (*name).to_owned(), predictions: plug_in(fit)? })
        })
        .collect::<Result<_>>()?;
    let group_column = config.report.group_column.clone().unwrap_or_else(|| "A".to_owned());
    let groups = labels_for(&dataset, &group_column)?;
    let table = threshold_sweep(&policies, &config.report.thresholds, &groups)?;
    manifest.emit(&dir, "sweep.csv", &report::sweep_csv(&table)?)?;

    // Approval rates at the report threshold, vs the unconstrained baseline.
    let strata = config
        .report
        .strata_column
        .as_ref()
        .map(|column| labels_for(&dataset, column))
        .transpose()?;
    let rates = approval_rates(
        &policies,
        config.report.threshold,
        &groups,
        strata.as_deref(),
        "unconstrained",
    )?;
    manifest.emit(&dir, "rates.csv", &report::rates_csv(&rates)?)?;

    manifest.write(&dir)?;
    println!(
        "audit complete: PSE unconstrained {:.4}, zero-protected {:.2e}, zero-combination {:.2e}",
        compute_pse(&unconstrained),
        compute_pse(&nabi),
        compute_pse(&kil_a)
    );
    Ok(())
}

fn predict_constrained_row(fit: &LinearFit, a: f64, c: f64, m: f64, l: f64) -> Result<f64> {
    Ok(decoupler_core::audit::predict_constrained(
        fit,
        &LinearRow { a, c, m, l },
        PredictMode::PlugIn,
    )?)
}

fn fits_json(fits: &[(&str, &LinearFit)]) -> serde_json::Value {
    serde_json::Value::Object(
        fits.iter()
            .map(|(name, fit)| ((*name).to_owned(), serde_json::to_value(fit).expect("fit serializes")))
            .collect(),
    )
}

pub fn cmd_predict(
    config: &ExperimentConfig,
    data: &Path,
    bundle_path: &Path,
    refmap_path: Option<&Path>,
    trace: bool,
    out: Option<&Path>,
) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("predict", config.hash());
    let graph = config.graph();
    let dataset = manifest.stage("ingest", || load_data(config, data))?;
    let bundle = load_bundle(bundle_path)?;
    let outcome = config.outcome_node()?;

    let refmap = match refmap_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            report::refmap_from_json(&text, &dataset)?
        }
        None => ReferencePointMap::new(),
    };

    let engine = Decoupler::new(
        &graph,
        &bundle,
        dataset.schema(),
        &refmap,
        &Overrides::new(),
        &outcome,
        config.decouple.mode,
    )?;
    let predictions = manifest.stage("predict", || Ok(engine.predict_all(&dataset)?))?;
    manifest.emit(&dir, "predictions.csv", &report::predictions_csv(&predictions.scores)?)?;
    manifest.emit(
        &dir,
        "trace-summary.json",
        &serde_json::to_string_pretty(&predictions.summary)?,
    )?;

    if trace {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "node", "affected", "value"])?;
        for row in 0..dataset.n_rows() {
            let state = engine.instantiate_row(&dataset, row)?;
            for node in &state.nodes {
                let value =
                    node.value.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("|");
                w.write_record(&[
                    row.to_string(),
                    node.node.as_str().to_owned(),
                    node.affected.to_string(),
                    value,
                ])?;
            }
        }
        manifest.emit(&dir, "trace-rows.csv", &String::from_utf8(w.into_inner()?)?)?;
    }

    manifest.write(&dir)?;
    println!("predicted {} rows", predictions.scores.len());
    Ok(())
}

pub fn cmd_bench_scale(config: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let dir = resolve_output_dir(config, out)?;
    let mut manifest = RunManifest::new("bench-scale", config.hash());
    let bench = config.bench.as_ref().context("config has no [bench] section")?;
    let seed = bench.seed.unwrap_or(config.seed);
    manifest.seed("bench", seed);

    let graph = manifest.stage("random_dag", || {
        random_dag(bench.n_nodes, bench.avg_degree, seed).map_err(|e| anyhow::anyhow!("{e}"))
    })?;
    let schema = Schema::new(
        graph
            .nodes()
            .iter()
            .map(|n| VariableSpec {
                node: n.clone(),
                columns: vec![ColumnSpec {
                    name: n.as_str().to_owned(),
                    kind: ColumnKind::Continuous,
                }],
            })
            .collect(),
    );
    let hypotheses = graph
        .nodes()
        .iter()
        .map(|n| (n.clone(), HypothesisSpec::new(HypothesisKind::Mlp)))
        .collect();
    let bundle = manifest.stage("initialize", || {
        Ok(ModelBundle::initialize(&graph, &schema, &hypotheses, seed)?)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe9c);
    let columns: Vec<Vec<Value>> = (0..graph.nodes().len())
        .map(|_| (0..bench.rows).map(|_| Value::Real(rng.random::<f64>())).collect())
        .collect();
    let dataset = Dataset::new(schema, columns)?;
    let start = std::time::Instant::now();
    let forward =
        manifest.stage("forward", || Ok(bundle.forward_all(&dataset, config.decouple.mode)?))?;
    let forward_ms = start.elapsed().as_millis();

    let summary = serde_json::json!({
        "n_nodes": bench.n_nodes,
        "avg_degree": bench.avg_degree,
        "edges": graph.edges().len(),
        "modules": bundle.len(),
        "parameters": bundle.param_count(),
        "macs_per_row": bundle.mac_count(),
        "forward_rows": forward.len(),
        "forward_ms": forward_ms,
    });
    manifest.emit(&dir, "scale.json", &serde_json::to_string_pretty(&summary)?)?;
    manifest.write(&dir)?;
    println!(
        "{} nodes, {} edges: {} parameters, {} MACs/row, {} rows forwarded in {} ms",
        bench.n_nodes,
        graph.edges().len(),
        bundle.param_count(),
        bundle.mac_count(),
        forward.len(),
        forward_ms
    );
    Ok(())
}
