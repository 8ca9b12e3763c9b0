//! Experiment configuration: one TOML file declares the graph, the schema
//! with node-to-column mapping, per-node hypotheses, the flagged edges, the
//! subgroup predicate, annealing settings, and report knobs. Everything is
//! cross-validated before any run.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use decoupler_core::data::{IngestOptions, Schema};
use decoupler_core::graph::{CausalGraph, Edge, NodeId};
use decoupler_core::model::{HypothesisKind, HypothesisSpec, PropagationMode, TrainParams};
use decoupler_core::search::{AnnealingConfig, SubgroupPredicate};
use decoupler_core::sim::LinearScmParams;
use decoupler_core::util::Fnv;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub graph: GraphSection,
    pub schema: Schema,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub hypotheses: HypothesesSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<SubgroupPredicate>,
    #[serde(default)]
    pub annealing: AnnealingSection,
    #[serde(default)]
    pub decouple: DecoupleSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub objectionable: Vec<(String, String)>,
}

impl GraphSection {
    pub fn to_graph(&self) -> CausalGraph {
        CausalGraph::new(
            self.nodes.iter().map(String::as_str),
            self.edges.iter().map(|(t, h)| Edge::new(t.as_str(), h.as_str())),
            self.objectionable.iter().map(|(t, h)| Edge::new(t.as_str(), h.as_str())),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub delimiter: String,
    pub has_header: bool,
    /// Per-column raw-text to declared-level maps, applied before level
    /// validation. BTreeMap keeps the config hash independent of key order.
    pub collapse: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { delimiter: ",".into(), has_header: true, collapse: BTreeMap::new() }
    }
}

impl IngestSection {
    pub fn to_options(&self) -> Result<IngestOptions> {
        let bytes = self.delimiter.as_bytes();
        if bytes.len() != 1 {
            bail!("ingest.delimiter must be a single byte, got `{}`", self.delimiter);
        }
        Ok(IngestOptions {
            delimiter: bytes[0],
            has_header: self.has_header,
            collapse: self
                .collapse
                .iter()
                .map(|(col, map)| {
                    (col.clone(), map.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    #[serde(flatten)]
    pub params: LinearScmParams,
}

/// Per-node hypothesis declarations with an optional default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesesSection {
    pub default: Option<HypothesisToml>,
    pub nodes: BTreeMap<String, HypothesisToml>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisToml {
    pub kind: HypothesisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl HypothesisToml {
    fn resolve(&self, global_seed: u64) -> HypothesisSpec {
        let defaults = TrainParams::default();
        HypothesisSpec {
            kind: self.kind,
            train: TrainParams {
                epochs: self.epochs.unwrap_or(defaults.epochs),
                batch_size: self.batch_size.unwrap_or(defaults.batch_size),
                learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
                seed: self.seed.unwrap_or(global_seed),
            },
        }
    }
}

impl HypothesesSection {
    /// One resolved spec per non-root node; errors name the first node with
    /// neither a per-node entry nor a default.
    pub fn resolve(&self, graph: &CausalGraph, global_seed: u64) -> Result<HashMap<NodeId, HypothesisSpec>> {
        let mut out = HashMap::new();
        for node in graph.nodes() {
            let parents = graph.parents(node).map_err(|e| anyhow::anyhow!("{e}"))?;
            if parents.is_empty() {
                continue;
            }
            let toml = self
                .nodes
                .get(node.as_str())
                .or(self.default.as_ref())
                .with_context(|| format!("no hypothesis declared for non-root node `{node}`"))?;
            out.insert(node.clone(), toml.resolve(global_seed));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealingSection {
    pub initial_temp: f64,
    pub cooling: f64,
    pub iterations: usize,
    pub proposal_scale: f64,
    pub restarts: usize,
    /// Defaults to the global seed when absent.
    pub seed: Option<u64>,
}

impl Default for AnnealingSection {
    fn default() -> Self {
        let d = AnnealingConfig::default();
        AnnealingSection {
            initial_temp: d.initial_temp,
            cooling: d.cooling,
            iterations: d.iterations,
            proposal_scale: d.proposal_scale,
            restarts: d.restarts,
            seed: None,
        }
    }
}

impl AnnealingSection {
    pub fn to_config(&self, global_seed: u64) -> AnnealingConfig {
        AnnealingConfig {
            initial_temp: self.initial_temp,
            cooling: self.cooling,
            iterations: self.iterations,
            proposal_scale: self.proposal_scale,
            restarts: self.restarts,
            seed: self.seed.unwrap_or(global_seed),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoupleSection {
    pub mode: PropagationMode,
    /// Also run the exhaustive oracle (all-discrete flagged tails only).
    pub oracle: bool,
    pub oracle_cap: usize,
}

impl Default for DecoupleSection {
    fn default() -> Self {
        DecoupleSection {
            mode: PropagationMode::Hard,
            oracle: false,
            oracle_cap: decoupler_core::search::DEFAULT_EXHAUSTIVE_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub threshold: f64,
    pub group_column: Option<String>,
    pub strata_column: Option<String>,
    pub thresholds: Vec<f64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            threshold: 0.5,
            group_column: None,
            strata_column: None,
            thresholds: (0..=10).map(|i| 1.0 - 0.1 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub n_nodes: usize,
    pub avg_degree: usize,
    #[serde(default = "default_bench_rows")]
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_bench_rows() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-validates the graph, schema, predicate columns, thresholds, and
    /// annealing settings before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let graph = self.graph.to_graph();
        if let Err(violations) = graph.validate() {
            let lines: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
            bail!("invalid graph:\n{}", lines.join("\n"));
        }
        self.schema.validate().map_err(|e| anyhow::anyhow!("invalid schema: {e}"))?;
        self.schema
            .check_graph(&graph)
            .map_err(|e| anyhow::anyhow!("schema/graph mismatch: {e}"))?;
        self.ingest.to_options()?;

        if let Some(simulate) = &self.simulate {
            if simulate.n == 0 {
                bail!("simulate.n must be >= 1");
            }
            simulate.params.validate().map_err(|e| anyhow::anyhow!("simulate params: {e}"))?;
        }

        if let Some(predicate) = &self.predicate {
            for condition in &predicate.conditions {
                let column = match condition {
                    decoupler_core::search::Condition::Equals { column, .. }
                    | decoupler_core::search::Condition::In { column, .. }
                    | decoupler_core::search::Condition::Range { column, .. } => column,
                };
                if self.schema.column_index(column).is_none() {
                    bail!("predicate references unknown column `{column}`");
                }
            }
        }

        self.annealing
            .to_config(self.seed)
            .validate()
            .map_err(|e| anyhow::anyhow!("annealing: {e}"))?;

        if self.report.thresholds.is_empty() {
            bail!("report.thresholds must not be empty");
        }
        for pair in self.report.thresholds.windows(2) {
            if pair[1] >= pair[0] {
                bail!("report.thresholds must be strictly decreasing ({} then {})", pair[0], pair[1]);
            }
        }
        for column in [&self.report.group_column, &self.report.strata_column].into_iter().flatten() {
            if self.schema.column_index(column).is_none() {
                bail!("report references unknown column `{column}`");
            }
        }

        if let Some(bench) = &self.bench {
            if bench.n_nodes < 2 || bench.rows == 0 {
                bail!("bench needs n_nodes >= 2 and rows >= 1");
            }
        }
        Ok(())
    }

    /// Stable hash of the parsed configuration: whitespace, comments, and
    /// key order in the TOML file do not affect it; any semantic field does.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut h = Fnv::new();
        h.write(canonical.as_bytes());
        h.finish_hex()
    }

    pub fn graph(&self) -> CausalGraph {
        self.graph.to_graph()
    }

    /// The outcome node: owner of the schema's target column.
    pub fn outcome_node(&self) -> Result<NodeId> {
        let target = self
            .schema
            .target
            .as_ref()
            .context("schema.target must name the outcome column")?;
        for var in &self.schema.variables {
            if var.columns.iter().any(|c| &c.name == target) {
                return Ok(var.node.clone());
            }
        }
        bail!("target column `{target}` not found in schema")
    }
}
