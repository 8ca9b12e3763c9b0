//! Procedural-fairness engine over causal DAGs.
//!
//! The pipeline fits one predictive module per non-root node of a causal
//! graph, then decouples user-flagged edges by propagating fixed reference
//! points along them instead of observed or derived values. Reference point
//! values are searched to maximize the expected prediction for a declared
//! subgroup, and audit utilities quantify how constrained baselines distort
//! the mechanisms they were never meant to touch.

pub mod audit;
pub mod data;
pub mod decouple;
pub mod graph;
pub mod model;
pub mod search;
pub mod sim;
pub mod util;

pub use data::{ColumnKind, ColumnSpec, Dataset, IngestOptions, Schema, SplitSpec, Value, VariableSpec};
pub use decouple::{Decoupler, Overrides, ReferencePointMap};
pub use graph::{CausalGraph, Edge, NodeId};
pub use model::{HypothesisKind, HypothesisSpec, LocalModule, ModelBundle, PropagationMode, TrainParams};
pub use search::{AnnealingConfig, Condition, SearchTrace, SubgroupPredicate};
pub use sim::{LinearScmParams, LinearTheta, NoiseScales};
