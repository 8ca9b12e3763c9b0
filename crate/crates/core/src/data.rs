//! Typed tabular data: schema with node-to-column mapping, CSV ingestion,
//! one-hot encoding, and deterministic splits.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{CausalGraph, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("column `{0}` missing from input header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` as {kind} for column `{column}`")]
    UnparseableValue { row: usize, column: String, value: String, kind: &'static str },
    #[error("row {row}: `{value}` is not a declared level of column `{column}`")]
    UnknownLevel { row: usize, column: String, value: String },
    #[error("dataset is empty (need at least one row)")]
    EmptyDataset,
    #[error("split counts {train}+{test} exceed the {rows} available rows")]
    CountsExceedRows { train: usize, test: usize, rows: usize },
    #[error("split counts {train}+{test} do not partition the {rows} rows")]
    CountsNotExhaustive { train: usize, test: usize, rows: usize },
    #[error("split fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` expects {expected}, got {got:?}")]
    KindMismatch { column: String, expected: &'static str, got: Value },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column `{column}` has {got} values, expected {expected}")]
    LengthMismatch { column: String, expected: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kind of a single column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Continuous,
    /// Enumerated levels; order fixes the one-hot layout.
    Categorical(Vec<String>),
}

impl ColumnKind {
    pub fn encoded_width(&self) -> usize {
        match self {
            ColumnKind::Binary | ColumnKind::Continuous => 1,
            ColumnKind::Categorical(levels) => levels.len(),
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ColumnKind::Binary => "binary",
            ColumnKind::Continuous => "continuous",
            ColumnKind::Categorical(_) => "categorical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Maps one graph node to one or more data columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub node: NodeId,
    pub columns: Vec<ColumnSpec>,
}

/// One cell value, stored in the column's native kind. Categorical values
/// hold the level index into the declared level list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Bool(bool),
    Level(u32),
    Real(f64),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Real(v) => Some(*v),
            Value::Level(_) => None,
        }
    }

    fn kind_matches(&self, kind: &ColumnKind) -> bool {
        match (self, kind) {
            (Value::Bool(_), ColumnKind::Binary) => true,
            (Value::Real(v), ColumnKind::Continuous) => v.is_finite(),
            (Value::Level(i), ColumnKind::Categorical(levels)) => (*i as usize) < levels.len(),
            _ => false,
        }
    }

    /// Canonical text form: `0`/`1` for binary, shortest round-trip decimal
    /// for continuous, the level name for categorical.
    pub fn render(&self, kind: &ColumnKind) -> String {
        match (self, kind) {
            (Value::Bool(b), _) => if *b { "1".into() } else { "0".into() },
            (Value::Real(v), _) => format!("{v}"),
            (Value::Level(i), ColumnKind::Categorical(levels)) => levels[*i as usize].clone(),
            (Value::Level(i), _) => format!("{i}"),
        }
    }
}

/// Declared columns grouped by node, plus an optional target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub variables: Vec<VariableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl Schema {
    pub fn new(variables: Vec<VariableSpec>) -> Self {
        Schema { variables, target: None }
    }

    pub fn with_target(mut self, column: impl Into<String>) -> Self {
        self.target = Some(column.into());
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashMap::new();
        let mut seen_nodes = HashMap::new();
        for var in &self.variables {
            if var.columns.is_empty() {
                return Err(DataError::InvalidSchema(format!(
                    "node `{}` declares no columns",
                    var.node
                )));
            }
            if seen_nodes.insert(var.node.clone(), ()).is_some() {
                return Err(DataError::InvalidSchema(format!(
                    "node `{}` declared twice",
                    var.node
                )));
            }
            for col in &var.columns {
                if seen.insert(col.name.clone(), ()).is_some() {
                    return Err(DataError::InvalidSchema(format!(
                        "column `{}` declared twice",
                        col.name
                    )));
                }
                if let ColumnKind::Categorical(levels) = &col.kind {
                    if levels.is_empty() {
                        return Err(DataError::InvalidSchema(format!(
                            "categorical column `{}` has no levels",
                            col.name
                        )));
                    }
                }
            }
        }
        if let Some(target) = &self.target {
            if self.column_index(target).is_none() {
                return Err(DataError::InvalidSchema(format!(
                    "target column `{target}` not declared"
                )));
            }
        }
        Ok(())
    }

    /// Checks that schema nodes exactly cover the graph's nodes.
    pub fn check_graph(&self, graph: &CausalGraph) -> Result<(), DataError> {
        for node in graph.nodes() {
            if self.variable(node).is_none() {
                return Err(DataError::InvalidSchema(format!(
                    "graph node `{node}` has no schema entry"
                )));
            }
        }
        for var in &self.variables {
            if graph.node_index(&var.node).is_none() {
                return Err(DataError::InvalidSchema(format!(
                    "schema node `{}` is not in the graph",
                    var.node
                )));
            }
        }
        Ok(())
    }

    pub fn variable(&self, node: &NodeId) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| &v.node == node)
    }

    /// Flattened column list in schema order.
    pub fn columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.variables.iter().flat_map(|v| v.columns.iter())
    }

    pub fn column_count(&self) -> usize {
        self.variables.iter().map(|v| v.columns.len()).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns().position(|c| c.name == name)
    }

    pub fn column_spec(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns().find(|c| c.name == name)
    }

    /// Flattened column index range of a node's columns.
    pub fn node_column_range(&self, node: &NodeId) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for var in &self.variables {
            let width = var.columns.len();
            if &var.node == node {
                return Some(offset..offset + width);
            }
            offset += width;
        }
        None
    }

    /// Width of a node's one-hot encoded representation.
    pub fn node_encoded_width(&self, node: &NodeId) -> Option<usize> {
        self.variable(node)
            .map(|v| v.columns.iter().map(|c| c.kind.encoded_width()).sum())
    }

    /// Names of the encoded features of a node, e.g. `M=married` for one-hot
    /// slots and the bare column name otherwise.
    pub fn encoded_feature_names(&self, node: &NodeId) -> Option<Vec<String>> {
        let var = self.variable(node)?;
        let mut names = Vec::new();
        for col in &var.columns {
            match &col.kind {
                ColumnKind::Binary | ColumnKind::Continuous => names.push(col.name.clone()),
                ColumnKind::Categorical(levels) => {
                    for level in levels {
                        names.push(format!("{}={}", col.name, level));
                    }
                }
            }
        }
        Some(names)
    }

    /// Encodes one node value (one `Value` per column) into the flat f64
    /// representation used by the model layer.
    pub fn encode_node_value(&self, node: &NodeId, values: &[Value]) -> Result<Vec<f64>, DataError> {
        let var = self
            .variable(node)
            .ok_or_else(|| DataError::UnknownColumn(node.as_str().to_owned()))?;
        if values.len() != var.columns.len() {
            return Err(DataError::InvalidSchema(format!(
                "node `{node}` expects {} values, got {}",
                var.columns.len(),
                values.len()
            )));
        }
        let mut out = Vec::new();
        for (col, value) in var.columns.iter().zip(values) {
            if !value.kind_matches(&col.kind) {
                return Err(DataError::KindMismatch {
                    column: col.name.clone(),
                    expected: col.kind.describe(),
                    got: value.clone(),
                });
            }
            match (&col.kind, value) {
                (ColumnKind::Binary, Value::Bool(b)) => out.push(if *b { 1.0 } else { 0.0 }),
                (ColumnKind::Continuous, Value::Real(v)) => out.push(*v),
                (ColumnKind::Categorical(levels), Value::Level(i)) => {
                    for k in 0..levels.len() {
                        out.push(if k == *i as usize { 1.0 } else { 0.0 });
                    }
                }
                _ => unreachable!("kind checked above"),
            }
        }
        Ok(out)
    }
}

/// Immutable table whose columns follow the schema's flattened order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Vec<Value>>,
}

impl Dataset {
    pub fn new(schema: Schema, columns: Vec<Vec<Value>>) -> Result<Self, DataError> {
        schema.validate()?;
        if columns.len() != schema.column_count() {
            return Err(DataError::InvalidSchema(format!(
                "expected {} columns, got {}",
                schema.column_count(),
                columns.len()
            )));
        }
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        for (spec, col) in schema.columns().zip(&columns) {
            if col.len() != n {
                return Err(DataError::LengthMismatch {
                    column: spec.name.clone(),
                    expected: n,
                    got: col.len(),
                });
            }
            for value in col {
                if !value.kind_matches(&spec.kind) {
                    return Err(DataError::KindMismatch {
                        column: spec.name.clone(),
                        expected: spec.kind.describe(),
                        got: value.clone(),
                    });
                }
            }
        }
        Ok(Dataset { schema, columns })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn column(&self, name: &str) -> Option<&[Value]> {
        let idx = self.schema.column_index(name)?;
        Some(&self.columns[idx])
    }

    /// Column values coerced to f64; fails for categorical columns.
    pub fn column_as_f64(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let spec = self
            .schema
            .column_spec(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_owned()))?;
        let col = self.column(name).expect("checked above");
        col.iter()
            .map(|v| {
                v.as_f64().ok_or_else(|| DataError::KindMismatch {
                    column: name.to_owned(),
                    expected: spec.kind.describe(),
                    got: v.clone(),
                })
            })
            .collect()
    }

    pub fn value(&self, column_index: usize, row: usize) -> &Value {
        &self.columns[column_index][row]
    }

    /// New dataset containing `rows` (by index, in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|col| rows.iter().map(|&r| col[r].clone()).collect())
            .collect();
        Dataset { schema: self.schema.clone(), columns }
    }

    /// Encoded design block for one node: row-major, one row per dataset row.
    pub fn encode_node(&self, node: &NodeId) -> Result<Vec<Vec<f64>>, DataError> {
        let range = self
            .schema
            .node_column_range(node)
            .ok_or_else(|| DataError::UnknownColumn(node.as_str().to_owned()))?;
        let width: usize = self.schema.node_encoded_width(node).expect("node known");
        let specs: Vec<&ColumnSpec> = self.schema.columns().collect();
        let n = self.n_rows();
        let mut out = vec![Vec::with_capacity(width); n];
        for c in range {
            let spec = specs[c];
            for (row, value) in self.columns[c].iter().enumerate() {
                match (&spec.kind, value) {
                    (ColumnKind::Binary, Value::Bool(b)) => out[row].push(if *b { 1.0 } else { 0.0 }),
                    (ColumnKind::Continuous, Value::Real(v)) => out[row].push(*v),
                    (ColumnKind::Categorical(levels), Value::Level(i)) => {
                        for k in 0..levels.len() {
                            out[row].push(if k == *i as usize { 1.0 } else { 0.0 });
                        }
                    }
                    _ => unreachable!("dataset construction kind-checks values"),
                }
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let specs: Vec<&ColumnSpec> = self.schema.columns().collect();
        w.write_record(specs.iter().map(|s| s.name.as_str()))?;
        for row in 0..self.n_rows() {
            let record: Vec<String> = specs
                .iter()
                .enumerate()
                .map(|(c, spec)| self.columns[c][row].render(&spec.kind))
                .collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, DataError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Ingestion knobs. `collapse` maps raw categorical text to declared levels
/// per column (e.g. collapsing detailed marital-status codes to
/// `married`/`single`) before level validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    pub delimiter: u8,
    pub has_header: bool,
    #[serde(default)]
    pub collapse: HashMap<String, HashMap<String, String>>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { delimiter: b',', has_header: true, collapse: HashMap::new() }
    }
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    options: &IngestOptions,
) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, schema, options)
}

pub fn ingest_csv_reader<R: Read>(
    reader: R,
    schema: &Schema,
    options: &IngestOptions,
) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let specs: Vec<&ColumnSpec> = schema.columns().collect();

    // Position of each schema column in the file; extra file columns are ignored.
    let positions: Vec<usize> = if options.has_header {
        let headers = rdr.headers()?.clone();
        specs
            .iter()
            .map(|spec| {
                headers
                    .iter()
                    .position(|h| h == spec.name)
                    .ok_or_else(|| DataError::MissingColumn(spec.name.clone()))
            })
            .collect::<Result<_, _>>()?
    } else {
        (0..specs.len()).collect()
    };

    let mut columns: Vec<Vec<Value>> = vec![Vec::new(); specs.len()];
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, (spec, &pos)) in specs.iter().zip(&positions).enumerate() {
            let raw = record.get(pos).ok_or_else(|| DataError::MissingColumn(spec.name.clone()))?;
            columns[c].push(parse_value(raw, spec, row_idx, options)?);
        }
    }

    if columns.first().map(|c| c.is_empty()).unwrap_or(true) {
        return Err(DataError::EmptyDataset);
    }
    let row_count = columns[0].len();
    log::debug!("ingested {row_count} rows x {} columns", columns.len());
    Dataset::new(schema.clone(), columns)
}

fn parse_value(
    raw: &str,
    spec: &ColumnSpec,
    row: usize,
    options: &IngestOptions,
) -> Result<Value, DataError> {
    let collapsed = options
        .collapse
        .get(&spec.name)
        .and_then(|map| map.get(raw))
        .map(String::as_str)
        .unwrap_or(raw);
    match &spec.kind {
        ColumnKind::Binary => match collapsed {
            "0" | "false" => Ok(Value::Bool(false)),
            "1" | "true" => Ok(Value::Bool(true)),
            _ => Err(DataError::UnparseableValue {
                row,
                column: spec.name.clone(),
                value: raw.to_owned(),
                kind: "binary",
            }),
        },
        ColumnKind::Continuous => collapsed
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Real)
            .ok_or_else(|| DataError::UnparseableValue {
                row,
                column: spec.name.clone(),
                value: raw.to_owned(),
                kind: "continuous",
            }),
        ColumnKind::Categorical(levels) => levels
            .iter()
            .position(|l| l == collapsed)
            .map(|i| Value::Level(i as u32))
            .ok_or_else(|| DataError::UnknownLevel {
                row,
                column: spec.name.clone(),
                value: raw.to_owned(),
            }),
    }
}

/// How to partition a dataset into train and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSpec {
    Fraction(f64),
    Counts { train: usize, test: usize },
}

/// Disjoint, exhaustive, seeded partition. Row order within each part follows
/// the original dataset order.
pub fn split(dataset: &Dataset, spec: SplitSpec, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let n = dataset.n_rows();
    let train_count = match spec {
        SplitSpec::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(DataError::BadFraction(f));
            }
            (f * n as f64).round() as usize
        }
        SplitSpec::Counts { train, test } => {
            if train + test > n {
                return Err(DataError::CountsExceedRows { train, test, rows: n });
            }
            if train + test != n {
                return Err(DataError::CountsNotExhaustive { train, test, rows: n });
            }
            train
        }
    };
    if train_count == n {
        log::warn!("split leaves the test set empty ({n} rows all assigned to train)");
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train_rows = order[..train_count].to_vec();
    let mut test_rows = order[train_count..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok((dataset.select_rows(&train_rows), dataset.select_rows(&test_rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_schema() -> Schema {
        Schema::new(vec![
            VariableSpec {
                node: NodeId::from("A"),
                columns: vec![ColumnSpec { name: "A".into(), kind: ColumnKind::Binary }],
            },
            VariableSpec {
                node: NodeId::from("M"),
                columns: vec![ColumnSpec {
                    name: "M".into(),
                    kind: ColumnKind::Categorical(vec!["married".into(), "single".into()]),
                }],
            },
            VariableSpec {
                node: NodeId::from("Y"),
                columns: vec![ColumnSpec { name: "Y".into(), kind: ColumnKind::Continuous }],
            },
        ])
        .with_target("Y")
    }

    fn toy_dataset() -> Dataset {
        Dataset::new(
            toy_schema(),
            vec![
                vec![Value::Bool(true), Value::Bool(false), Value::Bool(true), Value::Bool(false)],
                vec![Value::Level(0), Value::Level(1), Value::Level(1), Value::Level(0)],
                vec![Value::Real(0.5), Value::Real(-1.25), Value::Real(2.0), Value::Real(0.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn ingest_parses_and_validates() {
        let csv = "A,M,Y\n1,married,0.5\n0,single,-1.25\n";
        let ds = ingest_csv_reader(csv.as_bytes(), &toy_schema(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.column("M").unwrap()[1], Value::Level(1));
    }

    #[test]
    fn ingest_rejects_bad_binary() {
        let csv = "A,M,Y\nmaybe,married,0.5\n";
        let err = ingest_csv_reader(csv.as_bytes(), &toy_schema(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::UnparseableValue { column, .. } if column == "A"));
    }

    #[test]
    fn ingest_rejects_unknown_level() {
        let csv = "A,M,Y\n1,widowed,0.5\n";
        let err = ingest_csv_reader(csv.as_bytes(), &toy_schema(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::UnknownLevel { column, .. } if column == "M"));
    }

    #[test]
    fn ingest_rejects_header_only() {
        let csv = "A,M,Y\n";
        let err = ingest_csv_reader(csv.as_bytes(), &toy_schema(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::EmptyDataset));
    }

    #[test]
    fn ingest_rejects_missing_column() {
        let csv = "A,Y\n1,0.5\n";
        let err = ingest_csv_reader(csv.as_bytes(), &toy_schema(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "M"));
    }

    #[test]
    fn collapse_map_applies_before_level_check() {
        let mut options = IngestOptions::default();
        options
            .collapse
            .entry("M".into())
            .or_default()
            .insert("Married-civ-spouse".into(), "married".into());
        let csv = "A,M,Y\n1,Married-civ-spouse,0.5\n";
        let ds = ingest_csv_reader(csv.as_bytes(), &toy_schema(), &options).unwrap();
        assert_eq!(ds.column("M").unwrap()[0], Value::Level(0));
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let ds = toy_dataset();
        let text = ds.to_csv_string().unwrap();
        let back = ingest_csv_reader(text.as_bytes(), ds.schema(), &IngestOptions::default()).unwrap();
        assert_eq!(ds, back);
        // And a second round trip yields the same bytes.
        assert_eq!(text, back.to_csv_string().unwrap());
    }

    #[test]
    fn split_fraction_is_disjoint_and_exhaustive() {
        let ds = toy_dataset();
        let (train, test) = split(&ds, SplitSpec::Fraction(0.5), 9).unwrap();
        assert_eq!(train.n_rows(), 2);
        assert_eq!(test.n_rows(), 2);
        // Multiset of Y values preserved.
        let mut all: Vec<f64> = train
            .column_as_f64("Y")
            .unwrap()
            .into_iter()
            .chain(test.column_as_f64("Y").unwrap())
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, vec![-1.25, 0.0, 0.5, 2.0]);
    }

    #[test]
    fn split_counts_must_partition() {
        let ds = toy_dataset();
        assert!(matches!(
            split(&ds, SplitSpec::Counts { train: 3, test: 3 }, 0),
            Err(DataError::CountsExceedRows { .. })
        ));
        assert!(matches!(
            split(&ds, SplitSpec::Counts { train: 2, test: 1 }, 0),
            Err(DataError::CountsNotExhaustive { .. })
        ));
        let (train, test) = split(&ds, SplitSpec::Counts { train: 3, test: 1 }, 0).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (3, 1));
    }

    #[test]
    fn split_exact_counts_at_census_scale() {
        // 48,842 rows partitioned 32,561 / 16,281 (the census-style split).
        let schema = Schema::new(vec![VariableSpec {
            node: NodeId::from("A"),
            columns: vec![ColumnSpec { name: "A".into(), kind: ColumnKind::Binary }],
        }]);
        let rows = 48_842;
        let ds = Dataset::new(schema, vec![(0..rows).map(|i| Value::Bool(i % 2 == 0)).collect()])
            .unwrap();
        let (train, test) = split(&ds, SplitSpec::Counts { train: 32_561, test: 16_281 }, 4).unwrap();
        assert_eq!(train.n_rows(), 32_561);
        assert_eq!(test.n_rows(), 16_281);
    }

    #[test]
    fn split_full_fraction_leaves_empty_test() {
        let ds = toy_dataset();
        let (train, test) = split(&ds, SplitSpec::Fraction(1.0), 0).unwrap();
        assert_eq!(train.n_rows(), 4);
        assert_eq!(test.n_rows(), 0);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let ds = toy_dataset();
        let (a, _) = split(&ds, SplitSpec::Fraction(0.5), 42).unwrap();
        let (b, _) = split(&ds, SplitSpec::Fraction(0.5), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoding_uses_declared_level_order() {
        let ds = toy_dataset();
        let m = ds.encode_node(&NodeId::from("M")).unwrap();
        assert_eq!(m[0], vec![1.0, 0.0]);
        assert_eq!(m[1], vec![0.0, 1.0]);
        let names = ds.schema().encoded_feature_names(&NodeId::from("M")).unwrap();
        assert_eq!(names, vec!["M=married", "M=single"]);
    }

    #[test]
    fn encode_node_value_kind_checks() {
        let schema = toy_schema();
        let ok = schema.encode_node_value(&NodeId::from("A"), &[Value::Bool(true)]).unwrap();
        assert_eq!(ok, vec![1.0]);
        assert!(schema
            .encode_node_value(&NodeId::from("A"), &[Value::Real(0.5)])
            .is_err());
        assert!(schema
            .encode_node_value(&NodeId::from("M"), &[Value::Level(5)])
            .is_err());
    }
}
