//! Tabular ingestion and the real-data trial protocol.
//!
//! Real sources arrive as numeric CSV with a header row. The protocol file
//! names the label column, the binarization rule, the declared graph, the
//! partition sizes, and the trial count. Each trial re-randomizes the
//! labelled/unlabelled/validation split, keeps both classes in the labelled
//! partition, and standardizes features with statistics from the labelled
//! and unlabelled rows.
//!
//! The same module owns the dataset CSV format used for synthetic instance
//! export: one column per feature dimension (`X_C_1`, `X_C_2`, ...), the
//! label column, and a `partition` column with values `l`, `u`, `v`, `t`.

use crate::graph::{CausalGraph, FactorEntry, FactorPlan, GraphError, Role, Scenario, VarId};
use crate::seed;
use crate::synth::{Dataset, Partitions};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` is constant; cannot binarize at the median")]
    ConstantColumn(String),
    #[error("not enough rows: need {need}, have {have}")]
    InsufficientRows { need: usize, have: usize },
    #[error("labelled partition never covered both classes")]
    ClassCoverageFailure,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A rectangular numeric table with named columns.
#[derive(Debug, Clone)]
pub struct TabularSource {
    pub columns: Vec<String>,
    pub rows: Array2<f64>,
    /// Rows dropped during ingestion because a cell failed to parse.
    pub dropped_rows: usize,
    pub provenance: String,
}

impl TabularSource {
    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, DataError> {
        Ok(self.rows.column(self.column_index(name)?).to_vec())
    }
}

/// Load a headered numeric CSV. Rows containing unparseable cells are
/// dropped and counted. `required` columns must all be present.
pub fn load_csv(path: &Path, required: &[String]) -> Result<TabularSource, DataError> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, required, &path.display().to_string())
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    required: &[String],
    provenance: &str,
) -> Result<TabularSource, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    for need in required {
        if !columns.contains(need) {
            return Err(DataError::MissingColumn(need.clone()));
        }
    }
    let mut data: Vec<f64> = Vec::new();
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse(e.to_string()))?;
        if record.len() != columns.len() {
            dropped += 1;
            continue;
        }
        let parsed: Option<Vec<f64>> =
            record.iter().map(|cell| cell.trim().parse::<f64>().ok()).collect();
        match parsed {
            Some(values) => {
                data.extend(values);
                kept += 1;
            }
            None => dropped += 1,
        }
    }
    let rows = Array2::from_shape_vec((kept, columns.len()), data)
        .map_err(|e| DataError::Parse(e.to_string()))?;
    Ok(TabularSource { columns, rows, dropped_rows: dropped, provenance: provenance.to_string() })
}

/// y = 1 iff value > median; ties map to class 0.
pub fn binarize_median(source: &TabularSource, column: &str) -> Result<Vec<usize>, DataError> {
    let values = source.column(column)?;
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let first = sorted[0];
    if sorted.iter().all(|&v| v == first) {
        return Err(DataError::ConstantColumn(column.to_string()));
    }
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(values.iter().map(|&v| usize::from(v > median)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binarize {
    Median,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealSizes {
    pub l: usize,
    pub u: usize,
    pub v: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
}

/// Protocol file for one real-data experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealProtocol {
    pub name: String,
    pub label: String,
    pub binarize: Binarize,
    /// Graph JSON path, relative to the protocol file.
    pub graph_file: String,
    pub sizes: RealSizes,
    pub trials: usize,
    pub seed: u64,
}

impl RealProtocol {
    pub fn from_path(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DataError::Parse(e.to_string()))
    }
}

/// Graph description file: `{nodes: [{id, kind, dim}], edges: [[src, dst]],
/// label}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<crate::graph::NodeSpec>,
    pub edges: Vec<(VarId, VarId)>,
    pub label: VarId,
}

pub fn load_graph(path: &Path) -> Result<CausalGraph, DataError> {
    let text = std::fs::read_to_string(path)?;
    let gf: GraphFile = serde_json::from_str(&text).map_err(|e| DataError::Parse(e.to_string()))?;
    Ok(CausalGraph::build(gf.nodes, gf.edges, &gf.label)?)
}

pub fn save_graph(graph: &CausalGraph, path: &Path) -> Result<(), DataError> {
    let gf = GraphFile {
        nodes: graph.nodes().to_vec(),
        edges: graph.edges().to_vec(),
        label: graph.label().clone(),
    };
    let text = serde_json::to_string_pretty(&gf).map_err(|e| DataError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Uniformly random disjoint partitions with the labelled split constrained
/// to contain both classes (bounded reshuffles).
pub fn make_trial_partitions(
    labels: &[usize],
    sizes: &RealSizes,
    trial_seed: u64,
) -> Result<Partitions, DataError> {
    let need = sizes.l + sizes.u + sizes.v + sizes.t.unwrap_or(0);
    if labels.len() < need {
        return Err(DataError::InsufficientRows { need, have: labels.len() });
    }
    let mut rng = seed::rng(trial_seed, "real-partition", 0);
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..100 {
        idx.shuffle(&mut rng);
        let lab = &idx[..sizes.l];
        let first = labels[lab[0]];
        if lab.iter().any(|&i| labels[i] != first) {
            let mut cursor = sizes.l;
            let take = |count: usize, cursor: &mut usize| {
                let s = idx[*cursor..*cursor + count].to_vec();
                *cursor += count;
                s
            };
            return Ok(Partitions {
                labelled: idx[..sizes.l].to_vec(),
                unlabelled: take(sizes.u, &mut cursor),
                validation: take(sizes.v, &mut cursor),
                test: take(sizes.t.unwrap_or(0), &mut cursor),
            });
        }
    }
    Err(DataError::ClassCoverageFailure)
}

/// Merge the root feature factors that sit in the Markov blanket (causes
/// and spouses) into a single jointly generated scenario-C block. Factors
/// downstream keep their original conditioning variables; the merged block
/// emits every member at sampling time.
pub fn group_joint_roots(graph: &CausalGraph, plan: &FactorPlan) -> FactorPlan {
    let roles = graph.assign_roles();
    let mergeable: Vec<VarId> = plan
        .entries
        .iter()
        .filter(|e| {
            e.scenario == Scenario::C
                && e.targets.len() == 1
                && matches!(roles.get(&e.targets[0]), Some(Role::Cause) | Some(Role::Spouse))
        })
        .map(|e| e.targets[0].clone())
        .collect();
    if mergeable.len() < 2 {
        return plan.clone();
    }
    let mut merged_targets = mergeable.clone();
    merged_targets.sort();
    let merged =
        FactorEntry {
            targets: merged_targets,
            parents: Vec::new(),
            scenario: Scenario::C,
            merged: Vec::new(),
        };
    let mut inserted = false;
    let entries = plan
        .entries
        .iter()
        .filter_map(|e| {
            if e.scenario == Scenario::C && e.targets.len() == 1 && mergeable.contains(&e.targets[0])
            {
                if inserted {
                    None
                } else {
                    inserted = true;
                    Some(merged.clone())
                }
            } else {
                Some(e.clone())
            }
        })
        .collect();
    FactorPlan { entries, ..plan.clone() }
}

/// Build the per-trial dataset for a real source: binarized labels, fresh
/// partitions, and features standardized with labelled + unlabelled
/// statistics.
pub fn real_trial_dataset(
    source: &TabularSource,
    protocol: &RealProtocol,
    graph: &CausalGraph,
    trial_seed: u64,
) -> Result<Dataset, DataError> {
    let labels = match protocol.binarize {
        Binarize::Median => binarize_median(source, &protocol.label)?,
        Binarize::None => source
            .column(&protocol.label)?
            .iter()
            .map(|&v| usize::from(v > 0.5))
            .collect(),
    };
    let partitions = make_trial_partitions(&labels, &protocol.sizes, trial_seed)?;
    let mut variables = BTreeMap::new();
    for node in graph.nodes() {
        if node.id == *graph.label() {
            continue;
        }
        let col = source.column(&node.id)?;
        let m = Array2::from_shape_vec((col.len(), 1), col)
            .map_err(|e| DataError::Parse(e.to_string()))?;
        variables.insert(node.id.clone(), m);
    }
    let mut ds = Dataset { variables, labels, partitions };
    standardize(&mut ds);
    Ok(ds)
}

/// Zero-mean unit-variance transform per feature column, statistics from
/// the labelled and unlabelled rows.
pub fn standardize(ds: &mut Dataset) {
    let fit_rows: Vec<usize> = ds
        .partitions
        .labelled
        .iter()
        .chain(&ds.partitions.unlabelled)
        .cloned()
        .collect();
    for m in ds.variables.values_mut() {
        for col in 0..m.ncols() {
            let stats: Vec<f64> = fit_rows.iter().map(|&i| m[[i, col]]).collect();
            let n = stats.len() as f64;
            let mean = stats.iter().sum::<f64>() / n;
            let var = stats.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt().max(1e-12);
            let mut column = m.column_mut(col);
            column.mapv_inplace(|v| (v - mean) / sd);
        }
    }
}

const PARTITION_COLUMN: &str = "partition";

fn feature_columns(graph: &CausalGraph) -> Vec<(VarId, usize, String)> {
    let mut out = Vec::new();
    for node in graph.nodes() {
        if node.id == *graph.label() {
            continue;
        }
        for d in 0..node.dim {
            let name = if node.dim == 1 {
                node.id.clone()
            } else {
                format!("{}_{}", node.id, d + 1)
            };
            out.push((node.id.clone(), d, name));
        }
    }
    out.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    out
}

/// Write one instance in the dataset CSV format.
pub fn write_instance_csv<W: Write>(
    ds: &Dataset,
    graph: &CausalGraph,
    writer: W,
) -> Result<(), DataError> {
    let cols = feature_columns(graph);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = cols.iter().map(|(_, _, name)| name.clone()).collect();
    header.push(graph.label().clone());
    header.push(PARTITION_COLUMN.to_string());
    w.write_record(&header).map_err(|e| DataError::Parse(e.to_string()))?;
    let mut marks = vec![""; ds.n_rows()];
    for &i in &ds.partitions.labelled {
        marks[i] = "l";
    }
    for &i in &ds.partitions.unlabelled {
        marks[i] = "u";
    }
    for &i in &ds.partitions.validation {
        marks[i] = "v";
    }
    for &i in &ds.partitions.test {
        marks[i] = "t";
    }
    for row in 0..ds.n_rows() {
        let mut record: Vec<String> = cols
            .iter()
            .map(|(var, d, _)| format!("{}", ds.variables[var][[row, *d]]))
            .collect();
        record.push(format!("{}", ds.labels[row]));
        record.push(marks[row].to_string());
        w.write_record(&record).map_err(|e| DataError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read an instance written by [`write_instance_csv`].
pub fn read_instance_csv<R: Read>(graph: &CausalGraph, reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cols = feature_columns(graph);
    let col_pos: Vec<usize> = cols
        .iter()
        .map(|(_, _, name)| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let label_pos = header
        .iter()
        .position(|h| h == graph.label())
        .ok_or_else(|| DataError::MissingColumn(graph.label().clone()))?;
    let part_pos = header
        .iter()
        .position(|h| h == PARTITION_COLUMN)
        .ok_or_else(|| DataError::MissingColumn(PARTITION_COLUMN.to_string()))?;

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    let mut labels = Vec::new();
    let mut partitions = Partitions {
        labelled: Vec::new(),
        unlabelled: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse(e.to_string()))?;
        for (slot, &pos) in values.iter_mut().zip(&col_pos) {
            let cell = record
                .get(pos)
                .ok_or_else(|| DataError::Parse(format!("short row {row}")))?;
            slot.push(cell.parse().map_err(|_| DataError::Parse(format!("row {row}: {cell}")))?);
        }
        let y: usize = record
            .get(label_pos)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| DataError::Parse(format!("bad label in row {row}")))?;
        labels.push(y);
        match record.get(part_pos) {
            Some("l") => partitions.labelled.push(row),
            Some("u") => partitions.unlabelled.push(row),
            Some("v") => partitions.validation.push(row),
            Some("t") => partitions.test.push(row),
            other => {
                return Err(DataError::Parse(format!(
                    "bad partition mark {other:?} in row {row}"
                )))
            }
        }
    }
    let n = labels.len();
    let mut variables = BTreeMap::new();
    for node in graph.nodes() {
        if node.id == *graph.label() {
            continue;
        }
        let mut m = Array2::zeros((n, node.dim));
        for (ci, (var, d, _)) in cols.iter().enumerate() {
            if var == &node.id {
                for (row, v) in values[ci].iter().enumerate() {
                    m[[row, *d]] = *v;
                }
            }
        }
        variables.insert(node.id.clone(), m);
    }
    Ok(Dataset { variables, labels, partitions })
}
