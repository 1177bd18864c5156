//! The CG1-CG7 synthetic benchmark processes.
//!
//! Each graph id fixes a DAG over `X_C`, `X_S`, `X_E`, `Y` (features are
//! two-dimensional, the label is binary) and a generative mechanism:
//! root features are anisotropic Gaussians, map-labelled graphs draw `Y`
//! from a sigmoid of a random quadratic feature map centred at its sample
//! mean, and effect features come from a shared template mechanism with a
//! class-1 offset in the second coordinate. Instances whose class rate
//! falls outside the balance window are discarded and redrawn with fresh
//! parameters.

use crate::graph::{CausalGraph, NodeSpec, VarId};
use crate::seed;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("class balance rejection budget exhausted after {0} attempts")]
    BalanceRejectionExhausted(usize),
    #[error("unknown graph id `{0}`")]
    UnknownGraph(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphId {
    Cg1,
    Cg2,
    Cg3,
    Cg4,
    Cg5,
    Cg6,
    Cg7,
}

impl GraphId {
    pub const ALL: [GraphId; 7] = [
        GraphId::Cg1,
        GraphId::Cg2,
        GraphId::Cg3,
        GraphId::Cg4,
        GraphId::Cg5,
        GraphId::Cg6,
        GraphId::Cg7,
    ];

    fn index(self) -> usize {
        GraphId::ALL.iter().position(|g| *g == self).unwrap() + 1
    }
}

impl fmt::Display for GraphId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CG{}", self.index())
    }
}

impl FromStr for GraphId {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase();
        GraphId::ALL
            .iter()
            .find(|g| format!("CG{}", g.index()) == up)
            .copied()
            .ok_or_else(|| SynthError::UnknownGraph(s.to_string()))
    }
}

/// The DAG for one benchmark graph id.
pub fn cg_graph(id: GraphId) -> CausalGraph {
    let feature = |id: &str| NodeSpec::feature(id, 2);
    let label = NodeSpec::label("Y", 2);
    let (nodes, edges): (Vec<NodeSpec>, Vec<(&str, &str)>) = match id {
        GraphId::Cg1 => (vec![feature("X_C"), label], vec![("X_C", "Y")]),
        GraphId::Cg2 => (vec![feature("X_E"), label], vec![("Y", "X_E")]),
        GraphId::Cg3 => (
            vec![feature("X_C"), feature("X_E"), label],
            vec![("X_C", "Y"), ("Y", "X_E")],
        ),
        GraphId::Cg4 => (
            vec![feature("X_E"), feature("X_S"), label],
            vec![("Y", "X_E"), ("X_S", "X_E")],
        ),
        GraphId::Cg5 => (
            vec![feature("X_C"), feature("X_E"), label],
            vec![("X_C", "Y"), ("Y", "X_E"), ("X_C", "X_E")],
        ),
        GraphId::Cg6 => (
            vec![feature("X_C"), feature("X_E"), feature("X_S"), label],
            vec![("X_C", "Y"), ("Y", "X_E"), ("X_C", "X_E"), ("X_S", "X_E")],
        ),
        GraphId::Cg7 => (
            vec![feature("X_C"), feature("X_E"), feature("X_S"), label],
            vec![("X_C", "Y"), ("Y", "X_E"), ("X_S", "X_E")],
        ),
    };
    let edges = edges.iter().map(|(s, t)| (s.to_string(), t.to_string())).collect();
    CausalGraph::build(nodes, edges, "Y").expect("benchmark graphs are valid")
}

/// Quadratic feature map coefficients; `f` is fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

/// a x1^2 + b x2^2 + c x1 + d x2 + e x1 x2 + f.
pub fn quad_map(x: [f64; 2], c: &QuadCoeffs) -> f64 {
    c.a * x[0] * x[0] + c.b * x[1] * x[1] + c.c * x[0] + c.d * x[1] + c.e * x[0] * x[1] + c.f
}

/// Sigmoid centred at `mu`.
pub fn sigmoid_prob(phi: f64, mu: f64) -> f64 {
    1.0 / (1.0 + (-(phi - mu)).exp())
}

/// Labels from the quadratic map: Bernoulli with success probability
/// sigmoid(phi(x) - mean(phi)) where the mean is taken over this batch.
pub fn label_from_map<R: Rng>(
    x: &Array2<f64>,
    coeffs: &QuadCoeffs,
    rng: &mut R,
) -> (Vec<usize>, f64) {
    let phis: Vec<f64> = x.rows().into_iter().map(|r| quad_map([r[0], r[1]], coeffs)).collect();
    let mu = phis.iter().sum::<f64>() / phis.len() as f64;
    let labels = phis
        .iter()
        .map(|&phi| usize::from(rng.random::<f64>() < sigmoid_prob(phi, mu)))
        .collect();
    (labels, mu)
}

/// Template effect mechanism: diag(w, 1/w) * n plus a cosine ridge in the
/// second coordinate, offset by `a_offset` for class 1.
pub fn template_mechanism(n: [f64; 2], y: usize, a_offset: f64, w: f64) -> [f64; 2] {
    let base = [w * n[0], n[1] / w + 4.0 * (n[1] / 2.0).cos()];
    if y == 1 {
        [base[0], base[1] + a_offset]
    } else {
        base
    }
}

/// Scale parameters and map coefficients drawn for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub s: f64,
    pub t: f64,
    pub w: f64,
    pub coeffs: QuadCoeffs,
}

impl SynthParams {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let s = rng.random_range(1.0..2.0);
        let t = rng.random_range(1.0..2.0);
        let w = rng.random_range(4.0..6.0);
        let coeffs = QuadCoeffs {
            a: rng.random_range(0.0..1.0),
            b: rng.random_range(0.0..1.0),
            c: rng.random_range(0.0..1.0),
            d: rng.random_range(0.0..1.0),
            e: rng.random_range(0.0..1.0),
            f: 0.0,
        };
        SynthParams { s, t, w, coeffs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub labelled: usize,
    pub unlabelled: usize,
    pub validation: usize,
    pub test: usize,
}

impl PartitionSizes {
    /// The benchmark protocol: 40 labelled, 40 validation, test mirroring
    /// the unlabelled size.
    pub fn protocol(unlabelled: usize) -> Self {
        PartitionSizes { labelled: 40, unlabelled, validation: 40, test: unlabelled }
    }

    pub fn total(&self) -> usize {
        self.labelled + self.unlabelled + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub graph: GraphId,
    pub seed: u64,
    pub sizes: PartitionSizes,
    pub balance_window: (f64, f64),
    pub max_retries: usize,
}

impl SynthConfig {
    pub fn new(graph: GraphId, seed: u64, unlabelled: usize) -> Self {
        SynthConfig {
            graph,
            seed,
            sizes: PartitionSizes::protocol(unlabelled),
            balance_window: (0.45, 0.55),
            max_retries: 1000,
        }
    }
}

/// Disjoint index sets into the instance rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partitions {
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// One dataset instance: per-variable value matrices, the label vector, and
/// partition index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub variables: BTreeMap<VarId, Array2<f64>>,
    pub labels: Vec<usize>,
    pub partitions: Partitions,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// Rows of one variable restricted to an index set.
    pub fn rows(&self, var: &str, idx: &[usize]) -> Array2<f64> {
        self.variables[var].select(ndarray::Axis(0), idx)
    }

    /// Horizontal concatenation of several variables over an index set.
    pub fn stacked_rows(&self, vars: &[VarId], idx: &[usize]) -> Array2<f64> {
        if vars.is_empty() {
            return Array2::zeros((idx.len(), 0));
        }
        let blocks: Vec<Array2<f64>> = vars.iter().map(|v| self.rows(v, idx)).collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts align")
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Reproducibility sidecar: drawn parameters and rejection count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub graph: String,
    pub seed: u64,
    pub rejected_attempts: usize,
    pub params: SynthParams,
    pub mu_phi: Option<f64>,
    pub sizes: PartitionSizes,
    pub class_rate: f64,
}

fn scaled_gaussian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Array2<f64> {
    // Covariance diag(scale, 1/scale).
    let normal = StandardNormal;
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let z1: f64 = normal.sample(rng);
        let z2: f64 = normal.sample(rng);
        row[0] = scale.sqrt() * z1;
        row[1] = z2 / scale.sqrt();
    }
    out
}

struct RawInstance {
    variables: BTreeMap<VarId, Array2<f64>>,
    labels: Vec<usize>,
    mu_phi: Option<f64>,
}

fn synthesize<R: Rng>(
    graph: GraphId,
    params: &SynthParams,
    n: usize,
    rng: &mut R,
) -> RawInstance {
    let normal = StandardNormal;
    let mut variables = BTreeMap::new();

    let has_xc = !matches!(graph, GraphId::Cg2 | GraphId::Cg4);
    let has_xs = matches!(graph, GraphId::Cg4 | GraphId::Cg6 | GraphId::Cg7);

    let xc = has_xc.then(|| scaled_gaussian(rng, n, params.s));
    let xs = has_xs.then(|| scaled_gaussian(rng, n, params.t));

    // Map-labelled graphs draw Y from the quadratic boundary over X_C;
    // the others use a fair coin.
    let (labels, mu_phi) = if let Some(xc) = &xc {
        let (l, mu) = label_from_map(xc, &params.coeffs, rng);
        (l, Some(mu))
    } else {
        ((0..n).map(|_| usize::from(rng.random::<f64>() < 0.5)).collect(), None)
    };

    // Effect mechanism: class offset per graph, additive parents per graph.
    let offset = |p: &SynthParams| match graph {
        GraphId::Cg1 => 0.0,
        GraphId::Cg2 | GraphId::Cg3 => p.w / 2.0,
        GraphId::Cg4 => p.t / 2.0 + p.w / 2.0,
        GraphId::Cg5 => p.s / 2.0 + p.w / 2.0,
        GraphId::Cg6 => p.s / 2.0 + p.t / 2.0 + p.w / 2.0,
        GraphId::Cg7 => p.t / 2.0 + p.w / 2.0,
    };
    if graph != GraphId::Cg1 {
        let a_offset = offset(params);
        let mut xe = Array2::zeros((n, 2));
        for (i, mut row) in xe.rows_mut().into_iter().enumerate() {
            let noise = [normal.sample(rng), normal.sample(rng)];
            let mut v = template_mechanism(noise, labels[i], a_offset, params.w);
            if matches!(graph, GraphId::Cg5 | GraphId::Cg6) {
                let xc = xc.as_ref().unwrap();
                v[0] += xc[[i, 0]];
                v[1] += xc[[i, 1]];
            }
            if matches!(graph, GraphId::Cg4 | GraphId::Cg6) {
                let xs = xs.as_ref().unwrap();
                v[0] += xs[[i, 0]];
                v[1] += xs[[i, 1]];
            }
            row[0] = v[0];
            row[1] = v[1];
        }
        variables.insert("X_E".to_string(), xe);
    }
    if let Some(xc) = xc {
        variables.insert("X_C".to_string(), xc);
    }
    if let Some(xs) = xs {
        variables.insert("X_S".to_string(), xs);
    }
    RawInstance { variables, labels, mu_phi }
}

/// Generate one instance with class-balance rejection and uniform-shuffle
/// partitioning.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, SynthSidecar), SynthError> {
    let n = config.sizes.total();
    let (lo, hi) = config.balance_window;
    for attempt in 0..config.max_retries {
        let mut rng = seed::rng(config.seed, "synth-attempt", attempt as u64);
        let params = SynthParams::draw(&mut rng);
        let raw = synthesize(config.graph, &params, n, &mut rng);
        let rate = raw.labels.iter().sum::<usize>() as f64 / n as f64;
        if !(lo..=hi).contains(&rate) {
            continue;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let take = |count: usize, cursor: &mut usize| {
            let slice = idx[*cursor..*cursor + count].to_vec();
            *cursor += count;
            slice
        };
        let mut cursor = 0;
        let partitions = Partitions {
            labelled: take(config.sizes.labelled, &mut cursor),
            unlabelled: take(config.sizes.unlabelled, &mut cursor),
            validation: take(config.sizes.validation, &mut cursor),
            test: take(config.sizes.test, &mut cursor),
        };
        let dataset =
            Dataset { variables: raw.variables, labels: raw.labels, partitions };
        let sidecar = SynthSidecar {
            graph: config.graph.to_string(),
            seed: config.seed,
            rejected_attempts: attempt,
            params,
            mu_phi: raw.mu_phi,
            sizes: config.sizes,
            class_rate: rate,
        };
        return Ok((dataset, sidecar));
    }
    Err(SynthError::BalanceRejectionExhausted(config.max_retries))
}
