//! Semi-supervised classification under general causal models.
//!
//! The library factorizes a declared causal DAG over features and a label
//! into per-variable conditional factors, fits a structural generative model
//! to each factor (maximum mean discrepancy objectives let the feature
//! models learn from unlabelled rows), ancestor-samples a synthetic labelled
//! dataset from the fitted models, and trains an augmented classifier that
//! is benchmarked against labelled-only and fully-supervised baselines.
//!
//! Module map:
//! - [`graph`]: causal DAGs, Markov blankets, factor plans (scenarios A-F)
//! - [`diff`]: minimal reverse-mode autodiff, MLPs, adaptive-moment optimizer
//! - [`kernels`]: RBF mixture kernels, median-heuristic bandwidth, MMD²
//! - [`scm`]: per-scenario structural model fitting and sampling
//! - [`synth`]: the CG1-CG7 synthetic benchmark processes
//! - [`data`]: tabular ingestion and the real-data trial protocol
//! - [`pipeline`]: ancestor sampling, classifier training, method runs
//! - [`report`]: result rows (JSONL) and summary statistics

pub mod data;
pub mod diff;
pub mod graph;
pub mod kernels;
pub mod pipeline;
pub mod report;
pub mod scm;
pub mod seed;
pub mod synth;

pub use graph::{CausalGraph, FactorEntry, FactorPlan, PlanMode, Role, Scenario, VarKind};
pub use pipeline::{MethodId, TrialResult};
pub use report::SummaryRow;
