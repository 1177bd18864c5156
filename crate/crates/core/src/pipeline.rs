//! Full method runs: fit every factor of a plan, ancestor-sample a synthetic
//! labelled set, train the augmented classifier, and report accuracy deltas
//! against the labelled-only baseline.
//!
//! Methods:
//! - `P-SUP`: classifier trained on the labelled partition only
//! - `F-SUP`: upper bound; the unlabelled rows join with their true labels
//! - `CGAN-SSL`: disjoint plan (scenarios A-E), generated data augmentation
//! - `GCGAN-SSL`: joint plan with the Gumbel-trained F factor
//! - `ENT-MIN`: entropy regularization over unlabelled predictions
//!
//! Classifier inputs are restricted to the Markov-blanket features in
//! lexicographic order. Training is two-phase (labelled pre-training, then
//! the generated-augmented set) with early stopping once validation
//! accuracy stops increasing for `patience` epochs; the best-validation
//! parameters are retained.

use crate::diff::{
    layer_grads, mlp_forward_var, one_hot, opt_step, DiffError, MlpParams, OptState, Tape,
};
use crate::graph::{CausalGraph, FactorPlan, Scenario, VarId};
use crate::kernels::KernelError;
use crate::scm::{
    argmax, fit_a, fit_b, fit_c, fit_d, fit_e, fit_f, EData, FData, FEffectData,
    LabelClassifierModel, ScmConfig, ScmError, ScmModel,
};
use crate::seed;
use crate::synth::{Dataset, Partitions};
use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("joint mode unavailable: the graph has no (B, E) factor pair")]
    JointModeUnavailable,
    #[error("no fitted model for factor targeting `{0}`")]
    MissingModel(String),
    #[error("labelled partition contains a single class")]
    SingleClassSample,
    #[error("empty partition")]
    EmptyPartition,
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodId {
    PSup,
    FSup,
    CganSsl,
    GcganSsl,
    EntMin,
}

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::PSup,
        MethodId::FSup,
        MethodId::CganSsl,
        MethodId::GcganSsl,
        MethodId::EntMin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodId::PSup => "p-sup",
            MethodId::FSup => "f-sup",
            MethodId::CganSsl => "cgan-ssl",
            MethodId::GcganSsl => "gcgan-ssl",
            MethodId::EntMin => "ent-min",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        MethodId::ALL
            .iter()
            .find(|m| m.name() == norm)
            .copied()
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Hyperparameters of one full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scm_max_epochs: usize,
    pub scm_batch: usize,
    pub scm_lr: f64,
    pub scm_hidden: usize,
    pub tau: f64,
    pub unlabelled_weight: f64,
    pub cls_max_epochs: usize,
    pub cls_batch: usize,
    pub cls_lr: f64,
    pub cls_hidden: usize,
    pub patience: usize,
    pub entmin_lambda: f64,
    /// Generated-set size; defaults to the unlabelled partition size.
    pub generated_size: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scm_max_epochs: 200,
            scm_batch: 64,
            scm_lr: 1e-3,
            scm_hidden: 50,
            tau: 1.0,
            unlabelled_weight: 1.0,
            cls_max_epochs: 300,
            cls_batch: 64,
            cls_lr: 1e-3,
            cls_hidden: 100,
            patience: 10,
            entmin_lambda: 0.1,
            generated_size: None,
        }
    }
}

impl PipelineConfig {
    fn scm_config(&self, seed: u64) -> ScmConfig {
        ScmConfig {
            max_epochs: self.scm_max_epochs,
            batch_size: self.scm_batch,
            lr: self.scm_lr,
            hidden: self.scm_hidden,
            tau: self.tau,
            unlabelled_weight: self.unlabelled_weight,
            seed,
        }
    }
}

/// One method's accuracy on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub dataset: String,
    pub method: String,
    pub trial: u64,
    pub seed: u64,
    pub acc_unlabelled: Option<f64>,
    pub acc_test: Option<f64>,
    pub delta_unlabelled: Option<f64>,
    pub delta_test: Option<f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    pub fn key(&self) -> (String, String, u64) {
        (self.dataset.clone(), self.method.clone(), self.trial)
    }
}

fn feature_parents(graph: &CausalGraph, var: &str) -> Vec<VarId> {
    graph.parents(var).into_iter().filter(|p| p != graph.label()).collect()
}

/// Fit a structural model for every entry of `plan`.
pub fn fit_plan(
    ds: &Dataset,
    graph: &CausalGraph,
    plan: &FactorPlan,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<ScmModel>, PipelineError> {
    let classes = graph.dim(graph.label());
    let lab = &ds.partitions.labelled;
    let unlab = &ds.partitions.unlabelled;
    let pooled: Vec<usize> = lab.iter().chain(unlab.iter()).cloned().collect();
    let mut models = Vec::with_capacity(plan.entries.len());
    for (i, entry) in plan.entries.iter().enumerate() {
        let scm_cfg = cfg.scm_config(seed::derive(seed, "fit-entry", i as u64));
        let model = match entry.scenario {
            Scenario::A => ScmModel::Categorical(fit_a(&ds.labels_at(lab), classes)?),
            Scenario::B => {
                let x = ds.stacked_rows(&entry.parents, lab);
                let (m, _) = fit_b(&x, &ds.labels_at(lab), classes, &scm_cfg)?;
                ScmModel::Classifier(m)
            }
            Scenario::C => {
                let x = ds.stacked_rows(&entry.targets, &pooled);
                let (m, _) = fit_c(&x, &scm_cfg)?;
                ScmModel::Generator(m)
            }
            Scenario::D => {
                let x = ds.stacked_rows(&entry.targets, &pooled);
                let cond = ds.stacked_rows(&entry.parents, &pooled);
                let (m, _) = fit_d(&x, &cond, &scm_cfg)?;
                ScmModel::Generator(m)
            }
            Scenario::E => {
                let target = &entry.targets[0];
                let cond_vars = feature_parents(graph, target);
                let data = EData {
                    lab_x: ds.rows(target, lab),
                    lab_y: ds.labels_at(lab),
                    lab_cond: ds.stacked_rows(&cond_vars, lab),
                    unlab_x: ds.rows(target, unlab),
                    unlab_cond: ds.stacked_rows(&cond_vars, unlab),
                    classes,
                };
                let (m, _) = fit_e(&data, &scm_cfg)?;
                ScmModel::Generator(m)
            }
            Scenario::F => {
                let label = graph.label();
                let label_parents = graph.parents(label);
                let mut effects = Vec::new();
                let mut f_inits = Vec::new();
                for (j, target) in entry.targets[1..].iter().enumerate() {
                    let cond_vars = feature_parents(graph, target);
                    let mut joint_vars: Vec<VarId> = label_parents.clone();
                    for v in &cond_vars {
                        if !joint_vars.contains(v) {
                            joint_vars.push(v.clone());
                        }
                    }
                    joint_vars.sort();
                    let d = graph.dim(target);
                    let p: usize = cond_vars.iter().map(|v| graph.dim(v)).sum();
                    f_inits.push(MlpParams::init(
                        &[d + classes + p, cfg.scm_hidden, cfg.scm_hidden, d],
                        seed::derive(scm_cfg.seed, "scm-init", 1 + j as u64),
                    )?);
                    effects.push(FEffectData {
                        lab_x: ds.rows(target, lab),
                        lab_cond: ds.stacked_rows(&cond_vars, lab),
                        unlab_x: ds.rows(target, unlab),
                        unlab_cond: ds.stacked_rows(&cond_vars, unlab),
                        lab_joint: ds.stacked_rows(&joint_vars, lab),
                        unlab_joint: ds.stacked_rows(&joint_vars, unlab),
                    });
                }
                let c: usize = label_parents.iter().map(|v| graph.dim(v)).sum();
                let g_init = MlpParams::init(
                    &[c, cfg.scm_hidden, cfg.scm_hidden, classes],
                    seed::derive(scm_cfg.seed, "scm-init", 0),
                )?;
                let data = FData {
                    label_parents_lab: ds.stacked_rows(&label_parents, lab),
                    lab_y: ds.labels_at(lab),
                    label_parents_unlab: ds.stacked_rows(&label_parents, unlab),
                    effects,
                    classes,
                };
                let (m, _) = fit_f(&data, g_init, f_inits, &scm_cfg)?;
                ScmModel::JointF(m)
            }
        };
        models.push(model);
    }
    Ok(models)
}

/// Ancestor-sample `n` complete rows from the fitted plan. Variables are
/// visited in the graph's topological order, so the draw sequence does not
/// depend on the order of the plan entries.
pub fn ancestor_sample(
    graph: &CausalGraph,
    plan: &FactorPlan,
    models: &[ScmModel],
    n: usize,
    sample_seed: u64,
) -> Result<Dataset, PipelineError> {
    let mut rng = seed::rng(sample_seed, "ancestor", 0);
    let mut variables: BTreeMap<VarId, Array2<f64>> = BTreeMap::new();
    let mut labels: Vec<usize> = Vec::new();
    let label_id = graph.label();

    let stacked = |variables: &BTreeMap<VarId, Array2<f64>>,
                   labels: &[usize],
                   vars: &[VarId]|
     -> Array2<f64> {
        let blocks: Vec<Array2<f64>> = vars
            .iter()
            .map(|v| {
                if v == label_id {
                    one_hot(labels, graph.dim(label_id))
                } else {
                    variables[v].clone()
                }
            })
            .collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        if views.is_empty() {
            Array2::zeros((n, 0))
        } else {
            ndarray::concatenate(Axis(1), &views).expect("row counts align")
        }
    };

    for var in &plan.order {
        if variables.contains_key(var) || (var == label_id && !labels.is_empty()) {
            continue;
        }
        let (entry_idx, entry) = plan
            .entries
            .iter()
            .enumerate()
            .find(|(_, e)| e.targets.contains(var))
            .ok_or_else(|| PipelineError::MissingModel(var.clone()))?;
        let model = models.get(entry_idx).ok_or_else(|| PipelineError::MissingModel(var.clone()))?;
        match (entry.scenario, model) {
            (Scenario::A, ScmModel::Categorical(m)) => {
                labels = m.sample(n, &mut rng);
            }
            (Scenario::B, ScmModel::Classifier(m)) => {
                let parents = stacked(&variables, &labels, &entry.parents);
                labels = m.sample(&parents, &mut rng)?;
            }
            (Scenario::C, ScmModel::Generator(m)) => {
                let block = m.generate(n, None, None, &mut rng)?;
                // Merged root entries emit every member; split by dims.
                let mut offset = 0;
                for t in &entry.targets {
                    let d = graph.dim(t);
                    let cols = block.slice(ndarray::s![.., offset..offset + d]).to_owned();
                    variables.insert(t.clone(), cols);
                    offset += d;
                }
            }
            (Scenario::D, ScmModel::Generator(m)) => {
                let parents = stacked(&variables, &labels, &entry.parents);
                let block = m.generate(n, None, Some(&parents), &mut rng)?;
                variables.insert(var.clone(), block);
            }
            (Scenario::E, ScmModel::Generator(m)) => {
                let cond_vars = feature_parents(graph, var);
                let parents = stacked(&variables, &labels, &cond_vars);
                let parents = (parents.ncols() > 0).then_some(parents);
                let block = m.generate(n, Some(&labels), parents.as_ref(), &mut rng)?;
                variables.insert(var.clone(), block);
            }
            (Scenario::F, ScmModel::JointF(m)) => {
                if var == label_id {
                    let parents = stacked(&variables, &labels, &graph.parents(label_id));
                    labels = m.label_model.sample(&parents, &mut rng)?;
                } else {
                    let pos = entry.targets[1..]
                        .iter()
                        .position(|t| t == var)
                        .ok_or_else(|| PipelineError::MissingModel(var.clone()))?;
                    let cond_vars = feature_parents(graph, var);
                    let parents = stacked(&variables, &labels, &cond_vars);
                    let parents = (parents.ncols() > 0).then_some(parents);
                    let block =
                        m.effects[pos].generate(n, Some(&labels), parents.as_ref(), &mut rng)?;
                    variables.insert(var.clone(), block);
                }
            }
            _ => return Err(PipelineError::MissingModel(var.clone())),
        }
    }
    Ok(Dataset {
        variables,
        labels,
        partitions: Partitions {
            labelled: Vec::new(),
            unlabelled: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        },
    })
}

/// Fraction of argmax predictions equal to the true labels.
pub fn evaluate(
    classifier: &LabelClassifierModel,
    features: &Array2<f64>,
    labels: &[usize],
) -> Result<f64, PipelineError> {
    if labels.is_empty() {
        return Err(PipelineError::EmptyPartition);
    }
    Ok(classifier.accuracy(features, labels)?)
}

/// Per-epoch validation accuracies of a classifier fit.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub phase1_val: Vec<f64>,
    pub phase2_val: Vec<f64>,
}

struct Phase<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
}

fn val_accuracy(net: &MlpParams, x: &Array2<f64>, y: &[usize]) -> Result<f64, PipelineError> {
    let logits = net.forward(x)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &t)| argmax(row.as_slice().unwrap()) == t)
        .count();
    Ok(correct as f64 / y.len() as f64)
}

fn train_phase(
    mut net: MlpParams,
    phase: Phase<'_>,
    val_x: &Array2<f64>,
    val_y: &[usize],
    classes: usize,
    cfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
    entropy_x: Option<(&Array2<f64>, f64)>,
    val_trace: &mut Vec<f64>,
) -> Result<(MlpParams, f64), PipelineError> {
    let mut opt = OptState::with_lr(&net, cfg.cls_lr);
    let targets = one_hot(phase.y, classes);
    let mut best_net = net.clone();
    let mut best_acc = val_accuracy(&net, val_x, val_y)?;
    let mut stale = 0usize;
    for _ in 0..cfg.cls_max_epochs {
        let n = phase.y.len();
        let batches: Vec<Vec<usize>> = if n <= cfg.cls_batch {
            vec![(0..n).collect()]
        } else {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.chunks(cfg.cls_batch).map(|c| c.to_vec()).collect()
        };
        // With an entropy term, each supervised batch is paired with one
        // unlabelled batch drawn round-robin from a per-epoch shuffle.
        let entropy_batches: Vec<Vec<usize>> = match entropy_x {
            Some((ex, _)) if ex.nrows() > 0 => {
                use rand::seq::SliceRandom;
                let mut idx: Vec<usize> = (0..ex.nrows()).collect();
                idx.shuffle(rng);
                idx.chunks(cfg.cls_batch).map(|c| c.to_vec()).collect()
            }
            _ => Vec::new(),
        };
        for (bi, idx) in batches.iter().enumerate() {
            let xb = phase.x.select(Axis(0), idx);
            let tb = targets.select(Axis(0), idx);
            let mut tape = Tape::new();
            let vars = net.insert(&mut tape);
            let input = tape.constant(xb);
            let logits = mlp_forward_var(&mut tape, &vars, input);
            let ce = tape.softmax_cross_entropy(logits, tb);
            let loss = match (&entropy_x, entropy_batches.is_empty()) {
                (Some((ex, lambda)), false) => {
                    let uidx = &entropy_batches[bi % entropy_batches.len()];
                    let ux = ex.select(Axis(0), uidx);
                    let uvar = tape.constant(ux);
                    let ulogits = mlp_forward_var(&mut tape, &vars, uvar);
                    let h = tape.softmax_entropy(ulogits);
                    let hw = tape.scale(h, *lambda);
                    tape.add(ce, hw)
                }
                _ => ce,
            };
            let grads = tape.backward(loss)?;
            let g = layer_grads(&tape, &grads, &vars);
            opt_step(&mut net, &g, &mut opt)?;
        }
        let acc = val_accuracy(&net, val_x, val_y)?;
        val_trace.push(acc);
        if acc > best_acc {
            best_acc = acc;
            best_net = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best_net, best_acc))
}

/// Two-phase classifier fit: labelled pre-training, then (when a generated
/// set is supplied) continued training on generated plus labelled rows.
pub fn train_classifier(
    lab_x: &Array2<f64>,
    lab_y: &[usize],
    generated: Option<(&Array2<f64>, &[usize])>,
    val_x: &Array2<f64>,
    val_y: &[usize],
    classes: usize,
    cfg: &PipelineConfig,
    train_seed: u64,
) -> Result<(LabelClassifierModel, TrainHistory), PipelineError> {
    let first = lab_y.first().ok_or(PipelineError::EmptyPartition)?;
    if lab_y.iter().all(|y| y == first) {
        return Err(PipelineError::SingleClassSample);
    }
    let dims = [lab_x.ncols(), cfg.cls_hidden, cfg.cls_hidden, classes];
    let net = MlpParams::init(&dims, seed::derive(train_seed, "classifier-init", 0))?;
    let mut rng = seed::rng(train_seed, "classifier-train", 0);
    let mut history = TrainHistory::default();
    let (net, _) = train_phase(
        net,
        Phase { x: lab_x, y: lab_y },
        val_x,
        val_y,
        classes,
        cfg,
        &mut rng,
        None,
        &mut history.phase1_val,
    )?;
    let net = match generated {
        None => net,
        Some((gen_x, gen_y)) => {
            let x = ndarray::concatenate![Axis(0), gen_x.view(), lab_x.view()];
            let mut y = gen_y.to_vec();
            y.extend_from_slice(lab_y);
            let (net, _) = train_phase(
                net,
                Phase { x: &x, y: &y },
                val_x,
                val_y,
                classes,
                cfg,
                &mut rng,
                None,
                &mut history.phase2_val,
            )?;
            net
        }
    };
    Ok((LabelClassifierModel { net, classes }, history))
}

/// Entropy-minimization baseline: labelled cross entropy plus
/// `lambda * mean prediction entropy` over unlabelled rows, single phase.
/// `lambda = 0` reduces to the labelled-only trajectory exactly.
pub fn train_entmin(
    lab_x: &Array2<f64>,
    lab_y: &[usize],
    unlab_x: &Array2<f64>,
    val_x: &Array2<f64>,
    val_y: &[usize],
    classes: usize,
    cfg: &PipelineConfig,
    train_seed: u64,
) -> Result<(LabelClassifierModel, TrainHistory), PipelineError> {
    let first = lab_y.first().ok_or(PipelineError::EmptyPartition)?;
    if lab_y.iter().all(|y| y == first) {
        return Err(PipelineError::SingleClassSample);
    }
    let dims = [lab_x.ncols(), cfg.cls_hidden, cfg.cls_hidden, classes];
    let net = MlpParams::init(&dims, seed::derive(train_seed, "classifier-init", 0))?;
    let mut rng = seed::rng(train_seed, "classifier-train", 0);
    let mut history = TrainHistory::default();
    let entropy = (cfg.entmin_lambda > 0.0).then_some((unlab_x, cfg.entmin_lambda));
    let (net, _) = train_phase(
        net,
        Phase { x: lab_x, y: lab_y },
        val_x,
        val_y,
        classes,
        cfg,
        &mut rng,
        entropy,
        &mut history.phase1_val,
    )?;
    Ok((LabelClassifierModel { net, classes }, history))
}

/// Feature views of one dataset restricted to the Markov blanket.
pub struct TrialViews {
    pub blanket: Vec<VarId>,
    pub lab_x: Array2<f64>,
    pub lab_y: Vec<usize>,
    pub unlab_x: Array2<f64>,
    pub unlab_y: Vec<usize>,
    pub val_x: Array2<f64>,
    pub val_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
}

impl TrialViews {
    pub fn new(ds: &Dataset, graph: &CausalGraph) -> Self {
        let blanket = graph.blanket_features();
        let p = &ds.partitions;
        TrialViews {
            lab_x: ds.stacked_rows(&blanket, &p.labelled),
            lab_y: ds.labels_at(&p.labelled),
            unlab_x: ds.stacked_rows(&blanket, &p.unlabelled),
            unlab_y: ds.labels_at(&p.unlabelled),
            val_x: ds.stacked_rows(&blanket, &p.validation),
            val_y: ds.labels_at(&p.validation),
            test_x: ds.stacked_rows(&blanket, &p.test),
            test_y: ds.labels_at(&p.test),
            blanket,
        }
    }
}

fn classifier_accuracies(
    model: &LabelClassifierModel,
    views: &TrialViews,
) -> Result<(f64, Option<f64>), PipelineError> {
    let acc_u = evaluate(model, &views.unlab_x, &views.unlab_y)?;
    let acc_t = if views.test_y.is_empty() {
        None
    } else {
        Some(evaluate(model, &views.test_x, &views.test_y)?)
    };
    Ok((acc_u, acc_t))
}

/// Execute one method on one prepared trial. The seed must be unique per
/// (dataset, trial); method-specific streams are derived from it.
pub fn run_method(
    method: MethodId,
    ds: &Dataset,
    graph: &CausalGraph,
    views: &TrialViews,
    trial_seed: u64,
    cfg: &PipelineConfig,
) -> Result<(f64, Option<f64>), PipelineError> {
    let classes = graph.dim(graph.label());
    let method_seed = seed::derive(trial_seed, method.name(), 0);
    match method {
        MethodId::PSup => {
            let (model, _) = train_classifier(
                &views.lab_x,
                &views.lab_y,
                None,
                &views.val_x,
                &views.val_y,
                classes,
                cfg,
                method_seed,
            )?;
            classifier_accuracies(&model, views)
        }
        MethodId::FSup => {
            let (model, _) = train_classifier(
                &views.lab_x,
                &views.lab_y,
                Some((&views.unlab_x, &views.unlab_y)),
                &views.val_x,
                &views.val_y,
                classes,
                cfg,
                method_seed,
            )?;
            classifier_accuracies(&model, views)
        }
        MethodId::EntMin => {
            let (model, _) = train_entmin(
                &views.lab_x,
                &views.lab_y,
                &views.unlab_x,
                &views.val_x,
                &views.val_y,
                classes,
                cfg,
                method_seed,
            )?;
            classifier_accuracies(&model, views)
        }
        MethodId::CganSsl | MethodId::GcganSsl => {
            let plan = match method {
                MethodId::CganSsl => graph.classify_disjoint(),
                _ => {
                    let plan = graph.classify_joint();
                    if plan.equals_disjoint {
                        return Err(PipelineError::JointModeUnavailable);
                    }
                    plan
                }
            };
            let models = fit_plan(ds, graph, &plan, seed::derive(method_seed, "fit", 0), cfg)?;
            let n = cfg.generated_size.unwrap_or(ds.partitions.unlabelled.len());
            let generated = ancestor_sample(
                graph,
                &plan,
                &models,
                n,
                seed::derive(method_seed, "sample", 0),
            )?;
            let all: Vec<usize> = (0..generated.n_rows()).collect();
            let gen_x = generated.stacked_rows(&views.blanket, &all);
            let (model, _) = train_classifier(
                &views.lab_x,
                &views.lab_y,
                Some((&gen_x, &generated.labels)),
                &views.val_x,
                &views.val_y,
                classes,
                cfg,
                method_seed,
            )?;
            classifier_accuracies(&model, views)
        }
    }
}

/// All requested methods on one prepared dataset instance. The labelled-only
/// baseline is always computed (deltas are relative to it) but its row is
/// emitted only when requested.
pub fn run_trial(
    dataset_id: &str,
    ds: &Dataset,
    graph: &CausalGraph,
    trial: u64,
    methods: &[MethodId],
    master_seed: u64,
    cfg: &PipelineConfig,
) -> Vec<TrialResult> {
    let trial_seed = seed::derive(master_seed, dataset_id, trial);
    let views = TrialViews::new(ds, graph);
    let mut rows = Vec::new();

    let psup_start = Instant::now();
    let psup = run_method(MethodId::PSup, ds, graph, &views, trial_seed, cfg);
    let psup_seconds = psup_start.elapsed().as_secs_f64();
    let (psup_acc_u, psup_acc_t) = match &psup {
        Ok(acc) => (Some(acc.0), acc.1),
        Err(_) => (None, None),
    };

    for &method in methods {
        let start = Instant::now();
        let outcome = if method == MethodId::PSup {
            psup.as_ref().map(|v| *v).map_err(|e| e.to_string())
        } else {
            run_method(method, ds, graph, &views, trial_seed, cfg).map_err(|e| e.to_string())
        };
        let seconds = if method == MethodId::PSup {
            psup_seconds
        } else {
            start.elapsed().as_secs_f64()
        };
        let row = match outcome {
            Ok((acc_u, acc_t)) => TrialResult {
                dataset: dataset_id.to_string(),
                method: method.name().to_string(),
                trial,
                seed: trial_seed,
                acc_unlabelled: Some(acc_u),
                acc_test: acc_t,
                delta_unlabelled: psup_acc_u.map(|p| (acc_u - p) * 100.0),
                delta_test: match (acc_t, psup_acc_t) {
                    (Some(a), Some(p)) => Some((a - p) * 100.0),
                    _ => None,
                },
                seconds,
                error: None,
            },
            Err(e) => TrialResult {
                dataset: dataset_id.to_string(),
                method: method.name().to_string(),
                trial,
                seed: trial_seed,
                acc_unlabelled: None,
                acc_test: None,
                delta_unlabelled: None,
                delta_test: None,
                seconds,
                error: Some(e),
            },
        };
        rows.push(row);
    }
    rows
}
