//! Dense multilayer perceptrons: ReLU hidden layers, linear output.
//!
//! Softmax/sigmoid are applied by callers, so the same parameter struct
//! serves classifiers (logits out) and generators (features out).

use super::tape::{DiffError, Gradients, Tape, Var};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One affine layer: `w` is out x in, `b` is 1 x out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Tape handles for one insertion of the parameters.
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

/// Checkpoint schema: layer shapes plus row-major values.
#[derive(Debug, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub dims: Vec<usize>,
    /// Row-major weight matrices (out x in), one per layer.
    pub weights: Vec<Vec<f64>>,
    /// Bias vectors, one per layer.
    pub biases: Vec<Vec<f64>>,
}

const CHECKPOINT_FORMAT: &str = "cssl-mlp";
const CHECKPOINT_VERSION: u32 = 1;

impl MlpParams {
    /// He-style initialization: weights drawn from N(0, 2/fan_in),
    /// biases zero. Deterministic for a given seed.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, DiffError> {
        if dims.len() < 2 {
            return Err(DiffError::InvalidDims(format!("need >=2 dims, got {}", dims.len())));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(DiffError::InvalidDims("zero-size layer".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    let z: f64 = normal.sample(&mut rng);
                    z * scale
                });
                Layer { w, b: Array2::zeros((1, fan_out)) }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.ncols()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    /// Plain inference pass without a tape.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<Array2<f64>, DiffError> {
        if batch.ncols() != self.input_dim() {
            return Err(DiffError::ShapeMismatch(format!(
                "input has {} cols, net expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w.t()) + &layer.b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Insert parameters as gradient leaves on `tape`.
    pub fn insert(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.param(l.w.clone()), tape.param(l.b.clone())))
            .collect();
        MlpVars { layers }
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: self.dims(),
            weights: self.layers.iter().map(|l| l.w.iter().cloned().collect()).collect(),
            biases: self.layers.iter().map(|l| l.b.iter().cloned().collect()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self, DiffError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(DiffError::InvalidDims(format!(
                "unsupported checkpoint {}/{}",
                ck.format, ck.version
            )));
        }
        if ck.dims.len() < 2 || ck.weights.len() != ck.dims.len() - 1 {
            return Err(DiffError::InvalidDims("checkpoint dims/layers disagree".to_string()));
        }
        let layers = ck
            .dims
            .windows(2)
            .zip(ck.weights.iter().zip(&ck.biases))
            .map(|(pair, (w, b))| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let w = Array2::from_shape_vec((fan_out, fan_in), w.clone())
                    .map_err(|e| DiffError::InvalidDims(e.to_string()))?;
                let b = Array2::from_shape_vec((1, fan_out), b.clone())
                    .map_err(|e| DiffError::InvalidDims(e.to_string()))?;
                Ok(Layer { w, b })
            })
            .collect::<Result<_, DiffError>>()?;
        Ok(MlpParams { layers })
    }
}

/// Tape forward pass: ReLU on hidden layers, identity output.
pub fn mlp_forward_var(tape: &mut Tape, vars: &MlpVars, input: Var) -> Var {
    let last = vars.layers.len() - 1;
    let mut h = input;
    for (i, (w, b)) in vars.layers.iter().enumerate() {
        let z = tape.matmul_nt(h, *w);
        h = tape.add_row(z, *b);
        if i < last {
            h = tape.relu(h);
        }
    }
    h
}

/// Per-layer gradients in parameter order.
pub fn layer_grads(tape: &Tape, grads: &Gradients, vars: &MlpVars) -> Vec<Layer> {
    vars.layers
        .iter()
        .map(|(w, b)| Layer { w: grads.wrt(tape, *w), b: grads.wrt(tape, *b) })
        .collect()
}

/// Row-wise softmax on plain matrices (inference path).
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// One-hot encode class indices into an n x k matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        assert!(c < classes, "label {c} out of range for {classes} classes");
        out[[i, c]] = 1.0;
    }
    out
}

/// Gumbel(0,1) noise matrix: -log(-log(U)).
pub fn gumbel_noise<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    })
}

/// Standard-normal noise matrix.
pub fn normal_noise<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let normal = StandardNormal;
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}
