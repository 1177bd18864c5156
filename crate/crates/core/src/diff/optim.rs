//! Adaptive-moment optimizer with bias correction.

use super::mlp::{Layer, MlpParams};
use super::tape::DiffError;
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct OptState {
    first: Vec<Layer>,
    second: Vec<Layer>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    /// Zeroed moment accumulators shaped after `params`; lr 1e-3,
    /// decays (0.9, 0.999), epsilon 1e-8.
    pub fn new(params: &MlpParams) -> Self {
        let zeros = |l: &Layer| Layer {
            w: Array2::zeros(l.w.raw_dim()),
            b: Array2::zeros(l.b.raw_dim()),
        };
        OptState {
            first: params.layers().iter().map(zeros).collect(),
            second: params.layers().iter().map(zeros).collect(),
            step: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(params: &MlpParams, lr: f64) -> Self {
        OptState { lr, ..Self::new(params) }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy)]
struct Hyper {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
}

fn update_entry(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    h: Hyper,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / h.bias1;
        let v_hat = *v / h.bias2;
        *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    });
}

/// One optimizer step over every layer. `grads` must mirror the parameter
/// shapes (as produced by [`super::mlp::layer_grads`]).
pub fn opt_step(
    params: &mut MlpParams,
    grads: &[Layer],
    state: &mut OptState,
) -> Result<(), DiffError> {
    if grads.len() != params.layers().len() {
        return Err(DiffError::ShapeMismatch(format!(
            "{} gradient layers for {} parameter layers",
            grads.len(),
            params.layers().len()
        )));
    }
    for (l, g) in params.layers().iter().zip(grads) {
        if l.w.raw_dim() != g.w.raw_dim() || l.b.raw_dim() != g.b.raw_dim() {
            return Err(DiffError::ShapeMismatch("gradient layer shape".to_string()));
        }
    }
    state.step += 1;
    let h = Hyper {
        lr: state.lr,
        beta1: state.beta1,
        beta2: state.beta2,
        eps: state.eps,
        bias1: 1.0 - state.beta1.powi(state.step as i32),
        bias2: 1.0 - state.beta2.powi(state.step as i32),
    };
    for (i, (layer, grad)) in params.layers_mut().iter_mut().zip(grads).enumerate() {
        update_entry(&mut layer.w, &grad.w, &mut state.first[i].w, &mut state.second[i].w, h);
        update_entry(&mut layer.b, &grad.b, &mut state.first[i].b, &mut state.second[i].b, h);
    }
    Ok(())
}
