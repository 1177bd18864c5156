//! Minimal differentiable-computation engine: MLPs with ReLU, a reverse-mode
//! gradient tape, and an adaptive-moment optimizer. 64-bit floats throughout.

mod mlp;
mod optim;
mod tape;

pub use mlp::{
    gumbel_noise, layer_grads, mlp_forward_var, normal_noise, one_hot, softmax_rows, Layer,
    MlpCheckpoint, MlpParams, MlpVars,
};
pub use optim::{opt_step, OptState};
pub use tape::{DiffError, Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_shapes_and_determinism() {
        let p = MlpParams::init(&[2, 50, 50, 2], 7).unwrap();
        let shapes: Vec<_> = p.layers().iter().map(|l| l.w.dim()).collect();
        assert_eq!(shapes, vec![(50, 2), (50, 50), (2, 50)]);
        assert!(p.layers().iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        let q = MlpParams::init(&[2, 50, 50, 2], 7).unwrap();
        assert_eq!(p, q);
        let r = MlpParams::init(&[2, 50, 50, 2], 8).unwrap();
        assert_ne!(p, r);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert_eq!(
            MlpParams::init(&[3], 0).unwrap_err(),
            DiffError::InvalidDims("need >=2 dims, got 1".to_string())
        );
        assert!(MlpParams::init(&[3, 0, 2], 0).is_err());
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let mut p = MlpParams::init(&[3, 4, 2], 0).unwrap();
        for l in p.layers_mut() {
            l.w.fill(0.0);
        }
        let x = Array2::from_shape_simple_fn((5, 3), || 1.5);
        let y = p.forward(&x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_identity_passthrough() {
        let mut p = MlpParams::init(&[2, 2], 0).unwrap();
        p.layers_mut()[0].w = array![[1.0, 0.0], [0.0, 1.0]];
        let x = array![[3.0, -4.0], [0.5, 2.0]];
        assert_eq!(p.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_shape_and_mismatch() {
        let p = MlpParams::init(&[3, 8, 5], 1).unwrap();
        let x = Array2::zeros((4, 3));
        assert_eq!(p.forward(&x).unwrap().dim(), (4, 5));
        let bad = Array2::zeros((4, 2));
        assert!(matches!(p.forward(&bad), Err(DiffError::ShapeMismatch(_))));
    }

    #[test]
    fn forward_positive_homogeneity_with_zero_bias() {
        let p = MlpParams::init(&[3, 6, 2], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normal_noise(&mut rng, 5, 3);
        let alpha = 2.75;
        let lhs = p.forward(&(&x * alpha)).unwrap();
        let rhs = p.forward(&x).unwrap() * alpha;
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn linear_sum_gradient_is_analytic() {
        // loss = sum(x . w^T): d loss / d w = column sums of x, per output row.
        let x_data = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let w_data = array![[0.1, 0.2], [0.3, 0.4]];
        let mut tape = Tape::new();
        let x = tape.constant(x_data.clone());
        let w = tape.param(w_data);
        let out = tape.matmul_nt(x, w);
        let loss = tape.sum(out);
        let grads = tape.backward(loss).unwrap();
        let gw = grads.wrt(&tape, w);
        let col_sums = array![9.0, 12.0];
        for row in gw.rows() {
            assert_eq!(row[0], col_sums[0]);
            assert_eq!(row[1], col_sums[1]);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(array![[2.0, 3.0]]);
        let zero = tape.sub(w, w);
        let loss = tape.sum(zero);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(&tape, w).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(array![[0.0]]);
        let ln = tape.ln(w); // ln(0) = -inf
        let loss = tape.sum(ln);
        assert_eq!(tape.backward(loss).unwrap_err(), DiffError::NonFiniteLoss);
    }

    /// Central finite differences of a scalar loss with respect to every
    /// parameter entry. `eval` rebuilds the loss from scratch.
    fn finite_diff_grads(
        params: &MlpParams,
        eval: &dyn Fn(&MlpParams) -> f64,
        h: f64,
    ) -> Vec<Layer> {
        let mut out = Vec::new();
        for li in 0..params.layers().len() {
            let mut gw = Array2::zeros(params.layers()[li].w.raw_dim());
            let mut gb = Array2::zeros(params.layers()[li].b.raw_dim());
            for idx in 0..params.layers()[li].w.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                *plus.layers_mut()[li].w.iter_mut().nth(idx).unwrap() += h;
                *minus.layers_mut()[li].w.iter_mut().nth(idx).unwrap() -= h;
                *gw.iter_mut().nth(idx).unwrap() = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            for idx in 0..params.layers()[li].b.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                *plus.layers_mut()[li].b.iter_mut().nth(idx).unwrap() += h;
                *minus.layers_mut()[li].b.iter_mut().nth(idx).unwrap() -= h;
                *gb.iter_mut().nth(idx).unwrap() = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            out.push(Layer { w: gw, b: gb });
        }
        out
    }

    fn max_rel_err(analytic: &[Layer], numeric: &[Layer]) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, n) in analytic.iter().zip(numeric) {
            for (x, y) in a.w.iter().chain(a.b.iter()).zip(n.w.iter().chain(n.b.iter())) {
                let denom = x.abs().max(y.abs()).max(1.0);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }

    /// Composite loss exercising the op set: softmax CE + mean of a
    /// sigmoid/exp/ln branch over the net output.
    fn composite_loss(params: &MlpParams, x: &Array2<f64>, targets: &Array2<f64>) -> (f64, Vec<Layer>) {
        let mut tape = Tape::new();
        let vars = params.insert(&mut tape);
        let input = tape.constant(x.clone());
        let logits = mlp_forward_var(&mut tape, &vars, input);
        let ce = tape.softmax_cross_entropy(logits, targets.clone());
        let sig = tape.sigmoid(logits);
        let shifted = tape.exp(sig);
        let ln = tape.ln(shifted);
        let reg = tape.mean(ln);
        let reg_scaled = tape.scale(reg, 0.3);
        let loss = tape.add(ce, reg_scaled);
        let value = tape.scalar(loss);
        let grads = tape.backward(loss).unwrap();
        (value, layer_grads(&tape, &grads, &vars))
    }

    #[test]
    fn gradients_match_finite_differences_on_random_nets() {
        // 20 seeded configurations, dims up to [5, 8, 8, 3].
        let mut worst: f64 = 0.0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_in = 1 + (rng.random::<u32>() % 5) as usize;
            let n_hidden = 1 + (rng.random::<u32>() % 8) as usize;
            let n_out = 1 + (rng.random::<u32>() % 3) as usize;
            let dims = [n_in, n_hidden, n_hidden, n_out];
            let params = MlpParams::init(&dims, seed ^ 0xbeef).unwrap();
            let x = normal_noise(&mut rng, 6, n_in);
            let labels: Vec<usize> =
                (0..6).map(|_| (rng.random::<u32>() as usize) % n_out).collect();
            let targets = one_hot(&labels, n_out);
            let (_, analytic) = composite_loss(&params, &x, &targets);
            let numeric =
                finite_diff_grads(&params, &|p| composite_loss(p, &x, &targets).0, 1e-4);
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradients_deterministic_across_runs() {
        let params = MlpParams::init(&[3, 5, 2], 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = normal_noise(&mut rng, 4, 3);
        let targets = one_hot(&[0, 1, 1, 0], 2);
        let (l1, g1) = composite_loss(&params, &x, &targets);
        let (l2, g2) = composite_loss(&params, &x, &targets);
        assert_eq!(l1, l2);
        assert_eq!(g1[0].w, g2[0].w);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(array![[0.0, -1.0, 2.0]]);
        let r = tape.relu(x);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(&tape, x), array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let z = tape.param(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        let p = tape.softmax(z);
        for row in tape.value(p).rows() {
            assert_relative_eq!(row.sum(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let z0 = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]];
        let cvec = array![[0.2, -0.5, 1.0], [0.7, 0.3, -0.2]];
        let eval = |z: &Array2<f64>| {
            let mut tape = Tape::new();
            let zv = tape.param(z.clone());
            let p = tape.softmax(zv);
            let c = tape.constant(cvec.clone());
            let weighted = tape.mul(p, c);
            let loss = tape.sum(weighted);
            tape.scalar(loss)
        };
        let mut tape = Tape::new();
        let zv = tape.param(z0.clone());
        let p = tape.softmax(zv);
        let c = tape.constant(cvec.clone());
        let weighted = tape.mul(p, c);
        let loss = tape.sum(weighted);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.wrt(&tape, zv);
        let h = 1e-6;
        for i in 0..z0.nrows() {
            for j in 0..z0.ncols() {
                let mut plus = z0.clone();
                let mut minus = z0.clone();
                plus[[i, j]] += h;
                minus[[i, j]] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                assert_relative_eq!(analytic[[i, j]], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let z0 = array![[0.5, -0.3], [1.5, 1.2], [-2.0, 0.4]];
        let eval = |z: &Array2<f64>| {
            let mut tape = Tape::new();
            let zv = tape.param(z.clone());
            let h = tape.softmax_entropy(zv);
            tape.scalar(h)
        };
        let mut tape = Tape::new();
        let zv = tape.param(z0.clone());
        let hvar = tape.softmax_entropy(zv);
        let grads = tape.backward(hvar).unwrap();
        let analytic = grads.wrt(&tape, zv);
        let h = 1e-6;
        for i in 0..z0.nrows() {
            for j in 0..z0.ncols() {
                let mut plus = z0.clone();
                let mut minus = z0.clone();
                plus[[i, j]] += h;
                minus[[i, j]] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                assert_relative_eq!(analytic[[i, j]], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gumbel_forward_is_one_hot_backward_is_soft_jacobian() {
        let z0 = array![[0.4, -0.2, 1.1], [0.0, 0.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = gumbel_noise(&mut rng, 2, 3);
        let tau = 0.7;
        let cvec = array![[1.0, -2.0, 0.5], [0.3, 0.9, -1.4]];

        let mut tape = Tape::new();
        let zv = tape.param(z0.clone());
        let hard = tape.gumbel_straight_through(zv, &noise, tau);
        for row in tape.value(hard).rows() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
        let c = tape.constant(cvec.clone());
        let weighted = tape.mul(hard, c);
        let loss = tape.sum(weighted);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.wrt(&tape, zv);

        // Finite differences of the soft relaxation with the same noise.
        let soft_eval = |z: &Array2<f64>| {
            let mut tape = Tape::new();
            let perturbed = tape.param((z + &noise).mapv(|v| v / tau));
            let p = tape.softmax(perturbed);
            let c = tape.constant(cvec.clone());
            let weighted = tape.mul(p, c);
            let loss = tape.sum(weighted);
            tape.scalar(loss)
        };
        let h = 1e-6;
        for i in 0..z0.nrows() {
            for j in 0..z0.ncols() {
                let mut plus = z0.clone();
                let mut minus = z0.clone();
                plus[[i, j]] += h;
                minus[[i, j]] -= h;
                let fd = (soft_eval(&plus) - soft_eval(&minus)) / (2.0 * h);
                assert_relative_eq!(analytic[[i, j]], fd, max_relative = 1e-4, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_fresh_params_unchanged() {
        let mut params = MlpParams::init(&[2, 3, 1], 9).unwrap();
        let before = params.clone();
        let grads: Vec<Layer> = params
            .layers()
            .iter()
            .map(|l| Layer { w: Array2::zeros(l.w.raw_dim()), b: Array2::zeros(l.b.raw_dim()) })
            .collect();
        let mut state = OptState::new(&params);
        opt_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut params = MlpParams::init(&[1, 1], 0).unwrap();
        let w_before = params.layers()[0].w[[0, 0]];
        let grads = vec![Layer { w: array![[2.5]], b: array![[0.0]] }];
        let mut state = OptState::new(&params);
        opt_step(&mut params, &grads, &mut state).unwrap();
        assert!(params.layers()[0].w[[0, 0]] < w_before);
    }

    #[test]
    fn adam_shape_mismatch_rejected() {
        let mut params = MlpParams::init(&[2, 2], 0).unwrap();
        let grads = vec![Layer { w: Array2::zeros((3, 3)), b: Array2::zeros((1, 2)) }];
        let mut state = OptState::new(&params);
        assert!(matches!(
            opt_step(&mut params, &grads, &mut state),
            Err(DiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        // loss = sum(w * w) over a single layer, started close enough to the
        // bowl floor that 500 default-rate steps reach 1e-3 of the start.
        let mut params = MlpParams::init(&[2, 2], 21).unwrap();
        for l in params.layers_mut() {
            l.w.mapv_inplace(|w| 0.12 * w);
        }
        let mut state = OptState::new(&params);
        let start: f64 = params.layers()[0].w.iter().map(|w| w * w).sum();
        let mut losses = Vec::new();
        for _ in 0..500 {
            let mut tape = Tape::new();
            let vars = params.insert(&mut tape);
            let (w, _) = vars.layers[0];
            let sq = tape.mul(w, w);
            let loss = tape.sum(sq);
            losses.push(tape.scalar(loss));
            let grads = tape.backward(loss).unwrap();
            let g = layer_grads(&tape, &grads, &vars);
            opt_step(&mut params, &g, &mut state).unwrap();
        }
        let target = 1e-3 * start;
        let hit = losses.iter().position(|&l| l <= target);
        let hit = hit.unwrap_or_else(|| panic!("never reached {target} from {start}"));
        // Monotone decrease from warmup until the target is reached; past
        // that point Adam dithers in a band around the optimum.
        for w in losses[20..=hit].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let params = MlpParams::init(&[3, 7, 2], 33).unwrap();
        let ck = params.to_checkpoint();
        assert_eq!(ck.dims, vec![3, 7, 2]);
        let json = serde_json::to_string(&ck).unwrap();
        let back: MlpCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(MlpParams::from_checkpoint(&back).unwrap(), params);
    }

    #[test]
    fn one_hot_and_noise_shapes() {
        let oh = one_hot(&[1, 0, 1], 2);
        assert_eq!(oh, array![[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(normal_noise(&mut rng, 3, 2).dim(), (3, 2));
        assert_eq!(gumbel_noise(&mut rng, 4, 5).dim(), (4, 5));
    }
}
