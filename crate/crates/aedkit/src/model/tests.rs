use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, Conv2d, Depthwise,
    Linear, MaxPool, Pointwise, SepConv,
};
use super::*;
use crate::archive::Tensor;
use ndarray::{Array2, Array4};

fn rand_array4(dim: (usize, usize, usize, usize), rng: &mut SeededRng) -> Array4<f64> {
    Array4::from_shape_fn(dim, |_| rng.uniform(-1.0, 1.0))
}

/// Relative error with an absolute-noise guard for near-zero gradients.
fn grad_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= 1e-8 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs()).max(1e-6)
    }
}

/// Central difference from one closure that perturbs by `d`, evaluates,
/// and un-perturbs before returning.
fn central_diff(mut poke_eval: impl FnMut(f64) -> f64, h: f64) -> f64 {
    let up = poke_eval(h);
    let down = poke_eval(-h);
    (up - down) / (2.0 * h)
}

const H: f64 = 1e-3;
const LAYER_TOL: f64 = 1e-4;

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(1);
    let mut conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, &mut rng);
    let mut x = rand_array4((2, 3, 7, 9), &mut rng);
    let (oh, ow) = conv.out_hw(7, 9);
    let c = rand_array4((2, 4, oh, ow), &mut rng);

    let mut tape = Tape::new();
    let _ = conv.forward(&x, Some(&mut tape));
    let mut grads = Grads::new();
    let dx = conv.backward(&c, &mut tape, "conv", &mut grads);
    let dw = grads["conv.weight"].clone();

    let mut check = SeededRng::new(2);
    for _ in 0..20 {
        let i = check.below(dw.len());
        let numeric = central_diff(
            |d| {
                conv.weight.as_slice_mut().unwrap()[i] += d;
                let v = (&conv.forward(&x, None) * &c).sum();
                conv.weight.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        let analytic = dw.as_slice().unwrap()[i];
        assert!(
            grad_err(analytic, numeric) <= LAYER_TOL,
            "weight[{i}]: {analytic} vs {numeric}"
        );
    }
    for _ in 0..20 {
        let i = check.below(dx.len());
        let numeric = central_diff(
            |d| {
                x.as_slice_mut().unwrap()[i] += d;
                let v = (&conv.forward(&x, None) * &c).sum();
                x.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        let analytic = dx.as_slice().unwrap()[i];
        assert!(
            grad_err(analytic, numeric) <= LAYER_TOL,
            "input[{i}]: {analytic} vs {numeric}"
        );
    }
}

#[test]
fn depthwise_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(3);
    let mut layer = Depthwise::<f64>::new(3, &mut rng);
    let mut x = rand_array4((2, 3, 6, 8), &mut rng);
    let c = rand_array4((2, 3, 6, 8), &mut rng);

    let mut tape = Tape::new();
    let _ = layer.forward(&x, Some(&mut tape));
    let mut grads = Grads::new();
    let dx = layer.backward(&c, &mut tape, "dw", &mut grads);
    let dwg = grads["dw.weight"].clone();

    let mut check = SeededRng::new(4);
    for _ in 0..15 {
        let i = check.below(dwg.len());
        let numeric = central_diff(
            |d| {
                layer.weight.as_slice_mut().unwrap()[i] += d;
                let v = (&layer.forward(&x, None) * &c).sum();
                layer.weight.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dwg.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
    for _ in 0..15 {
        let i = check.below(dx.len());
        let numeric = central_diff(
            |d| {
                x.as_slice_mut().unwrap()[i] += d;
                let v = (&layer.forward(&x, None) * &c).sum();
                x.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dx.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
}

#[test]
fn pointwise_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(5);
    let mut layer = Pointwise::<f64>::new(4, 3, &mut rng);
    let mut x = rand_array4((2, 4, 5, 6), &mut rng);
    let c = rand_array4((2, 3, 5, 6), &mut rng);

    let mut tape = Tape::new();
    let _ = layer.forward(&x, Some(&mut tape));
    let mut grads = Grads::new();
    let dx = layer.backward(&c, &mut tape, "pw", &mut grads);
    let dwg = grads["pw.weight"].clone();

    let mut check = SeededRng::new(6);
    for _ in 0..15 {
        let i = check.below(dwg.len());
        let numeric = central_diff(
            |d| {
                layer.weight.as_slice_mut().unwrap()[i] += d;
                let v = (&layer.forward(&x, None) * &c).sum();
                layer.weight.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dwg.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
    for _ in 0..15 {
        let i = check.below(dx.len());
        let numeric = central_diff(
            |d| {
                x.as_slice_mut().unwrap()[i] += d;
                let v = (&layer.forward(&x, None) * &c).sum();
                x.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dx.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(7);
    let mut layer = BatchNorm::<f64>::new(3);
    // Non-identity gamma/beta so their gradients are exercised off-init.
    for v in layer.gamma.iter_mut() {
        *v = rng.uniform(0.5, 1.5);
    }
    for v in layer.beta.iter_mut() {
        *v = rng.uniform(-0.5, 0.5);
    }
    let mut x = rand_array4((3, 3, 4, 5), &mut rng);
    let c = rand_array4((3, 3, 4, 5), &mut rng);

    let mut tape = Tape::new();
    let _ = layer.forward_train(&x, &mut tape);
    let mut grads = Grads::new();
    let dx = layer.backward(&c, &mut tape, "bn", &mut grads);
    let dgamma = grads["bn.gamma"].clone();
    let dbeta = grads["bn.beta"].clone();

    let mut eval = |layer: &mut BatchNorm<f64>, x: &Array4<f64>| {
        let mut tape = Tape::new();
        (&layer.forward_train(x, &mut tape) * &c).sum()
    };

    for i in 0..3 {
        let numeric = central_diff(
            |d| {
                layer.gamma[i] += d;
                let v = {
                    let mut tape = Tape::new();
                    (&layer.forward_train(&x, &mut tape) * &c).sum()
                };
                layer.gamma[i] -= d;
                v
            },
            H,
        );
        assert!(
            grad_err(dgamma.as_slice().unwrap()[i], numeric) <= LAYER_TOL,
            "gamma[{i}]"
        );
        let numeric = central_diff(
            |d| {
                layer.beta[i] += d;
                let v = {
                    let mut tape = Tape::new();
                    (&layer.forward_train(&x, &mut tape) * &c).sum()
                };
                layer.beta[i] -= d;
                v
            },
            H,
        );
        assert!(
            grad_err(dbeta.as_slice().unwrap()[i], numeric) <= LAYER_TOL,
            "beta[{i}]"
        );
    }
    let mut check = SeededRng::new(8);
    for _ in 0..20 {
        let i = check.below(dx.len());
        let numeric = central_diff(
            |d| {
                x.as_slice_mut().unwrap()[i] += d;
                let v = eval(&mut layer, &x);
                x.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dx.as_slice().unwrap()[i], numeric) <= LAYER_TOL, "x[{i}]");
    }
}

#[test]
fn maxpool_relu_gap_linear_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(9);
    let pool = MaxPool;
    let mut linear = Linear::<f64>::new(3, 2, &mut rng);
    let mut x = rand_array4((2, 3, 6, 7), &mut rng);
    let c = Array2::from_shape_fn((2, 2), |_| rng.uniform(-1.0, 1.0));

    // Composite: maxpool -> relu -> gap -> linear, checked end to end.
    let mut tape = Tape::new();
    let p = pool.forward(&x, Some(&mut tape));
    let r = relu(&p, Some(&mut tape));
    let g = global_avg_pool(&r, Some(&mut tape));
    let _ = linear.forward(&g, Some(&mut tape));

    let mut grads = Grads::new();
    let dg = linear.backward(&c, &mut tape, "head", &mut grads);
    let dr = global_avg_pool_backward(&dg, &mut tape);
    let dp = relu_backward(&dr, &mut tape);
    let dx = pool.backward(&dp, &mut tape);

    let dw = grads["head.weight"].clone();
    let db = grads["head.bias"].clone();
    let mut check = SeededRng::new(10);
    for i in 0..dw.len() {
        let numeric = central_diff(
            |d| {
                linear.weight.as_slice_mut().unwrap()[i] += d;
                let v = {
                    let p = pool.forward(&x, None);
                    let r = relu(&p, None);
                    let g = global_avg_pool(&r, None);
                    (&linear.forward(&g, None) * &c).sum()
                };
                linear.weight.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dw.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
    for i in 0..db.len() {
        let numeric = central_diff(
            |d| {
                linear.bias[i] += d;
                let v = {
                    let p = pool.forward(&x, None);
                    let r = relu(&p, None);
                    let g = global_avg_pool(&r, None);
                    (&linear.forward(&g, None) * &c).sum()
                };
                linear.bias[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(db.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
    for _ in 0..25 {
        let i = check.below(dx.len());
        let numeric = central_diff(
            |d| {
                x.as_slice_mut().unwrap()[i] += d;
                let v = {
                    let p = pool.forward(&x, None);
                    let r = relu(&p, None);
                    let g = global_avg_pool(&r, None);
                    (&linear.forward(&g, None) * &c).sum()
                };
                x.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dx.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
}

#[test]
fn sepconv_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(11);
    let mut layer = SepConv::<f64>::new(3, 4, &mut rng);
    let x = rand_array4((2, 3, 5, 6), &mut rng);
    let c = rand_array4((2, 4, 5, 6), &mut rng);

    let mut tape = Tape::new();
    let _ = layer.forward(&x, Some(&mut tape));
    let mut grads = Grads::new();
    let _ = layer.backward(&c, &mut tape, "sep", &mut grads);

    let mut check = SeededRng::new(12);
    let ddw = grads["sep.depthwise.weight"].clone();
    let dpw = grads["sep.pointwise.weight"].clone();
    for _ in 0..10 {
        let i = check.below(ddw.len());
        let numeric = central_diff(
            |d| {
                layer.depthwise.weight.as_slice_mut().unwrap()[i] += d;
                let v = (&layer.forward(&x, None) * &c).sum();
                layer.depthwise.weight.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(ddw.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
    for _ in 0..10 {
        let i = check.below(dpw.len());
        let numeric = central_diff(
            |d| {
                layer.pointwise.weight.as_slice_mut().unwrap()[i] += d;
                let v = (&layer.forward(&x, None) * &c).sum();
                layer.pointwise.weight.as_slice_mut().unwrap()[i] -= d;
                v
            },
            H,
        );
        assert!(grad_err(dpw.as_slice().unwrap()[i], numeric) <= LAYER_TOL);
    }
}

// ---------------------------------------------------------------------------
// Whole-network behavior.
// ---------------------------------------------------------------------------

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        middle_repeats: 0,
        width_multiplier: 0.125,
        n_classes: 4,
        input_mel_bins: 80,
        input_channels: 1,
    }
}

fn poke_param(net: &mut Network<f64>, name: &str, idx: usize, delta: f64) {
    net.visit_params_mut(&mut |n, _, mut view| {
        if n == name {
            view.as_slice_mut().unwrap()[idx] += delta;
        }
    });
}

/// Loss `sum(c * logits)` of a training-mode forward; `c` fixed.
fn net_loss(net: &mut Network<f64>, x: &Array4<f64>, c: &Array2<f64>) -> f64 {
    let mut tape = Tape::new();
    let logits = net.forward_train(x, &mut tape).unwrap();
    (&logits * c).sum()
}

fn gradcheck_params(
    net: &mut Network<f64>,
    x: &Array4<f64>,
    c: &Array2<f64>,
    names: &[(String, usize)],
    samples: usize,
    tol: f64,
    seed: u64,
) {
    let mut tape = Tape::new();
    let _ = net.forward_train(x, &mut tape).unwrap();
    let grads = net.backward(c, &mut tape);

    let mut check = SeededRng::new(seed);
    for _ in 0..samples {
        let (name, len) = &names[check.below(names.len())];
        let idx = check.below(*len);
        let analytic = grads[name].as_slice().unwrap()[idx];
        let numeric = central_diff(
            |d| {
                poke_param(net, name, idx, d);
                let v = net_loss(net, x, c);
                poke_param(net, name, idx, -d);
                v
            },
            // In 64-bit a small step is strictly more accurate and stays
            // clear of max-pool argmax flips that a 1e-3 step can cross.
            1e-5,
        );
        let err = grad_err(analytic, numeric);
        assert!(
            err <= tol,
            "{name}[{idx}]: analytic {analytic}, numeric {numeric}, err {err}"
        );
    }
}

fn trainable_names(net: &Network<f64>, prefix: Option<&str>) -> Vec<(String, usize)> {
    let mut names = Vec::new();
    net.visit_params(&mut |name, kind, view| {
        if kind == ParamKind::Trainable && prefix.map_or(true, |p| name.starts_with(p)) {
            names.push((name, view.len()));
        }
    });
    names
}

#[test]
fn tiny_network_gradcheck_all_layer_types() {
    let mut rng = SeededRng::new(42);
    let mut net: Network<f64> = build(&tiny_cfg(), &mut rng).unwrap();
    let x = rand_array4((2, 1, 80, 32), &mut rng);
    let c = Array2::from_shape_fn((2, 4), |_| rng.uniform(-1.0, 1.0));
    let names = trainable_names(&net, None);
    gradcheck_params(&mut net, &x, &c, &names, 30, 1e-3, 7);
}

#[test]
fn middle_block_backward_is_correct() {
    let cfg = ModelConfig {
        middle_repeats: 1,
        ..tiny_cfg()
    };
    let mut rng = SeededRng::new(13);
    let mut net: Network<f64> = build(&cfg, &mut rng).unwrap();
    let x = rand_array4((2, 1, 80, 32), &mut rng);
    let c = Array2::from_shape_fn((2, 4), |_| rng.uniform(-1.0, 1.0));
    let names = trainable_names(&net, Some("middle.0"));
    assert!(!names.is_empty());
    gradcheck_params(&mut net, &x, &c, &names, 10, 1e-3, 14);
}

#[test]
fn doubling_upstream_gradient_doubles_parameter_gradients() {
    let mut rng = SeededRng::new(15);
    let mut net: Network<f64> = build(&tiny_cfg(), &mut rng).unwrap();
    let x = rand_array4((2, 1, 80, 32), &mut rng);
    let c = Array2::from_shape_fn((2, 4), |_| rng.uniform(-1.0, 1.0));

    let mut tape = Tape::new();
    let _ = net.forward_train(&x, &mut tape).unwrap();
    let g1 = net.backward(&c, &mut tape);
    let mut tape = Tape::new();
    let _ = net.forward_train(&x, &mut tape).unwrap();
    let g2 = net.backward(&(&c * 2.0), &mut tape);

    for (name, g) in &g1 {
        let doubled = &g2[name];
        for (a, b) in g.iter().zip(doubled.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{name}");
        }
    }
}

#[test]
fn loss_ignoring_a_class_zeroes_its_head_row_gradient() {
    let mut rng = SeededRng::new(16);
    let mut net: Network<f64> = build(&tiny_cfg(), &mut rng).unwrap();
    let x = rand_array4((2, 1, 80, 32), &mut rng);
    // Upstream gradient never touches class 2.
    let mut c = Array2::from_shape_fn((2, 4), |_| rng.uniform(-1.0, 1.0));
    c.column_mut(2).fill(0.0);

    let mut tape = Tape::new();
    let _ = net.forward_train(&x, &mut tape).unwrap();
    let grads = net.backward(&c, &mut tape);
    let dw = &grads["head.weight"];
    let row = dw.index_axis(ndarray::Axis(0), 2);
    assert!(row.iter().all(|&v| v == 0.0));
    assert!(grads["head.bias"].as_slice().unwrap()[2] == 0.0);
}

#[test]
fn param_counts_match_the_published_sizes() {
    let full: Network<f32> = build(&ModelConfig::xception(50), &mut SeededRng::new(0)).unwrap();
    let n_full = full.param_count();
    assert!(
        (n_full as f64 - 21e6).abs() <= 0.1 * 21e6,
        "full model has {n_full} params"
    );

    let small: Network<f32> =
        build(&ModelConfig::xception_small(50), &mut SeededRng::new(0)).unwrap();
    let n_small = small.param_count();
    assert!(
        (n_small as f64 - 8e6).abs() <= 0.1 * 8e6,
        "small model has {n_small} params"
    );
}

#[test]
fn param_count_is_a_pure_function_of_config() {
    let cfg = tiny_cfg();
    let a: Network<f32> = build(&cfg, &mut SeededRng::new(1)).unwrap();
    let b: Network<f32> = build(&cfg, &mut SeededRng::new(999)).unwrap();
    assert_eq!(a.param_count(), b.param_count());
}

#[test]
fn middle_flow_param_arithmetic() {
    let at = |repeats: usize| {
        let cfg = ModelConfig {
            middle_repeats: repeats,
            ..ModelConfig::xception(50)
        };
        let net: Network<f32> = build(&cfg, &mut SeededRng::new(0)).unwrap();
        net.param_count()
    };
    let (n0, n1, n8) = (at(0), at(1), at(8));
    let per_block = n1 - n0;
    assert_eq!(n8, n0 + 8 * per_block);
    // One middle block: 3 x (depthwise 728*9 + pointwise 728*728 + bn 2*728).
    assert_eq!(per_block, 3 * (728 * 9 + 728 * 728 + 2 * 728));
}

#[test]
fn linear_and_sepconv_param_arithmetic() {
    let mut rng = SeededRng::new(0);
    let linear = Linear::<f32>::new(2048, 50, &mut rng);
    let mut count = 0;
    linear.visit("head", &mut |_, kind, view| {
        if kind == ParamKind::Trainable {
            count += view.len();
        }
    });
    assert_eq!(count, 102_450);

    let sep = SepConv::<f32>::new(728, 728, &mut rng);
    let mut depthwise = 0;
    let mut pointwise = 0;
    sep.visit("sep", &mut |name, _, view| {
        if name.ends_with("depthwise.weight") {
            depthwise = view.len();
        } else if name.ends_with("pointwise.weight") {
            pointwise = view.len();
        }
    });
    assert_eq!(depthwise, 6_552);
    assert_eq!(pointwise, 529_984);
}

#[test]
fn forward_shape_contract() {
    let mut rng = SeededRng::new(3);
    let mut net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let x = Array4::<f32>::from_elem((3, 1, 80, 498), 0.1);
    let logits = net.infer(&x).unwrap();
    assert_eq!(logits.dim(), (3, 4));
    let mut tape = Tape::new();
    let logits = net.forward_train(&x, &mut tape).unwrap();
    assert_eq!(logits.dim(), (3, 4));
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn zero_input_gives_equal_logits() {
    let mut rng = SeededRng::new(4);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let x = Array4::<f32>::zeros((2, 1, 80, 64));
    let logits = net.infer(&x).unwrap();
    // Zero input stays zero through every conv; logits equal the (zero)
    // head bias.
    for &v in logits.iter() {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn inference_is_batch_order_equivariant() {
    let mut rng = SeededRng::new(5);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let a = rand_array4((1, 1, 80, 40), &mut rng).mapv(|v| v as f32);
    let b = rand_array4((1, 1, 80, 40), &mut rng).mapv(|v| v as f32);
    let mut fwd = Array4::<f32>::zeros((2, 1, 80, 40));
    fwd.index_axis_mut(ndarray::Axis(0), 0)
        .assign(&a.index_axis(ndarray::Axis(0), 0));
    fwd.index_axis_mut(ndarray::Axis(0), 1)
        .assign(&b.index_axis(ndarray::Axis(0), 0));
    let mut rev = Array4::<f32>::zeros((2, 1, 80, 40));
    rev.index_axis_mut(ndarray::Axis(0), 0)
        .assign(&b.index_axis(ndarray::Axis(0), 0));
    rev.index_axis_mut(ndarray::Axis(0), 1)
        .assign(&a.index_axis(ndarray::Axis(0), 0));

    let y_fwd = net.infer(&fwd).unwrap();
    let y_rev = net.infer(&rev).unwrap();
    assert_eq!(y_fwd.row(0), y_rev.row(1));
    assert_eq!(y_fwd.row(1), y_rev.row(0));
}

#[test]
fn duplicated_example_gives_identical_rows() {
    let mut rng = SeededRng::new(6);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let a = rand_array4((1, 1, 80, 40), &mut rng).mapv(|v| v as f32);
    let mut x = Array4::<f32>::zeros((2, 1, 80, 40));
    for i in 0..2 {
        x.index_axis_mut(ndarray::Axis(0), i)
            .assign(&a.index_axis(ndarray::Axis(0), 0));
    }
    let y = net.infer(&x).unwrap();
    assert_eq!(y.row(0), y.row(1));
}

#[test]
fn input_validation_errors() {
    let mut rng = SeededRng::new(7);
    let mut net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let too_short = Array4::<f32>::zeros((1, 1, 80, 31));
    assert!(matches!(
        net.infer(&too_short),
        Err(ModelError::TooFewFrames { got: 31, min: 32 })
    ));
    let wrong_bins = Array4::<f32>::zeros((1, 1, 64, 64));
    assert!(matches!(
        net.infer(&wrong_bins),
        Err(ModelError::BadInputShape { .. })
    ));
    let mut tape = Tape::new();
    assert!(net.forward_train(&too_short, &mut tape).is_err());
    let cfg = ModelConfig {
        width_multiplier: 0.0,
        ..tiny_cfg()
    };
    assert!(build::<f32>(&cfg, &mut rng).is_err());
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let mut rng = SeededRng::new(8);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let archive = net.save_weights("unit-test");
    let mut restored: Network<f32> = build(&tiny_cfg(), &mut SeededRng::new(999)).unwrap();
    let warnings = restored.load_weights(&archive).unwrap();
    assert!(warnings.is_empty());

    let x = rand_array4((2, 1, 80, 48), &mut rng).mapv(|v| v as f32);
    let y1 = net.infer(&x).unwrap();
    let y2 = restored.infer(&x).unwrap();
    assert_eq!(y1, y2);
}

#[test]
fn missing_head_is_reported_by_name() {
    let mut rng = SeededRng::new(9);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let mut archive = net.save_weights("unit-test");
    archive.remove(HEAD_WEIGHT);
    let mut target: Network<f32> = build(&tiny_cfg(), &mut SeededRng::new(10)).unwrap();
    match target.load_weights(&archive) {
        Err(ModelError::MissingTensors(names)) => {
            assert_eq!(names, vec![HEAD_WEIGHT.to_string()])
        }
        other => panic!("expected missing-tensor error, got {other:?}"),
    }
}

#[test]
fn extra_archive_tensor_is_a_warning_not_an_error() {
    let mut rng = SeededRng::new(11);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let mut archive = net.save_weights("unit-test");
    archive
        .insert("unused.head", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    let mut target: Network<f32> = build(&tiny_cfg(), &mut SeededRng::new(12)).unwrap();
    let warnings = target.load_weights(&archive).unwrap();
    assert_eq!(warnings, vec!["unused.head".to_string()]);
}

#[test]
fn shape_mismatch_is_reported_by_name() {
    let mut rng = SeededRng::new(13);
    let net: Network<f32> = build(&tiny_cfg(), &mut rng).unwrap();
    let mut archive = net.save_weights("unit-test");
    let other_cfg = ModelConfig {
        n_classes: 7,
        ..tiny_cfg()
    };
    let mut target: Network<f32> = build(&other_cfg, &mut SeededRng::new(14)).unwrap();
    match target.load_weights(&archive) {
        Err(ModelError::MismatchedTensors(names)) => {
            assert!(names.iter().any(|n| n.contains(HEAD_WEIGHT)), "{names:?}");
        }
        other => panic!("expected mismatch error, got {other:?}"),
    }
    // After removing the head the mismatch becomes a missing-tensor error.
    archive.remove(HEAD_WEIGHT);
    archive.remove(HEAD_BIAS);
    assert!(matches!(
        target.load_weights(&archive),
        Err(ModelError::MissingTensors(_))
    ));
}

#[test]
fn shape_catalog_matches_built_network() {
    let cfg = tiny_cfg();
    let catalog = shape_catalog(&cfg).unwrap();
    let net: Network<f32> = build(&cfg, &mut SeededRng::new(15)).unwrap();
    let mut seen = 0;
    net.visit_params(&mut |name, kind, view| {
        let entry = catalog.iter().find(|(n, _, _)| *n == name).unwrap();
        assert_eq!(entry.1, kind);
        assert_eq!(entry.2, view.shape().to_vec());
        seen += 1;
    });
    assert_eq!(seen, catalog.len());
}

#[test]
fn same_seed_builds_identical_networks() {
    let cfg = tiny_cfg();
    let a: Network<f32> = build(&cfg, &mut SeededRng::new(77)).unwrap();
    let b: Network<f32> = build(&cfg, &mut SeededRng::new(77)).unwrap();
    assert_eq!(a.save_weights("x").to_bytes(), b.save_weights("x").to_bytes());
}
