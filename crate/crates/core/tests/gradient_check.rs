//! Finite-difference gradient oracle for the backpropagation kernel.
//!
//! The oracle perturbs one parameter at a time and re-runs the forward
//! pass only, so it stays independent of the backward implementation it
//! checks. Everything runs in f64.
//!
//! Central differences only estimate a derivative where the loss is
//! smooth; a coordinate whose +/- eps perturbations flip any ReLU
//! activation straddles a kink, so such coordinates are resampled (the
//! count of checked coordinates per layer kind is still enforced).

use orbitfl::nn::{
    classifier_loss_grad, cross_entropy_loss, mse_loss, regression_loss_grad, ConvSpec, LayerDef,
    LayerKind, Network, ParamVector, Padding, Tensor4,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;
const PER_KIND: usize = 120;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_tensor(rng: &mut ChaCha8Rng, b: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
    let data = (0..b * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor4::from_vec(b, c, h, w, data).unwrap()
}

/// Sign pattern of every ReLU output in the network for the given params.
fn relu_pattern(net: &Network, params: &ParamVector<f64>, input: &Tensor4<f64>) -> Vec<bool> {
    let (_, acts) = net.forward_cached(params, input).unwrap();
    let mut pattern = Vec::new();
    for (i, def) in net.layers().iter().enumerate() {
        if let LayerDef::Conv { relu: true, .. } = def {
            pattern.extend(acts[i + 1].data().iter().map(|&v| v > 0.0));
        }
    }
    pattern
}

/// Central finite difference at coordinate `i`, or None when the
/// perturbation interval straddles a ReLU kink.
fn fd_grad(
    net: &Network,
    params: &ParamVector<f64>,
    input: &Tensor4<f64>,
    i: usize,
    loss: &mut dyn FnMut(&ParamVector<f64>) -> f64,
) -> Option<f64> {
    let mut plus = params.clone();
    plus.values_mut()[i] += EPS;
    let mut minus = params.clone();
    minus.values_mut()[i] -= EPS;
    if relu_pattern(net, &plus, input) != relu_pattern(net, &minus, input) {
        return None;
    }
    Some((loss(&plus) - loss(&minus)) / (2.0 * EPS))
}

/// Checks >= PER_KIND random coordinates of each layer kind present.
fn check_network(
    net: &Network,
    params: &ParamVector<f64>,
    input: &Tensor4<f64>,
    grad: &ParamVector<f64>,
    loss: &mut dyn FnMut(&ParamVector<f64>) -> f64,
    rng: &mut ChaCha8Rng,
) {
    for kind in [LayerKind::Conv, LayerKind::Dense] {
        let layers: Vec<usize> = params
            .segments()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == kind)
            .map(|(l, _)| l)
            .collect();
        if layers.is_empty() {
            continue;
        }
        let mut checked = 0usize;
        let mut attempts = 0usize;
        while checked < PER_KIND {
            attempts += 1;
            assert!(attempts < 50 * PER_KIND, "too many kink-straddling draws");
            let l = layers[rng.gen_range(0..layers.len())];
            let range = params.layer_range(l);
            let i = rng.gen_range(range.start..range.end);
            let Some(numeric) = fd_grad(net, params, input, i, loss) else {
                continue;
            };
            let analytic = grad.values()[i];
            assert!(
                rel_err(analytic, numeric) < TOL,
                "kind {kind:?} layer {l} coord {i}: backprop {analytic} vs fd {numeric}"
            );
            checked += 1;
        }
    }
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let net = Network::new(vec![
        LayerDef::Conv {
            spec: ConvSpec::same(3, 4, 3),
            relu: true,
        },
        LayerDef::Conv {
            spec: ConvSpec {
                in_channels: 4,
                out_channels: 4,
                kernel: 3,
                stride: 2,
                padding: Padding::Same,
            },
            relu: true,
        },
        LayerDef::GlobalAvgPool,
        LayerDef::Dense {
            inputs: 4,
            outputs: 3,
        },
    ]);
    let params = net.init_params::<f64>(5);
    let images = random_tensor(&mut rng, 2, 3, 8, 8);
    let labels = vec![0usize, 2];
    let (_, grad) = classifier_loss_grad(&net, &params, &images, &labels).unwrap();
    let mut loss = |p: &ParamVector<f64>| {
        let logits = net.forward(p, &images).unwrap();
        cross_entropy_loss(&logits, &labels).unwrap()
    };
    check_network(&net, &params, &images, &grad, &mut loss, &mut rng);
}

#[test]
fn regression_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let net = Network::new(vec![
        LayerDef::Conv {
            spec: ConvSpec::same(2, 3, 3),
            relu: true,
        },
        LayerDef::Conv {
            spec: ConvSpec::same(3, 2, 1),
            relu: true,
        },
        LayerDef::Conv {
            spec: ConvSpec::same(2, 2, 3),
            relu: false,
        },
    ]);
    let params = net.init_params::<f64>(17);
    let input = random_tensor(&mut rng, 2, 2, 6, 6);
    let target = random_tensor(&mut rng, 2, 2, 6, 6);
    let (_, grad) = regression_loss_grad(&net, &params, &input, &target).unwrap();
    let mut loss = |p: &ParamVector<f64>| {
        let pred = net.forward(p, &input).unwrap();
        mse_loss(&pred, &target).unwrap()
    };
    check_network(&net, &params, &input, &grad, &mut loss, &mut rng);
}

#[test]
fn linear_model_matches_closed_form_least_squares_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Network::new(vec![LayerDef::Dense {
        inputs: 4,
        outputs: 2,
    }]);
    let mut params = net.init_params::<f64>(3);
    for v in params.values_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let n = 6usize;
    let x = random_tensor(&mut rng, n, 4, 1, 1);
    let y = random_tensor(&mut rng, n, 2, 1, 1);
    let (_, grad) = regression_loss_grad(&net, &params, &x, &y).unwrap();

    // Closed form: dL/dw_oi = 2/(n*out) * sum_n err_no * x_ni, err = Wx + b - y.
    let w = &params.values()[0..8];
    let b = &params.values()[8..10];
    let scale = 2.0 / (n * 2) as f64;
    let mut gw = vec![0.0f64; 8];
    let mut gb = vec![0.0f64; 2];
    for s in 0..n {
        for o in 0..2 {
            let mut err = b[o] - y.get(s, o, 0, 0);
            for i in 0..4 {
                err += w[o * 4 + i] * x.get(s, i, 0, 0);
            }
            gb[o] += scale * err;
            for i in 0..4 {
                gw[o * 4 + i] += scale * err * x.get(s, i, 0, 0);
            }
        }
    }
    for i in 0..8 {
        assert!((grad.values()[i] - gw[i]).abs() < 1e-12);
    }
    for o in 0..2 {
        assert!((grad.values()[8 + o] - gb[o]).abs() < 1e-12);
    }
}
