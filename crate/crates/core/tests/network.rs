use convctc::config::{InputGeometry, LayerConfig};
use convctc::ctc::{ctc_grad_log_probs, ctc_loss};
use convctc::layers::activation::ActivationKind;
use convctc::layers::Mode;
use convctc::optim::init_uniform;
use convctc::{Error, Network, NetworkConfig, Parameters, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> NetworkConfig {
    NetworkConfig::convolutional(
        InputGeometry {
            channels: 3,
            bands: 9,
        },
        5,
        &[4, 3],
        &[6],
        0.0,
        false,
    )
}

fn setup(config: NetworkConfig, seed: u64) -> (Network, Parameters<f64>) {
    let net = Network::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_uniform(net.param_specs(), &mut rng, -0.3, 0.3).unwrap();
    (net, params)
}

fn input(seed: u64, channels: usize, bands: usize, frames: usize) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[channels, bands, frames], |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn pointwise_linear_layer_reproduces_bias_softmax() {
    let config = NetworkConfig {
        input: InputGeometry {
            channels: 2,
            bands: 1,
        },
        alphabet_size: 4,
        layers: vec![LayerConfig::conv(4, 1, 1, ActivationKind::Linear)],
    };
    let net = Network::new(config).unwrap();
    let mut params = Parameters::<f64>::zeros(net.param_specs());
    let bias = [0.5, -1.0, 2.0, 0.0];
    let b = params
        .iter_mut()
        .find(|p| p.name.ends_with("bias"))
        .unwrap();
    b.tensor.data_mut().copy_from_slice(&bias);
    let lse = bias.iter().map(|v| v.exp()).sum::<f64>().ln();
    let lp = net.predict(&params, &input(1, 2, 1, 6)).unwrap();
    assert_eq!(lp.shape(), [4, 6]);
    for k in 0..4 {
        for t in 0..6 {
            assert!((lp.data()[k * 6 + t] - (bias[k] - lse)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let (net, params) = setup(small(), 2);
    let (lp, tape) = net
        .forward(&params, &input(3, 3, 9, 7), Mode::Eval)
        .unwrap();
    let grads = net
        .backward(&params, &tape, &Tensor::zeros(lp.shape()))
        .unwrap();
    assert!(grads
        .iter()
        .all(|p| p.tensor.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn repeated_item_doubles_the_gradient() {
    let (net, params) = setup(small(), 4);
    let x = input(5, 3, 9, 8);
    let (lp, tape) = net.forward(&params, &x, Mode::Eval).unwrap();
    let out = ctc_loss(&lp, &[1, 2, 2, 4]).unwrap();
    let g = ctc_grad_log_probs(&out.lattice, &lp).unwrap();
    let single = net.backward(&params, &tape, &g).unwrap();
    let mut pair = params.zeros_like();
    for _ in 0..2 {
        net.backward_into(&params, &tape, &g, &mut pair).unwrap();
    }
    let mut doubled = single.clone();
    doubled.scale(2.0);
    assert_eq!(pair, doubled);
}

#[test]
fn time_extent_is_preserved() {
    let (net, params) = setup(small(), 6);
    for frames in [1, 2, 5, 17, 64] {
        let shapes = net.trace_shapes(&params, &input(7, 3, 9, frames)).unwrap();
        assert!(
            shapes.iter().all(|s| *s.last().unwrap() == frames),
            "{shapes:?}"
        );
        assert_eq!(shapes.last().unwrap(), &vec![5, frames]);
    }
}

#[test]
fn geometry_errors_name_the_layer() {
    let config = NetworkConfig {
        input: InputGeometry {
            channels: 1,
            bands: 2,
        },
        alphabet_size: 3,
        layers: vec![
            LayerConfig::conv(2, 1, 1, ActivationKind::Relu),
            LayerConfig::pool(3, 3),
            LayerConfig::dense(3, ActivationKind::Linear),
        ],
    };
    match Network::new(config) {
        Err(Error::Layer { layer, .. }) => assert_eq!(layer, 1),
        other => panic!("expected a layer error, got {other:?}"),
    }

    let (net, params) = setup(small(), 8);
    let err = net.predict(&params, &input(9, 3, 8, 4)).unwrap_err();
    assert!(err.to_string().contains("9 bands"), "{err}");
}

#[test]
fn shipped_default_config_is_standard() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.json");
    let config = NetworkConfig::load(path).unwrap();
    assert_eq!(config, NetworkConfig::standard());
    let net = Network::new(config).unwrap();
    assert_eq!(net.alphabet_size(), 62);
}
