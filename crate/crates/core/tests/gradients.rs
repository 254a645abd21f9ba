use arob_core::nn::{softmax_cross_entropy, BlockSpec, Mode, Network, NetworkSpec, ReluRule};
use arob_core::Tensor;
use rand::rngs::mock::StepRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [4, 4, 4],
        blocks: vec![BlockSpec {
            filters: 3,
            pool: 2,
        }],
        dense_hidden: 5,
        dropout: 0.0,
        ..Default::default()
    }
}

fn batch(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n, 1, 4, 4, 4], |_| rng.gen_range(0.0..1.0))
}

fn loss(net: &Network<f64>, x: &Tensor<f64>, targets: &[usize], mode: Mode) -> f64 {
    let (logits, _) = net.forward(x, mode, &mut StepRng::new(0, 0)).unwrap();
    softmax_cross_entropy(&logits, targets).unwrap().0
}

#[test]
fn parameter_gradients_match_central_differences_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = Network::<f64>::build(&small_spec(), 5).unwrap();
    assert!(net.param_count() < 5000);
    let x = batch(&mut rng, 3);
    let targets = [0, 1, 1];
    let (logits, trace) = net
        .forward(&x, Mode::Train, &mut StepRng::new(0, 0))
        .unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &targets).unwrap();
    let grads = net.backward_params(&trace, &g).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..grads.len() {
        for k in 0..grads[p].len() {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[k] -= h;
            let fd = (loss(&plus, &x, &targets, Mode::Train)
                - loss(&minus, &x, &targets, Mode::Train))
                / (2.0 * h);
            let an = grads[p].data()[k];
            worst = worst.max((fd - an).abs() / (fd.abs() + an.abs()).max(1e-4));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn input_gradients_match_central_differences_in_eval_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let net = Network::<f64>::build(&small_spec(), 6).unwrap();
    let x = batch(&mut rng, 1);
    let (_, trace) = net.forward_eval(&x).unwrap();
    for class in 0..2 {
        let g = net
            .backward_input(&trace, class, ReluRule::Standard)
            .unwrap();
        let h = 1e-6;
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[k] += h;
            let mut minus = x.clone();
            minus.data_mut()[k] -= h;
            let fd = (net.predict(&plus).unwrap().data()[class]
                - net.predict(&minus).unwrap().data()[class])
                / (2.0 * h);
            let an = g.data()[k];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "voxel {k}: fd {fd} analytic {an}"
            );
        }
    }
}

#[test]
fn backward_input_rejects_unknown_class() {
    let net: Network = Network::build(&small_spec(), 7).unwrap();
    let x = Tensor::zeros(&[1, 1, 4, 4, 4]);
    let (_, trace) = net.forward_eval(&x).unwrap();
    assert!(net.backward_input(&trace, 2, ReluRule::Standard).is_err());
}
