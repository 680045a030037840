use budgetnet::init::InitScheme;
use budgetnet::ops::softmax_cross_entropy;
use budgetnet::optim::{sgd_step, Lookahead, Optimizer, OptimizerConfig};
use budgetnet::{Mode, Model, ResNetConfig, RngStream, Tensor};
use proptest::prelude::*;

#[test]
fn sgd_minimises_quadratic_bowl() {
    let mut x = [1.0f64, 1.0];
    let mut v = [0.0; 2];
    let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let mut steps = 0;
    while f(&x) >= 1e-6 {
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        sgd_step(&mut x, &g, &mut v, 0.1, 0.0, 0.0);
        steps += 1;
        assert!(steps <= 200, "f = {} after 200 steps", f(&x));
    }
}

fn toy_model(seed: u64) -> Model<f32> {
    let cfg = ResNetConfig::uniform(vec![1], vec![4], 3, 1).unwrap();
    Model::build(&cfg, &InitScheme::he(), &mut RngStream::new(seed)).unwrap()
}

fn toy_batch(seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = RngStream::new(seed ^ 0xABCD);
    let x = Tensor::from_fn(vec![4, 3, 32, 32], |_| rng.standard_normal() as f32);
    let labels = (0..4).map(|_| rng.below(10) as usize).collect();
    (x, labels)
}

fn train(seed: u64, config: &OptimizerConfig, lookahead: bool) -> Vec<Vec<f32>> {
    let mut model = toy_model(seed);
    let mut opt = Optimizer::new(config.clone(), model.params()).unwrap();
    let mut la = Lookahead::new(model.params(), 1, 1.0).unwrap();
    for step in 0..10 {
        let (x, labels) = toy_batch(seed + step);
        model.zero_grads();
        let logits = model.forward(&x, Mode::Train, None).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        model.backward(&grad).unwrap();
        opt.step(model.params_mut()).unwrap();
        if lookahead {
            la.step(model.params_mut());
        }
    }
    model.params().iter().map(|p| p.tensor.data().to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn lookahead_k1_alpha1_is_the_bare_optimizer(seed in 0u64..1000, adam in any::<bool>()) {
        let config = if adam {
            OptimizerConfig::adam(1e-3, 5e-4)
        } else {
            OptimizerConfig::sgd(0.1, 0.9, 5e-4)
        };
        let bare = train(seed, &config, false);
        let wrapped = train(seed, &config, true);
        for (a, b) in bare.iter().zip(&wrapped) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn missing_gradient_is_a_usage_error() {
    let mut model = toy_model(1);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.9, 0.0), model.params()).unwrap();
    model.params_mut().iter_mut().next().unwrap().tensor.clear_grad();
    let err = opt.step(model.params_mut()).unwrap_err();
    assert!(matches!(err, budgetnet::Error::Usage(_)), "{err}");
}
