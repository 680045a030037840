use budgetnet::model::{avgpool_kernel, count_params, Model, ResNetConfig, SePlacement};
use budgetnet::{InitScheme, Mode, RngStream, Tensor};
use proptest::prelude::*;

/// Enumeration oracle: build the network and sum element counts of every
/// parameter tensor.
fn enumerate(cfg: &ResNetConfig) -> usize {
    Model::<f32>::build_zeroed(cfg)
        .unwrap()
        .params()
        .iter()
        .map(|p| p.tensor.numel())
        .sum()
}

fn random_images(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = RngStream::new(seed);
    Tensor::from_fn([n, 3, 32, 32], |_| rng.standard_normal() as f32)
}

#[test]
fn reference_counts() {
    let r18 = ResNetConfig::resnet18();
    assert_eq!(count_params(&r18).unwrap(), 11_173_962);
    assert_eq!(enumerate(&r18), 11_173_962);

    let mut budget = ResNetConfig::budget_model();
    budget.se_enabled = false;
    assert_eq!(enumerate(&budget), 4_697_162);
    assert_eq!(count_params(&budget).unwrap(), 4_697_162);

    budget.se_enabled = true;
    let with_se = count_params(&budget).unwrap();
    assert_eq!(with_se, enumerate(&budget));
    assert_eq!(with_se, 4_733_610);
    assert!(with_se < 5_000_000);

    // A single squeeze-excitation unit on the first 64-channel block adds
    // exactly 64*4 + 4 + 4*64 + 64 = 580 parameters.
    budget.se_placement = SePlacement::FirstBlock;
    assert_eq!(count_params(&budget).unwrap(), 4_697_742);
    assert_eq!(enumerate(&budget), 4_697_742);
}

#[test]
fn minimal_config_has_identity_shortcut_only() {
    let cfg = ResNetConfig::uniform(vec![1], vec![4], 3, 1).unwrap();
    let m = Model::<f32>::build_zeroed(&cfg).unwrap();
    assert_eq!(m.projection_count(), 0);
    assert_eq!(m.total_params(), 470);
    assert_eq!(enumerate(&cfg), 470);
}

#[test]
fn projections_only_where_shape_changes() {
    let cfg = ResNetConfig::resnet18();
    let m = Model::<f32>::build_zeroed(&cfg).unwrap();
    assert_eq!(m.projection_count(), 3);
    let names: Vec<_> = m.params().iter().map(|p| p.name.as_str()).collect();
    assert!(names.contains(&"layers.1.0.shortcut.conv.weight"));
    assert!(!names.contains(&"layers.0.0.shortcut.conv.weight"));
}

#[test]
fn parameter_order_is_stem_blocks_classifier() {
    let mut cfg = ResNetConfig::uniform(vec![1, 1], vec![4, 8], 3, 1).unwrap();
    cfg.se_enabled = true;
    cfg.se_ratio = 2;
    let m = Model::<f32>::build_zeroed(&cfg).unwrap();
    let names: Vec<_> = m.params().iter().map(|p| p.name.clone()).collect();
    let block1 = [
        "conv1.weight",
        "bn1.gamma",
        "bn1.beta",
        "conv2.weight",
        "bn2.gamma",
        "bn2.beta",
        "se.fc1.weight",
        "se.fc1.bias",
        "se.fc2.weight",
        "se.fc2.bias",
        "shortcut.conv.weight",
        "shortcut.bn.gamma",
        "shortcut.bn.beta",
    ];
    let mut expected = vec!["stem.conv.weight".to_string(), "stem.bn.gamma".into(), "stem.bn.beta".into()];
    expected.extend(block1[..10].iter().map(|s| format!("layers.0.0.{s}")));
    expected.extend(block1.iter().map(|s| format!("layers.1.0.{s}")));
    expected.extend(["classifier.weight".to_string(), "classifier.bias".into()]);
    assert_eq!(names, expected);
}

#[test]
fn budget_model_and_resnet18_forward_to_ten_logits() {
    for cfg in [ResNetConfig::budget_model(), ResNetConfig::resnet18()] {
        let mut m = Model::<f32>::build(&cfg, &InitScheme::he(), &mut RngStream::new(0)).unwrap();
        let y = m.forward(&random_images(1, 1), Mode::Eval, None).unwrap();
        assert_eq!(y.shape(), &[1, 10]);
        assert!(y.is_finite());
    }
}

#[test]
fn shape_trace_halves_resolution_and_doubles_channels() {
    let n = 4;
    let cfg = ResNetConfig::uniform(vec![1, 1, 1, 1], vec![n, 2 * n, 4 * n, 8 * n], 3, 1).unwrap();
    let mut m = Model::<f32>::build(&cfg, &InitScheme::he(), &mut RngStream::new(0)).unwrap();
    let trace = m.shape_trace(&random_images(1, 2)).unwrap();
    let expected: Vec<Vec<usize>> = vec![
        vec![1, n, 32, 32],
        vec![1, n, 32, 32],
        vec![1, 2 * n, 16, 16],
        vec![1, 4 * n, 8, 8],
        vec![1, 8 * n, 4, 4],
        vec![1, 8 * n, 1, 1],
        vec![1, 8 * n],
        vec![1, 10],
    ];
    assert_eq!(trace, expected);
}

#[test]
fn zero_weights_give_constant_logits() {
    let mut cfg = ResNetConfig::uniform(vec![1, 2], vec![4, 8], 3, 3).unwrap();
    cfg.se_enabled = true;
    cfg.se_ratio = 4;
    let mut m = Model::<f32>::build_zeroed(&cfg).unwrap();
    let a = m.forward(&random_images(2, 3), Mode::Eval, None).unwrap();
    let b = m.forward(&random_images(3, 4), Mode::Eval, None).unwrap();
    assert!(a.data().iter().chain(b.data()).all(|&v| v == a.data()[0]));
}

#[test]
fn build_is_deterministic() {
    let cfg = ResNetConfig::uniform(vec![2, 1], vec![8, 16], 3, 1).unwrap();
    let a = Model::<f32>::build(&cfg, &InitScheme::he(), &mut RngStream::new(5)).unwrap();
    let b = Model::<f32>::build(&cfg, &InitScheme::he(), &mut RngStream::new(5)).unwrap();
    for (p, q) in a.params().iter().zip(b.params().iter()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.tensor), bits(&q.tensor));
    }
}

#[test]
fn invalid_config_names_field() {
    let mut cfg = ResNetConfig::budget_model();
    cfg.skip_kernels = vec![1, 2, 1];
    let err = Model::<f32>::build_zeroed(&cfg).unwrap_err().to_string();
    assert!(err.contains("skip_kernels"), "{err}");
}

#[test]
fn uniform_grid_closed_form_matches_enumeration() {
    for n in 1..=4usize {
        for b in 1..=3 {
            for c in [4, 8, 16] {
                for f in [1, 3, 5] {
                    for k in [1, 3] {
                        let cfg = ResNetConfig::uniform(vec![b; n], vec![c; n], f, k).unwrap();
                        assert_eq!(count_params(&cfg).unwrap(), enumerate(&cfg), "{cfg:?}");
                        assert_eq!(cfg.pool_kernel, avgpool_kernel(n).unwrap());
                    }
                }
            }
        }
    }
}

fn layer_lists() -> impl Strategy<Value = ResNetConfig> {
    (1usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(1usize..=3, n),
                prop::collection::vec(prop::sample::select(vec![4usize, 8, 16]), n),
                prop::collection::vec(prop::sample::select(vec![1usize, 3, 5]), n),
                prop::collection::vec(prop::sample::select(vec![1usize, 3]), n),
                any::<bool>(),
            )
        })
        .prop_map(|(blocks, channels, f, k, se)| {
            let mut cfg = ResNetConfig::uniform(blocks, channels, 3, 1).unwrap();
            cfg.conv_kernels = f;
            cfg.skip_kernels = k;
            cfg.se_enabled = se;
            cfg.se_ratio = 4;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn closed_form_matches_enumeration(cfg in layer_lists()) {
        prop_assert_eq!(count_params(&cfg).unwrap(), enumerate(&cfg));
    }
}

#[test]
fn se_bypass_matches_plain_block_bitwise() {
    let base = ResNetConfig::uniform(vec![2, 1], vec![8, 16], 3, 1).unwrap();
    let mut with_se = base.clone();
    with_se.se_enabled = true;
    with_se.se_ratio = 4;

    let plain = Model::<f32>::build(&base, &InitScheme::he(), &mut RngStream::new(9)).unwrap();
    let mut gated = Model::<f32>::build_zeroed(&with_se).unwrap();
    // copy the shared weights across by name; SE weights stay arbitrary
    for p in plain.params().iter() {
        let q = gated.params_mut().find_mut(&p.name).unwrap();
        q.tensor.data_mut().copy_from_slice(p.tensor.data());
    }
    for q in gated.params_mut().iter_mut().filter(|q| q.name.contains(".se.")) {
        q.tensor.data_mut().iter_mut().for_each(|v| *v = 0.3);
    }
    gated.set_se_bypass(true);
    let mut plain = plain;

    let x = random_images(4, 10);
    let a = plain.forward(&x, Mode::Train, None).unwrap();
    let b = gated.forward(&x, Mode::Train, None).unwrap();
    assert_eq!(a, b);
    let g = Tensor::from_fn([4, 10], |i| (i as f32 * 0.37).sin());
    let ga = plain.backward(&g).unwrap();
    let gb = gated.backward(&g).unwrap();
    assert_eq!(ga, gb);
    for p in plain.params().iter() {
        let q = gated.params().find(&p.name).unwrap();
        assert_eq!(p.tensor.grad(), q.tensor.grad(), "{}", p.name);
    }
}
