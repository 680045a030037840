use std::cell::RefCell;
use std::path::Path;
use std::rc::Rc;

use budgetnet::data::{channel_stats, synthetic, Dataset, Split};
use budgetnet::train::{
    evaluate, read_metrics, Checkpoint, StepEvent, StepObserver, TrainConfig, Trainer, BEST_CHECKPOINT,
    GRAD_NORMS_FILE, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
use budgetnet::{Error, Model, ResNetConfig};

const TINY: &str = "\
residual_blocks = [1, 1]
channels = [8, 16]
squeeze_and_excitation = true
se_ratio = 4
gradient_clip = 0.1
lookahead = true
learning_rate = 0.05
batch_size = 32
num_workers = 1
epochs = 2
seed = 42
timing = false
";

/// `TINY` with the keys in `extra` replaced.
fn tiny(extra: &str) -> TrainConfig {
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let base: String = TINY
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    TrainConfig::parse(&format!("{base}{extra}")).unwrap()
}

fn data(train: usize, test: usize) -> (Dataset, Dataset) {
    (synthetic(train, Split::Train, 7), synthetic(test, Split::Test, 7))
}

#[derive(Default)]
struct Recorder(Rc<RefCell<Vec<(usize, StepEvent)>>>);

impl StepObserver for Recorder {
    fn on_event(&mut self, _epoch: usize, step: usize, event: &StepEvent) {
        self.0.borrow_mut().push((step, event.clone()));
    }
}

fn record(trainer: &mut Trainer) -> Rc<RefCell<Vec<(usize, StepEvent)>>> {
    let log = Rc::new(RefCell::new(Vec::new()));
    trainer.set_observer(Box::new(Recorder(log.clone())));
    log
}

#[test]
fn subset_epoch_reduces_training_loss() {
    let (train, _) = data(512, 0);
    let mut trainer = Trainer::new(tiny("epochs = 1\nlookahead = false\n"), &train).unwrap();
    let log = record(&mut trainer);
    trainer.train_epoch(&train, None).unwrap();
    let losses: Vec<f64> = log
        .borrow()
        .iter()
        .filter_map(|(_, e)| match e {
            StepEvent::Loss(l) => Some(*l),
            _ => None,
        })
        .collect();
    assert_eq!(losses.len(), 16);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(mean(&losses[12..]) < mean(&losses[..4]), "{losses:?}");
}

#[test]
fn untrained_model_is_at_chance() {
    let (train, test) = data(200, 1000);
    let mut trainer = Trainer::new(tiny(""), &train).unwrap();
    let stats = *trainer.stats();
    let (_, acc) = evaluate(trainer.model_mut(), &test, &stats, 128).unwrap();
    assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
}

fn zeroed_tiny() -> Model<f32> {
    Model::build_zeroed(&ResNetConfig::uniform(vec![1], vec![4], 3, 1).unwrap()).unwrap()
}

#[test]
fn uniform_logits_give_ln_10() {
    let (_, test) = data(0, 50);
    let stats = channel_stats(&test).unwrap();
    let (loss, _) = evaluate(&mut zeroed_tiny(), &test, &stats, 16).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-6, "{loss}");
}

#[test]
fn constant_class_three_model_scores_one() {
    let base = synthetic(30, Split::Test, 1);
    let all_three = Dataset::new(base.images().to_vec(), vec![3; 30], Split::Test).unwrap();
    let mut model = zeroed_tiny();
    let bias = model.params_mut().find_mut("classifier.bias").unwrap();
    bias.tensor.data_mut()[3] = 1.0;
    let stats = channel_stats(&all_three).unwrap();
    let first = evaluate(&mut model, &all_three, &stats, 8).unwrap();
    assert_eq!(first.1, 1.0);
    let second = evaluate(&mut model, &all_three, &stats, 8).unwrap();
    assert_eq!(first.0.to_bits(), second.0.to_bits());
}

#[test]
fn step_phases_run_in_order() {
    let (train, _) = data(96, 0);
    let mut trainer = Trainer::new(tiny("lookahead_k = 2\n"), &train).unwrap();
    let log = record(&mut trainer);
    trainer.train_epoch(&train, None).unwrap();
    let events = log.borrow();
    assert_eq!(events.len(), 3 * 6);
    for (step, chunk) in events.chunks(6).enumerate() {
        assert!(chunk.iter().all(|(s, _)| *s == step));
        assert!(matches!(chunk[0].1, StepEvent::Forward));
        assert!(matches!(chunk[1].1, StepEvent::Loss(_)));
        assert!(matches!(chunk[2].1, StepEvent::Backward));
        assert!(matches!(chunk[3].1, StepEvent::Clip { .. }));
        assert!(matches!(chunk[4].1, StepEvent::OptimizerStep { .. }));
        assert_eq!(chunk[5].1, StepEvent::Lookahead { synced: step % 2 == 1 });
    }
}

fn run(dir: &Path, extra: &str, train: &Dataset, test: &Dataset) -> Vec<u8> {
    let mut trainer = Trainer::new(tiny(extra), train).unwrap();
    trainer.fit(train, test, dir).unwrap();
    std::fs::read(dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn fixed_seed_gives_identical_metrics() {
    let (train, test) = data(128, 64);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path(), "", &train, &test);
    assert_eq!(first, run(b.path(), "", &train, &test));
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(text.lines().count(), 3);
    let rows = read_metrics(&a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.test_acc) && r.train_loss >= 0.0));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (train, test) = data(128, 64);
    for extra in ["", "optimizer = adam\nlearning_rate = 0.001\ndropout = 0.2\n", "lr_scheduler = OneCycleLR\n"] {
        let full = tempfile::tempdir().unwrap();
        let expected = run(full.path(), extra, &train, &test);

        let split = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(tiny(extra), &train).unwrap();
        first.fit_until(&train, &test, split.path(), 1).unwrap();
        drop(first);
        let ckpt = Checkpoint::load(&split.path().join(LAST_CHECKPOINT)).unwrap();
        assert_eq!(ckpt.state.epoch, 1);
        let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
        resumed.fit(&train, &test, split.path()).unwrap();
        assert_eq!(std::fs::read(split.path().join(METRICS_FILE)).unwrap(), expected, "{extra}");
        assert_eq!(
            std::fs::read(split.path().join(GRAD_NORMS_FILE)).unwrap(),
            std::fs::read(full.path().join(GRAD_NORMS_FILE)).unwrap()
        );
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (train, test) = data(64, 32);
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(tiny("epochs = 1\noptimizer = adam\nlearning_rate = 0.001\n"), &train).unwrap();
    trainer.fit(&train, &test, dir.path()).unwrap();
    let path = dir.path().join(LAST_CHECKPOINT);
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, trainer.checkpoint());
    assert_eq!(loaded.to_bytes().unwrap(), bytes);
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
    assert!(loaded.tensor("param.classifier.weight").is_some());
    assert!(loaded.tensor("optim.second.classifier.weight").is_some());
    assert!(loaded.tensor("lookahead.slow.stem.conv.weight").is_some());
    assert!(loaded.tensor("bn.stem.bn.running_var").is_some());

    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    let mut bad = bytes;
    bad[4] = 99;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
}

#[test]
fn clipped_norms_never_exceed_threshold() {
    let (train, test) = data(128, 32);
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), "epochs = 1\n", &train, &test);
    let text = std::fs::read_to_string(dir.path().join(GRAD_NORMS_FILE)).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[2], f[3])
        })
        .collect();
    assert_eq!(rows.len(), 4);
    for (pre, post) in rows {
        assert!(post <= 0.1 + 1e-6, "pre {pre} post {post}");
        if pre < 0.1 {
            assert_eq!(pre, post);
        }
    }
}

#[test]
fn over_budget_model_is_rejected() {
    let (train, _) = data(16, 0);
    let cfg = TrainConfig::parse(
        "residual_blocks = [2, 2, 2, 2]\nchannels = [64, 128, 256, 512]\nsqueeze_and_excitation = false\n",
    )
    .unwrap();
    let err = Trainer::new(cfg, &train).err().expect("over budget").to_string();
    assert!(err.contains("budget"), "{err}");
}

#[test]
fn diverging_run_aborts_with_numeric_error() {
    let (train, _) = data(64, 0);
    let cfg = tiny("gradient_clip = none\nlookahead = false\nlearning_rate = 1e30\nmomentum = 0\n");
    let mut trainer = Trainer::new(cfg, &train).unwrap();
    let err = (0..5)
        .find_map(|_| trainer.train_epoch(&train, None).err())
        .expect("training should diverge");
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains("step"), "{err}");
}
