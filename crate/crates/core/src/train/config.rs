//! Flat `key = value` run configuration.
//!
//! Keys follow the rows of the usual hyperparameter table (`residual_blocks`,
//! `gradient_clip`, `lr_scheduler`, ...). Lists are written in brackets,
//! `#` starts a comment, and any key left out keeps the budget-model
//! default. [`TrainConfig::to_text`] writes every key, and parsing its output
//! gives back an identical config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::init::{InitKind, InitScheme};
use crate::model::{avgpool_kernel, ResNetConfig, SePlacement};
use crate::optim::{
    LrSchedule, OptimizerConfig, OptimizerKind, Schedule, DEFAULT_LOOKAHEAD_ALPHA, DEFAULT_LOOKAHEAD_K,
};

pub const PARAM_BUDGET: usize = 5_000_000;
pub const DEFAULT_EPOCHS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulerKind {
    Constant,
    Cosine,
    Step,
    MultiStep,
    Exponential,
    OneCycle,
    CosineWarmRestarts,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Constant => "constant",
            SchedulerKind::Cosine => "CosineAnnealingLR",
            SchedulerKind::Step => "StepLR",
            SchedulerKind::MultiStep => "MultiStepLR",
            SchedulerKind::Exponential => "ExponentialLR",
            SchedulerKind::OneCycle => "OneCycleLR",
            SchedulerKind::CosineWarmRestarts => "CosineAnnealingWarmRestarts",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "constant" | "none" => SchedulerKind::Constant,
            "cosineannealinglr" | "cosine" => SchedulerKind::Cosine,
            "steplr" | "step" => SchedulerKind::Step,
            "multisteplr" | "multistep" => SchedulerKind::MultiStep,
            "exponentiallr" | "exponential" => SchedulerKind::Exponential,
            "onecyclelr" | "onecycle" => SchedulerKind::OneCycle,
            "cosineannealingwarmrestarts" | "cosine_warm_restarts" => SchedulerKind::CosineWarmRestarts,
            _ => return Err(Error::config(format!("lr_scheduler: unknown scheduler {s:?}"))),
        })
    }
}

/// Scheduler choice plus every kind-specific knob. Horizons left unset are
/// filled in from the run length when the schedule is resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerSpec {
    pub kind: SchedulerKind,
    /// Cosine period in epochs; defaults to `epochs`.
    pub t_max: Option<usize>,
    pub eta_min: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub milestones: Vec<usize>,
    /// One-cycle peak; defaults to `learning_rate`.
    pub max_lr: Option<f64>,
    pub pct_start: f64,
    pub t_0: usize,
    pub t_mult: usize,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        Self {
            kind: SchedulerKind::Cosine,
            t_max: None,
            eta_min: 0.0,
            step_size: 30,
            gamma: 0.1,
            milestones: Vec::new(),
            max_lr: None,
            pct_start: 0.3,
            t_0: 10,
            t_mult: 1,
        }
    }
}

impl SchedulerSpec {
    pub fn resolve(&self, base_lr: f64, epochs: usize, steps_per_epoch: usize) -> Result<LrSchedule> {
        let schedule = match self.kind {
            SchedulerKind::Constant => Schedule::Constant,
            SchedulerKind::Cosine => Schedule::Cosine {
                t_max: self.t_max.unwrap_or(epochs),
                eta_min: self.eta_min,
            },
            SchedulerKind::Step => Schedule::Step {
                step_size: self.step_size,
                gamma: self.gamma,
            },
            SchedulerKind::MultiStep => Schedule::MultiStep {
                milestones: self.milestones.clone(),
                gamma: self.gamma,
            },
            SchedulerKind::Exponential => Schedule::Exponential { gamma: self.gamma },
            SchedulerKind::OneCycle => Schedule::OneCycle {
                max_lr: self.max_lr.unwrap_or(base_lr),
                total_steps: epochs * steps_per_epoch,
                pct_start: self.pct_start,
            },
            SchedulerKind::CosineWarmRestarts => Schedule::CosineWarmRestarts {
                t_0: self.t_0,
                t_mult: self.t_mult,
                eta_min: self.eta_min,
            },
        };
        LrSchedule::new(base_lr, schedule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LookaheadSpec {
    pub enabled: bool,
    pub k: u64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ResNetConfig,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerSpec,
    pub lookahead: LookaheadSpec,
    pub grad_clip: Option<f64>,
    pub augment: bool,
    pub normalize: bool,
    pub init: InitScheme,
    pub epochs: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Upper bound (exclusive) on trainable parameters, checked before training.
    pub param_budget: Option<usize>,
    /// When false, `wall_seconds` is written as 0 so metrics files from
    /// identical runs compare equal byte for byte.
    pub timing: bool,
}

impl Default for TrainConfig {
    /// The budget model with its published training settings.
    fn default() -> Self {
        Self {
            model: ResNetConfig::budget_model(),
            optimizer: OptimizerConfig::sgd(0.1, crate::optim::DEFAULT_MOMENTUM, 0.0005),
            scheduler: SchedulerSpec::default(),
            lookahead: LookaheadSpec {
                enabled: true,
                k: DEFAULT_LOOKAHEAD_K,
                alpha: DEFAULT_LOOKAHEAD_ALPHA,
            },
            grad_clip: Some(0.1),
            augment: true,
            normalize: true,
            init: InitScheme::he(),
            epochs: DEFAULT_EPOCHS,
            batch_size: 128,
            workers: 16,
            seed: 0,
            data_dir: None,
            output_dir: PathBuf::from("runs/budgetnet"),
            param_budget: Some(PARAM_BUDGET),
            timing: true,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::config(format!("{key}: expected {what}, got {value:?}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, what))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn is_none(v: &str) -> bool {
    v.eq_ignore_ascii_case("none")
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| bad(key, v, "a bracketed list"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| parse_num(key, s.trim(), "a list of numbers"))
        .collect()
}

fn list<T: std::fmt::Display>(xs: &[T]) -> String {
    let items: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn opt<T: std::fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
        }
        let mut c = TrainConfig::default();
        let mut take = |k: &str| entries.remove(k);

        // Architecture lists decide N unless residual_layers says otherwise.
        if let Some(v) = take("residual_blocks") {
            c.model.blocks = parse_list("residual_blocks", &v)?;
        }
        if let Some(v) = take("channels") {
            c.model.channels = parse_list("channels", &v)?;
        }
        let n = match take("residual_layers") {
            Some(v) => parse_num("residual_layers", &v, "an integer")?,
            None => c.model.blocks.len(),
        };
        c.model.n_layers = n;
        c.model.conv_kernels = match take("conv_kernel_sizes") {
            Some(v) => parse_list("conv_kernel_sizes", &v)?,
            None => vec![3; n],
        };
        c.model.skip_kernels = match take("shortcut_kernel_sizes") {
            Some(v) => parse_list("shortcut_kernel_sizes", &v)?,
            None => vec![1; n],
        };
        c.model.pool_kernel = match take("avg_pool_kernel_size") {
            Some(v) => parse_num("avg_pool_kernel_size", &v, "an integer")?,
            None => avgpool_kernel(n)?,
        };
        if let Some(v) = take("batch_normalization") {
            if !parse_bool("batch_normalization", &v)? {
                return Err(Error::config("batch_normalization: networks without batch norm are not supported"));
            }
        }
        if let Some(v) = take("dropout") {
            c.model.dropout_p = parse_num("dropout", &v, "a probability")?;
        }
        if let Some(v) = take("squeeze_and_excitation") {
            c.model.se_enabled = parse_bool("squeeze_and_excitation", &v)?;
        }
        if let Some(v) = take("se_ratio") {
            c.model.se_ratio = parse_num("se_ratio", &v, "an integer")?;
        }
        if let Some(v) = take("se_placement") {
            c.model.se_placement = SePlacement::parse(&v)?;
        }
        if let Some(v) = take("num_classes") {
            c.model.num_classes = parse_num("num_classes", &v, "an integer")?;
        }
        if let Some(v) = take("param_budget") {
            c.param_budget = if is_none(&v) {
                None
            } else {
                Some(parse_num("param_budget", &v, "an integer or none")?)
            };
        }

        if let Some(v) = take("gradient_clip") {
            c.grad_clip = if is_none(&v) {
                None
            } else {
                Some(parse_num("gradient_clip", &v, "a number or none")?)
            };
        }
        if let Some(v) = take("data_augmentation") {
            c.augment = parse_bool("data_augmentation", &v)?;
        }
        if let Some(v) = take("data_normalization") {
            c.normalize = parse_bool("data_normalization", &v)?;
        }
        if let Some(v) = take("lookahead") {
            c.lookahead.enabled = parse_bool("lookahead", &v)?;
        }
        if let Some(v) = take("lookahead_k") {
            c.lookahead.k = parse_num("lookahead_k", &v, "an integer")?;
        }
        if let Some(v) = take("lookahead_alpha") {
            c.lookahead.alpha = parse_num("lookahead_alpha", &v, "a number")?;
        }
        if let Some(v) = take("init") {
            c.init.kind = InitKind::parse(&v)?;
        }
        if let Some(v) = take("normal_std") {
            c.init.normal_std = parse_num("normal_std", &v, "a number")?;
        }

        if let Some(v) = take("optimizer") {
            c.optimizer.kind = OptimizerKind::parse(&v)?;
        }
        if let Some(v) = take("learning_rate") {
            c.optimizer.lr = parse_num("learning_rate", &v, "a number")?;
        }
        if let Some(v) = take("momentum") {
            c.optimizer.momentum = parse_num("momentum", &v, "a number")?;
        }
        if let Some(v) = take("adam_betas") {
            match parse_list::<f64>("adam_betas", &v)?[..] {
                [b1, b2] => c.optimizer.betas = (b1, b2),
                _ => return Err(bad("adam_betas", &v, "two numbers")),
            }
        }
        if let Some(v) = take("adam_eps") {
            c.optimizer.eps = parse_num("adam_eps", &v, "a number")?;
        }
        if let Some(v) = take("weight_decay") {
            c.optimizer.weight_decay = parse_num("weight_decay", &v, "a number")?;
        }

        let s = &mut c.scheduler;
        if let Some(v) = take("lr_scheduler") {
            s.kind = SchedulerKind::parse(&v)?;
        }
        if let Some(v) = take("t_max") {
            s.t_max = if is_none(&v) {
                None
            } else {
                Some(parse_num("t_max", &v, "an integer or none")?)
            };
        }
        if let Some(v) = take("eta_min") {
            s.eta_min = parse_num("eta_min", &v, "a number")?;
        }
        if let Some(v) = take("step_size") {
            s.step_size = parse_num("step_size", &v, "an integer")?;
        }
        if let Some(v) = take("gamma") {
            s.gamma = parse_num("gamma", &v, "a number")?;
        }
        if let Some(v) = take("milestones") {
            s.milestones = parse_list("milestones", &v)?;
        }
        if let Some(v) = take("max_lr") {
            s.max_lr = if is_none(&v) {
                None
            } else {
                Some(parse_num("max_lr", &v, "a number or none")?)
            };
        }
        if let Some(v) = take("pct_start") {
            s.pct_start = parse_num("pct_start", &v, "a number")?;
        }
        if let Some(v) = take("t_0") {
            s.t_0 = parse_num("t_0", &v, "an integer")?;
        }
        if let Some(v) = take("t_mult") {
            s.t_mult = parse_num("t_mult", &v, "an integer")?;
        }

        if let Some(v) = take("epochs") {
            c.epochs = parse_num("epochs", &v, "an integer")?;
        }
        if let Some(v) = take("batch_size") {
            c.batch_size = parse_num("batch_size", &v, "an integer")?;
        }
        if let Some(v) = take("num_workers") {
            c.workers = parse_num("num_workers", &v, "an integer")?;
        }
        if let Some(v) = take("seed") {
            c.seed = parse_num("seed", &v, "an unsigned integer")?;
        }
        if let Some(v) = take("data_dir") {
            c.data_dir = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        if let Some(v) = take("output_dir") {
            c.output_dir = PathBuf::from(v);
        }
        if let Some(v) = take("timing") {
            c.timing = parse_bool("timing", &v)?;
        }

        if let Some(key) = entries.keys().next() {
            return Err(Error::config(format!("unknown key {key}")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!("gradient_clip must be > 0, got {c}")));
            }
        }
        if self.lookahead.enabled && (self.lookahead.k == 0 || !(self.lookahead.alpha > 0.0 && self.lookahead.alpha <= 1.0)) {
            return Err(Error::config("lookahead_k must be >= 1 and lookahead_alpha in (0, 1]"));
        }
        if self.init.kind == InitKind::Normal && !(self.init.normal_std > 0.0) {
            return Err(Error::config("normal_std must be > 0"));
        }
        // One step per epoch is enough to check every schedule's parameters.
        self.scheduler.resolve(self.optimizer.lr, self.epochs, 1).map(|_| ())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let o = &self.optimizer;
        let s = &self.scheduler;
        let mut t = String::new();
        let mut kv = |k: &str, v: String| writeln!(t, "{k} = {v}").unwrap();
        kv("residual_layers", m.n_layers.to_string());
        kv("residual_blocks", list(&m.blocks));
        kv("channels", list(&m.channels));
        kv("conv_kernel_sizes", list(&m.conv_kernels));
        kv("shortcut_kernel_sizes", list(&m.skip_kernels));
        kv("avg_pool_kernel_size", m.pool_kernel.to_string());
        kv("batch_normalization", "true".into());
        kv("dropout", m.dropout_p.to_string());
        kv("squeeze_and_excitation", m.se_enabled.to_string());
        kv("se_ratio", m.se_ratio.to_string());
        kv("se_placement", m.se_placement.as_str().into());
        kv("num_classes", m.num_classes.to_string());
        kv("param_budget", opt(&self.param_budget));
        kv("gradient_clip", opt(&self.grad_clip));
        kv("data_augmentation", self.augment.to_string());
        kv("data_normalization", self.normalize.to_string());
        kv("lookahead", self.lookahead.enabled.to_string());
        kv("lookahead_k", self.lookahead.k.to_string());
        kv("lookahead_alpha", self.lookahead.alpha.to_string());
        kv("init", self.init.kind.as_str().into());
        kv("normal_std", self.init.normal_std.to_string());
        kv("optimizer", o.kind.as_str().into());
        kv("learning_rate", o.lr.to_string());
        kv("momentum", o.momentum.to_string());
        kv("adam_betas", list(&[o.betas.0, o.betas.1]));
        kv("adam_eps", o.eps.to_string());
        kv("weight_decay", o.weight_decay.to_string());
        kv("lr_scheduler", s.kind.as_str().into());
        kv("t_max", opt(&s.t_max));
        kv("eta_min", s.eta_min.to_string());
        kv("step_size", s.step_size.to_string());
        kv("gamma", s.gamma.to_string());
        kv("milestones", list(&s.milestones));
        kv("max_lr", opt(&s.max_lr));
        kv("pct_start", s.pct_start.to_string());
        kv("t_0", s.t_0.to_string());
        kv("t_mult", s.t_mult.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("num_workers", self.workers.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "data_dir",
            self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("output_dir", self.output_dir.display().to_string());
        kv("timing", self.timing.to_string());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = TrainConfig::default();
        let text = c.to_text();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn odd_floats_round_trip() {
        let mut c = TrainConfig::default();
        c.optimizer.lr = 0.1 + 0.2;
        c.optimizer.eps = 1e-8;
        c.grad_clip = Some(1.0 / 3.0);
        c.scheduler.max_lr = Some(7e-300);
        c.data_dir = Some(PathBuf::from("/data/cifar-10-batches-bin"));
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn table_style_file() {
        let text = "\
# ResNet18 baseline
residual_layers = 4
residual_blocks = [2, 2, 2, 2]
conv_kernel_sizes = [3, 3, 3, 3]
shortcut_kernel_sizes = [1, 1, 1, 1]
channels = [64, 128, 256, 512]
avg_pool_kernel_size = 4
batch_normalization = True
dropout = 0
squeeze_and_excitation = False
gradient_clip = None
data_augmentation = False
data_normalization = False
lookahead = False
optimizer = SGD
learning_rate = 0.1   # base rate
lr_scheduler = CosineAnnealingLR
weight_decay = 0.0005
batch_size = 128
num_workers = 16
param_budget = none
";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.model, ResNetConfig::resnet18());
        assert_eq!(c.grad_clip, None);
        assert!(!c.lookahead.enabled && !c.augment && !c.normalize);
        assert_eq!(c.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(c.epochs, DEFAULT_EPOCHS);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("channels = [64, 128]", "channels"),
            ("epochs = 0", "epochs"),
            ("gradient_clip = -1", "gradient_clip"),
            ("learning_rate = fast", "learning_rate"),
            ("bogus = 1", "bogus"),
            ("avg_pool_kernel_size = 4", "pool_kernel"),
            ("lr_scheduler = LambdaLR", "lr_scheduler"),
        ] {
            let err = TrainConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(key), "{text}: {err}");
        }
        assert!(TrainConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(TrainConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn cosine_horizon_follows_epochs() {
        let mut c = TrainConfig::default();
        c.epochs = 5;
        let s = c.scheduler.resolve(c.optimizer.lr, c.epochs, 10).unwrap();
        assert_eq!(s.schedule, Schedule::Cosine { t_max: 5, eta_min: 0.0 });
    }
}
