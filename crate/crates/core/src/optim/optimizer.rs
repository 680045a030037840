use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("optimizer: unknown kind `{other}` (expected sgd or adam)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD only.
    pub momentum: f64,
    /// Adam only.
    pub betas: (f64, f64),
    pub eps: f64,
    /// L2 penalty added to the gradient before the update.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            momentum,
            betas: DEFAULT_ADAM_BETAS,
            eps: DEFAULT_ADAM_EPS,
            weight_decay,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            betas: DEFAULT_ADAM_BETAS,
            eps: DEFAULT_ADAM_EPS,
            weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("learning_rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::config(format!("adam betas must be in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("adam eps must be > 0, got {}", self.eps)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// One SGD update on a single tensor:
/// `g = grad + wd*param; v = momentum*v + g; param -= lr*v`.
pub fn sgd_step<T: Scalar>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p = *p - lr * *v;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// 1-based step number, used for bias correction.
    pub step: u64,
}

/// One bias-corrected Adam update on a single tensor, with weight decay
/// folded into the gradient.
pub fn adam_step<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], h: AdamHyper) {
    let (b1, b2) = h.betas;
    let c1 = 1.0 - b1.powf(h.step as f64);
    let c2 = 1.0 - b2.powf(h.step as f64);
    let step_size = T::lit(h.lr / c1);
    let c2_sqrt = T::lit(c2.sqrt());
    let (b1, b2, eps, wd) = (T::lit(b1), T::lit(b2), T::lit(h.eps), T::lit(h.weight_decay));
    let one = T::one();
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g + wd * *p;
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let denom = v.sqrt() / c2_sqrt + eps;
        *p = *p - step_size * *m / denom;
    }
}

/// SGD or Adam with per-parameter buffers aligned to a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    /// Velocity (SGD) or first moment (Adam).
    first: Vec<Vec<T>>,
    /// Second moment (Adam only; empty for SGD).
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect::<Vec<_>>();
        let second = match config.kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => zeros(),
        };
        Ok(Self {
            lr: config.lr,
            first: zeros(),
            second,
            step: 0,
            config,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Sets the learning rate used by subsequent steps (driven by a schedule).
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Named state buffers in a stable order, for checkpointing.
    pub fn buffers(&self) -> impl Iterator<Item = (&'static str, usize, &[T])> {
        let first = self.first.iter().enumerate().map(|(i, b)| ("first", i, b.as_slice()));
        let second = self.second.iter().enumerate().map(|(i, b)| ("second", i, b.as_slice()));
        first.chain(second)
    }

    /// Restores step count and buffers saved by [`Optimizer::buffers`].
    pub fn restore(&mut self, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) -> Result<()> {
        let check = |have: &[Vec<T>], got: &[Vec<T>], which: &str| -> Result<()> {
            if have.len() != got.len() || have.iter().zip(got).any(|(a, b)| a.len() != b.len()) {
                return Err(Error::Format(format!("optimizer {which} buffers do not match the model")));
            }
            Ok(())
        };
        check(&self.first, &first, "first")?;
        check(&self.second, &second, "second")?;
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update to every parameter using its current gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, model has {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        for (i, p) in params.iter_mut().enumerate() {
            if p.tensor.grad().is_none() {
                return Err(Error::Usage(format!("parameter {} has no gradient", p.name)));
            }
            let (data, grad) = p.tensor.data_and_grad_mut();
            match c.kind {
                OptimizerKind::Sgd => sgd_step(data, grad, &mut self.first[i], self.lr, c.momentum, c.weight_decay),
                OptimizerKind::Adam => {
                    let h = AdamHyper {
                        lr: self.lr,
                        betas: c.betas,
                        eps: c.eps,
                        weight_decay: c.weight_decay,
                        step: self.step,
                    };
                    adam_step(data, grad, &mut self.first[i], &mut self.second[i], h)
                }
            }
        }
        Ok(())
    }
}
