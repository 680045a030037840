use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

pub const DEFAULT_LOOKAHEAD_K: u64 = 5;
pub const DEFAULT_LOOKAHEAD_ALPHA: f64 = 0.5;

/// Slow weights that follow the inner optimiser's fast weights every `k`
/// steps: `slow += alpha * (fast - slow); fast = slow`.
#[derive(Clone, Debug)]
pub struct Lookahead<T> {
    k: u64,
    alpha: f64,
    counter: u64,
    slow: Vec<Vec<T>>,
}

impl<T: Scalar> Lookahead<T> {
    pub fn new(params: &ParamStore<T>, k: u64, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("lookahead_k must be >= 1"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config(format!("lookahead_alpha must be in (0, 1], got {alpha}")));
        }
        Ok(Self {
            k,
            alpha,
            counter: 0,
            slow: params.iter().map(|p| p.tensor.data().to_vec()).collect(),
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Inner steps seen so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn slow_weights(&self) -> &[Vec<T>] {
        &self.slow
    }

    pub fn restore(&mut self, counter: u64, slow: Vec<Vec<T>>) -> Result<()> {
        if slow.len() != self.slow.len() || slow.iter().zip(&self.slow).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Format("lookahead slow weights do not match the model".into()));
        }
        self.counter = counter;
        self.slow = slow;
        Ok(())
    }

    /// Call once after every inner optimiser step. Returns whether the slow
    /// weights were synchronised on this call.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> bool {
        self.counter += 1;
        if self.counter % self.k != 0 {
            return false;
        }
        let alpha = T::lit(self.alpha);
        for (p, slow) in params.iter_mut().zip(self.slow.iter_mut()) {
            let fast = p.tensor.data_mut();
            if self.alpha == 1.0 {
                // slow + (fast - slow) can differ from fast in the last bit.
                slow.copy_from_slice(fast);
            } else {
                for (s, &f) in slow.iter_mut().zip(fast.iter()) {
                    *s = *s + alpha * (f - *s);
                }
                fast.copy_from_slice(slow);
            }
        }
        true
    }
}
