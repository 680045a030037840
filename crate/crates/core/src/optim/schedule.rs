use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const ONECYCLE_DIV_FACTOR: f64 = 25.0;
pub const ONECYCLE_FINAL_DIV_FACTOR: f64 = 1e4;

/// Learning-rate policy. All kinds are evaluated per epoch except
/// [`Schedule::OneCycle`], which is evaluated per optimiser step.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Constant,
    /// `eta_min + (base - eta_min) * (1 + cos(pi * t / t_max)) / 2`.
    Cosine { t_max: usize, eta_min: f64 },
    /// `base * gamma^(t / step_size)`.
    Step { step_size: usize, gamma: f64 },
    /// `base * gamma^(number of milestones <= t)`.
    MultiStep { milestones: Vec<usize>, gamma: f64 },
    /// `base * gamma^t`.
    Exponential { gamma: f64 },
    /// Linear warmup from `max_lr / 25` to `max_lr` over the first
    /// `pct_start` of `total_steps`, then cosine decay to
    /// `max_lr / 25 / 1e4`.
    OneCycle { max_lr: f64, total_steps: usize, pct_start: f64 },
    /// Cosine annealing restarted after `t_0` epochs, each period `t_mult`
    /// times longer than the last.
    CosineWarmRestarts { t_0: usize, t_mult: usize, eta_min: f64 },
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Cosine { .. } => "cosine",
            Schedule::Step { .. } => "step",
            Schedule::MultiStep { .. } => "multistep",
            Schedule::Exponential { .. } => "exponential",
            Schedule::OneCycle { .. } => "onecycle",
            Schedule::CosineWarmRestarts { .. } => "cosine_warm_restarts",
        }
    }

    /// Whether `t` counts optimiser steps rather than epochs.
    pub fn per_batch(&self) -> bool {
        matches!(self, Schedule::OneCycle { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub schedule: Schedule,
}

fn cosine(lo: f64, hi: f64, t: f64, period: f64) -> f64 {
    lo + 0.5 * (hi - lo) * (1.0 + (PI * t / period).cos())
}

impl LrSchedule {
    pub fn new(base_lr: f64, schedule: Schedule) -> Result<Self> {
        let s = Self { base_lr, schedule };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.base_lr));
        }
        let gamma_ok = |g: f64| g.is_finite() && g > 0.0;
        match &self.schedule {
            Schedule::Constant => {}
            Schedule::Cosine { t_max, eta_min } => {
                if *t_max == 0 {
                    return bad("t_max must be >= 1".into());
                }
                if !(*eta_min >= 0.0 && *eta_min <= self.base_lr) {
                    return bad(format!("eta_min must be in [0, learning_rate], got {eta_min}"));
                }
            }
            Schedule::Step { step_size, gamma } => {
                if *step_size == 0 {
                    return bad("step_size must be >= 1".into());
                }
                if !gamma_ok(*gamma) {
                    return bad(format!("gamma must be > 0, got {gamma}"));
                }
            }
            Schedule::MultiStep { milestones, gamma } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return bad(format!("milestones must be strictly increasing, got {milestones:?}"));
                }
                if !gamma_ok(*gamma) {
                    return bad(format!("gamma must be > 0, got {gamma}"));
                }
            }
            Schedule::Exponential { gamma } => {
                if !gamma_ok(*gamma) {
                    return bad(format!("gamma must be > 0, got {gamma}"));
                }
            }
            Schedule::OneCycle {
                max_lr,
                total_steps,
                pct_start,
            } => {
                if !(max_lr.is_finite() && *max_lr > 0.0) {
                    return bad(format!("max_lr must be > 0, got {max_lr}"));
                }
                if *total_steps < 2 {
                    return bad(format!("total_steps must be >= 2, got {total_steps}"));
                }
                if !(*pct_start > 0.0 && *pct_start < 1.0) {
                    return bad(format!("pct_start must be in (0, 1), got {pct_start}"));
                }
            }
            Schedule::CosineWarmRestarts { t_0, t_mult, eta_min } => {
                if *t_0 == 0 || *t_mult == 0 {
                    return bad(format!("t_0 and t_mult must be >= 1, got {t_0} and {t_mult}"));
                }
                if !(*eta_min >= 0.0 && *eta_min <= self.base_lr) {
                    return bad(format!("eta_min must be in [0, learning_rate], got {eta_min}"));
                }
            }
        }
        Ok(())
    }

    /// Learning rate at epoch (or step, for one-cycle) `t`.
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        let base = self.base_lr;
        let lr = match &self.schedule {
            Schedule::Constant => base,
            Schedule::Cosine { t_max, eta_min } => cosine(*eta_min, base, t as f64, *t_max as f64),
            Schedule::Step { step_size, gamma } => base * gamma.powi((t / step_size) as i32),
            Schedule::MultiStep { milestones, gamma } => {
                base * gamma.powi(milestones.iter().filter(|&&m| m <= t).count() as i32)
            }
            Schedule::Exponential { gamma } => base * gamma.powi(t as i32),
            Schedule::OneCycle {
                max_lr,
                total_steps,
                pct_start,
            } => {
                if t >= *total_steps {
                    return Err(Error::Range(format!(
                        "one-cycle step {t} is past total_steps {total_steps}"
                    )));
                }
                let initial = max_lr / ONECYCLE_DIV_FACTOR;
                let min_lr = initial / ONECYCLE_FINAL_DIV_FACTOR;
                let warm_end = (pct_start * *total_steps as f64 - 1.0).max(0.0);
                let last = (*total_steps - 1) as f64;
                let t = t as f64;
                if t <= warm_end && warm_end > 0.0 {
                    initial + (max_lr - initial) * t / warm_end
                } else {
                    cosine(min_lr, *max_lr, t - warm_end, last - warm_end)
                }
            }
            Schedule::CosineWarmRestarts { t_0, t_mult, eta_min } => {
                let (mut t_cur, mut period) = (t, *t_0);
                while t_cur >= period {
                    t_cur -= period;
                    period *= t_mult;
                }
                cosine(*eta_min, base, t_cur as f64, period as f64)
            }
        };
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cos200() -> LrSchedule {
        LrSchedule::new(0.1, Schedule::Cosine { t_max: 200, eta_min: 0.0 }).unwrap()
    }

    #[test]
    fn cosine_endpoints_are_exact() {
        let s = cos200();
        assert_eq!(s.lr_at(0).unwrap(), 0.1);
        assert_eq!(s.lr_at(200).unwrap(), 0.0);
        assert_abs_diff_eq!(s.lr_at(100).unwrap(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn cosine_is_non_increasing() {
        for (base, eta_min, t_max) in [(0.1, 0.0, 200), (0.5, 0.01, 7), (1.0, 1.0, 3), (0.2, 0.1, 1)] {
            let s = LrSchedule::new(base, Schedule::Cosine { t_max, eta_min }).unwrap();
            let lrs: Vec<f64> = (0..=t_max).map(|t| s.lr_at(t).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "{lrs:?}");
            assert_eq!(lrs[t_max], eta_min);
        }
    }

    #[test]
    fn step_decay() {
        let s = LrSchedule::new(1.0, Schedule::Step { step_size: 3, gamma: 0.1 }).unwrap();
        let lrs: Vec<f64> = (0..7).map(|t| s.lr_at(t).unwrap()).collect();
        assert_eq!(lrs[..3], [1.0; 3]);
        assert_abs_diff_eq!(lrs[3], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(lrs[6], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn multistep_decay() {
        let s = LrSchedule::new(
            0.1,
            Schedule::MultiStep {
                milestones: vec![2, 5],
                gamma: 0.5,
            },
        )
        .unwrap();
        let lrs: Vec<f64> = (0..7).map(|t| s.lr_at(t).unwrap()).collect();
        assert_eq!(lrs, vec![0.1, 0.1, 0.05, 0.05, 0.05, 0.025, 0.025]);
    }

    #[test]
    fn exponential_decay() {
        let s = LrSchedule::new(2.0, Schedule::Exponential { gamma: 0.5 }).unwrap();
        assert_eq!(s.lr_at(3).unwrap(), 0.25);
    }

    #[test]
    fn onecycle_shape() {
        let s = LrSchedule::new(
            0.1,
            Schedule::OneCycle {
                max_lr: 1.0,
                total_steps: 101,
                pct_start: 0.5,
            },
        )
        .unwrap();
        // Warmup ends at step 0.5 * 101 - 1 = 49.5.
        assert_abs_diff_eq!(s.lr_at(0).unwrap(), 0.04, epsilon = 1e-15);
        let lrs: Vec<f64> = (0..101).map(|t| s.lr_at(t).unwrap()).collect();
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.99 && peak <= 1.0);
        assert!(lrs[..49].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[50..].windows(2).all(|w| w[1] < w[0]));
        assert_abs_diff_eq!(lrs[100], 0.04 / 1e4, epsilon = 1e-15);
        assert!(lrs.iter().all(|&lr| lr > 0.0));
        assert!(matches!(s.lr_at(101), Err(Error::Range(_))));
    }

    #[test]
    fn warm_restarts_periods_grow() {
        let s = LrSchedule::new(
            1.0,
            Schedule::CosineWarmRestarts {
                t_0: 2,
                t_mult: 2,
                eta_min: 0.0,
            },
        )
        .unwrap();
        // Restarts at t = 0, 2, 6, 14.
        for t in [0, 2, 6, 14] {
            assert_eq!(s.lr_at(t).unwrap(), 1.0, "t = {t}");
        }
        assert_abs_diff_eq!(s.lr_at(1).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr_at(4).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr_at(10).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn warm_restarts_constant_period() {
        let s = LrSchedule::new(
            0.1,
            Schedule::CosineWarmRestarts {
                t_0: 3,
                t_mult: 1,
                eta_min: 0.0,
            },
        )
        .unwrap();
        for t in 0..3 {
            assert_eq!(s.lr_at(t).unwrap(), s.lr_at(t + 3).unwrap());
        }
    }

    #[test]
    fn emitted_rates_positive_within_horizon() {
        let schedules = [
            Schedule::Cosine { t_max: 10, eta_min: 1e-4 },
            Schedule::Step { step_size: 2, gamma: 0.3 },
            Schedule::MultiStep {
                milestones: vec![3, 6],
                gamma: 0.1,
            },
            Schedule::Exponential { gamma: 0.9 },
            Schedule::CosineWarmRestarts {
                t_0: 3,
                t_mult: 2,
                eta_min: 1e-4,
            },
        ];
        for sch in schedules {
            let s = LrSchedule::new(0.1, sch).unwrap();
            assert!((0..10).all(|t| {
                let lr = s.lr_at(t).unwrap();
                lr > 0.0 && lr.is_finite()
            }));
        }
    }

    #[test]
    fn validation_names_the_problem() {
        let e = LrSchedule::new(0.1, Schedule::Cosine { t_max: 0, eta_min: 0.0 }).unwrap_err();
        assert!(e.to_string().contains("t_max"));
        assert!(LrSchedule::new(0.0, Schedule::Constant).is_err());
        assert!(LrSchedule::new(
            0.1,
            Schedule::MultiStep {
                milestones: vec![5, 5],
                gamma: 0.1
            }
        )
        .is_err());
    }
}
